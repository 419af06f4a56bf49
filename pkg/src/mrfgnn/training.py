"""Supervised training of GNN weights against exact marginals or MAP states."""

from __future__ import annotations

import json
import logging
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .autodiff import ParamStore, Tape, Tensor, adam_step
from .gnn import (GNNArchitecture, GNNGraph, GNNWeights, batch_graphs, build_gnn_graph,
                  forward, init_weights)
from .model import FORMAT_VERSION, Dataset, LabeledModel

log = logging.getLogger(__name__)

MARGINALS = "marginals"
MAP = "map"


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    window: int = 20
    max_epochs: int = 500
    batch_size: int = 10
    task: str = MARGINALS
    seed: int = 0
    clip_norm: float | None = None

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("learning rate must be positive")
        if self.window < 1 or self.batch_size < 1 or self.max_epochs < 1:
            raise ValueError("window, batch_size and max_epochs must be >= 1")
        if self.task not in (MARGINALS, MAP):
            raise ValueError(f"unknown task {self.task!r}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**d)


@dataclass
class TrainHistory:
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    val_kl: list[float] = field(default_factory=list)
    best_epoch: int = -1
    best_val_loss: float = float("inf")
    stop_reason: str = ""

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainHistory":
        return cls(**d)


class EarlyStopping:
    """Stop once ``window`` consecutive checks fail to beat the best loss."""

    def __init__(self, window: int):
        self.window = window
        self.best = float("inf")
        self.best_check = 0
        self.checks = 0

    def update(self, value: float) -> bool:
        """Record one check (1-based count); returns True when training should stop."""
        self.checks += 1
        if value < self.best:
            self.best = value
            self.best_check = self.checks
            return False
        return self.checks - self.best_check >= self.window

    @property
    def improved(self) -> bool:
        return self.best_check == self.checks


def targets_for(task: str, model: LabeledModel) -> np.ndarray:
    """Per-variable target probability of state +1."""
    if model.marginals_p1 is None or model.map_state is None:
        raise TrainingError("model carries no ground truth")
    if task == MARGINALS:
        return np.asarray(model.marginals_p1, dtype=np.float64)
    if task == MAP:
        return (np.asarray(model.map_state) == 1).astype(np.float64)
    raise ValueError(f"unknown task {task!r}")


def cross_entropy_loss(tape: Tape, logits: Tensor, q, weights=None) -> Tensor:
    """Binary cross-entropy summed over variables, from readout logits.

    ``-q log p - (1 - q) log(1 - p)`` with ``p = sigmoid(z)`` equals
    ``softplus(z) - q z``, which stays finite for saturated logits.
    ``weights`` scales each variable's term (batch averaging).
    """
    q = np.asarray(q, dtype=np.float64).reshape(-1, 1)
    if logits.shape != q.shape:
        raise ValueError(f"logits {logits.shape} vs targets {q.shape}")
    per_var = tape.sub(tape.softplus(logits), tape.mul(logits, q))
    if weights is not None:
        per_var = tape.mul(per_var, np.asarray(weights, dtype=np.float64).reshape(-1, 1))
    return tape.sum(per_var)


def bce(q: np.ndarray, p: np.ndarray) -> float:
    """Reference binary cross-entropy on probabilities (no tape)."""
    q = np.asarray(q, dtype=np.float64)
    p = np.asarray(p, dtype=np.float64)
    if np.any((p <= 0.0) | (p >= 1.0)):
        raise ValueError("predictions must lie strictly inside (0, 1)")
    return float(-np.sum(q * np.log(p) + (1.0 - q) * np.log1p(-p)))


def batch_loss(weights: GNNWeights, graphs: Sequence[GNNGraph], targets: Sequence[np.ndarray],
               tape: Tape) -> tuple[Tensor, GNNGraph]:
    """Mean over graphs of each graph's summed cross-entropy, on one tape."""
    big = batch_graphs(graphs)
    trace = forward(big, weights, tape)
    q = np.concatenate(targets)
    w = np.full(big.num_vars, 1.0 / len(graphs))
    return cross_entropy_loss(tape, trace.logits, q, w), big


def evaluate_loss(weights: GNNWeights, graphs: Sequence[GNNGraph], targets: Sequence[np.ndarray],
                  chunk: int = 64) -> float:
    """Mean per-graph loss, evaluated in fixed-order chunks."""
    total = 0.0
    for s in range(0, len(graphs), chunk):
        tape = Tape()
        loss, _ = batch_loss(weights, graphs[s:s + chunk], targets[s:s + chunk], tape)
        total += float(loss.value) * len(graphs[s:s + chunk])
    return total / len(graphs)


def evaluate_kl(weights: GNNWeights, graphs: Sequence[GNNGraph], models: Sequence[LabeledModel],
                chunk: int = 64) -> float:
    from .harness import kl_per_node

    vals = []
    for s in range(0, len(graphs), chunk):
        trace = forward(batch_graphs(graphs[s:s + chunk]), weights)
        p_true = np.concatenate([m.marginals_p1 for m in models[s:s + chunk]])
        vals.append(kl_per_node(p_true, trace.predictions))
    return float(np.mean(np.concatenate(vals)))


def _clip(store: ParamStore, max_norm: float) -> None:
    norm = float(np.sqrt(sum(float(np.sum(g * g)) for g in store.grads.values())))
    if norm > max_norm:
        scale = max_norm / norm
        for k in store.grads:
            store.grads[k] = store.grads[k] * scale


def train(dataset: Dataset, arch: GNNArchitecture, cfg: TrainConfig,
          init: GNNWeights | None = None) -> tuple[GNNWeights, TrainHistory]:
    """Adam on shuffled mini-batches with early stopping on validation loss.

    Returns the weights from the epoch with the best validation loss.
    """
    train_models = dataset.train
    val_models = dataset.validation or dataset.train
    if not train_models:
        raise TrainingError("empty training split")
    tr_graphs = [build_gnn_graph(m.mrf, arch.kind) for m in train_models]
    tr_targets = [targets_for(cfg.task, m) for m in train_models]
    va_graphs = [build_gnn_graph(m.mrf, arch.kind) for m in val_models]
    va_targets = [targets_for(cfg.task, m) for m in val_models]

    weights = init.copy() if init is not None else init_weights(arch, np.random.default_rng([cfg.seed, 0]))
    best = weights.copy()
    history = TrainHistory()
    stopper = EarlyStopping(cfg.window)
    for epoch in range(cfg.max_epochs):
        order = np.random.default_rng([cfg.seed, 1, epoch]).permutation(len(tr_graphs))
        epoch_loss = 0.0
        for b_idx, s in enumerate(range(0, len(order), cfg.batch_size)):
            idx = order[s:s + cfg.batch_size]
            tape = Tape()
            try:
                loss, _ = batch_loss(weights, [tr_graphs[i] for i in idx],
                                     [tr_targets[i] for i in idx], tape)
            except FloatingPointError as exc:
                raise TrainingError(f"non-finite values at epoch {epoch}, batch {b_idx}: {exc}") from exc
            value = float(loss.value)
            if not np.isfinite(value):
                raise TrainingError(f"non-finite loss at epoch {epoch}, batch {b_idx}")
            weights.store.zero_grad()
            tape.backward(loss, weights.store)
            if cfg.clip_norm is not None:
                _clip(weights.store, cfg.clip_norm)
            adam_step(weights.store, lr=cfg.lr)
            epoch_loss += value * len(idx)
        history.train_loss.append(epoch_loss / len(order))
        val = evaluate_loss(weights, va_graphs, va_targets)
        history.val_loss.append(val)
        if cfg.task == MARGINALS:
            history.val_kl.append(evaluate_kl(weights, va_graphs, val_models))
        stop = stopper.update(val)
        if stopper.improved:
            best = weights.copy()
            history.best_epoch = epoch
            history.best_val_loss = val
        log.info("epoch %d train %.6f val %.6f", epoch, history.train_loss[-1], val)
        if stop:
            history.stop_reason = f"no improvement in {cfg.window} checks"
            break
    else:
        history.stop_reason = "max epochs"
    return best, history


def save_checkpoint(path: str | os.PathLike, weights: GNNWeights, cfg: TrainConfig,
                    history: TrainHistory, extra: dict | None = None) -> None:
    d = weights.to_dict()
    d["format_version"] = FORMAT_VERSION
    d["train_config"] = cfg.to_dict()
    d["history"] = history.to_dict()
    if extra:
        d.update(extra)
    Path(path).write_text(json.dumps(d))


def load_checkpoint(path: str | os.PathLike) -> tuple[GNNWeights, dict]:
    d = json.loads(Path(path).read_text())
    return GNNWeights.from_dict(d), d
