"""Generalization protocol: condition corpora, metrics, reports.

Conditions I/II reuse the 13 classic structures at n=9/16; III/IV sweep
connected Erdos-Renyi graphs over q = 0.1..0.9 at n=9/16. Every method is
scored on the same oracle-labelled models.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from . import kernels
from .classical import (FixedPointConfig, bp_max_product, bp_sum_product, mean_field,
                        mean_field_decode, trbp)
from .gnn import GNNWeights, batch_graphs, build_gnn_graph, forward
from .model import (CLASSIC_KINDS, FORMAT_VERSION, LabeledModel, build_topology, label,
                    model_rng, sample_erdos_renyi_connected, sample_mrf)

KL_CLAMP = 1e-7
Q_GRID = tuple(round(0.1 * k, 1) for k in range(1, 10))
CSV_COLUMNS = ("condition", "cell", "method", "mean_kl", "std_kl", "map_var_acc",
               "map_state_acc", "n_models", "n_failures")

ORACLE = "oracle"
MF = "MF"
BP = "BP"
TRBP = "TRBP"
NODE_GNN = "node-GNN"
MSG_GNN = "msg-GNN"
METHODS = (ORACLE, MF, BP, TRBP, MSG_GNN, NODE_GNN)


@dataclass(frozen=True)
class Condition:
    ident: str
    n: int
    random_graphs: bool
    cells: tuple[str, ...]

    def cell_topologies(self, cell: str, count: int, seed: int, cell_idx: int):
        if not self.random_graphs:
            topo = build_topology(cell, self.n)
            return [topo] * count
        q = float(cell.split("=")[1])
        return [sample_erdos_renyi_connected(self.n, q, model_rng(seed, 7, _ID[self.ident], cell_idx, m, 0))
                for m in range(count)]


CONDITIONS = {
    "I": Condition("I", 9, False, tuple(k.value for k in CLASSIC_KINDS)),
    "II": Condition("II", 16, False, tuple(k.value for k in CLASSIC_KINDS)),
    "III": Condition("III", 9, True, tuple(f"q={q}" for q in Q_GRID)),
    "IV": Condition("IV", 16, True, tuple(f"q={q}" for q in Q_GRID)),
}
_ID = {"I": 1, "II": 2, "III": 3, "IV": 4}


def kl_per_node(p, p_hat, clamp: float = KL_CLAMP) -> np.ndarray:
    """``KL(p || p_hat)`` between Bernoulli marginals, ``p_hat`` clamped."""
    p = np.asarray(p, dtype=np.float64)
    q = np.clip(np.asarray(p_hat, dtype=np.float64), clamp, 1.0 - clamp)
    with np.errstate(divide="ignore", invalid="ignore"):
        a = np.where(p > 0, p * np.log(p / q), 0.0)
        b = np.where(p < 1, (1.0 - p) * np.log((1.0 - p) / (1.0 - q)), 0.0)
    return np.maximum(a + b, 0.0)


def generate_condition(cond: Condition | str, seed: int, models_per_cell: int = 100,
                       cells: Sequence[str] | None = None) -> dict[str, list[LabeledModel]]:
    """Oracle-labelled models for every cell of a condition."""
    cond = CONDITIONS[cond] if isinstance(cond, str) else cond
    out = {}
    for c_idx, cell in enumerate(cond.cells):
        if cells is not None and cell not in cells:
            continue
        topos = cond.cell_topologies(cell, models_per_cell, seed, c_idx)
        out[cell] = [label(sample_mrf(t, model_rng(seed, 7, _ID[cond.ident], c_idx, m, 1)), cell)
                     for m, t in enumerate(topos)]
    return out


def corpus_hash(cells: Mapping[str, Sequence[LabeledModel]]) -> str:
    h = hashlib.sha256()
    for cell, models in cells.items():
        h.update(cell.encode())
        for m in models:
            h.update(json.dumps(m.to_dict(), sort_keys=True).encode())
    return h.hexdigest()


def weights_hash(weights: GNNWeights) -> str:
    return hashlib.sha256(json.dumps(weights.to_dict(), sort_keys=True).encode()).hexdigest()


# -- methods ------------------------------------------------------------------

MarginalFn = Callable[[Sequence[LabeledModel]], list]
MapFn = Callable[[Sequence[LabeledModel]], list]


def _per_model(fn):
    def run(models):
        out = []
        for m in models:
            try:
                out.append(fn(m))
            except (FloatingPointError, ValueError, ArithmeticError) as exc:
                out.append(exc)
        return out
    return run


def _gnn_batch(weights: GNNWeights, chunk: int = 32):
    def run(models):
        out = []
        for s in range(0, len(models), chunk):
            part = models[s:s + chunk]
            big = batch_graphs([build_gnn_graph(m.mrf, weights.arch.kind) for m in part])
            pred = forward(big, weights).predictions
            for g in range(len(part)):
                out.append(pred[big.graph_of_var == g])
        return out
    return run


def _decode(p: np.ndarray) -> np.ndarray:
    return np.where(np.asarray(p) >= 0.5, 1, -1)


@dataclass
class MethodRunner:
    name: str
    marginals: MarginalFn | None = None
    map_states: MapFn | None = None


def build_methods(names: Sequence[str], checkpoints: Mapping[tuple[str, str], GNNWeights] | None = None,
                  cfg: FixedPointConfig = FixedPointConfig()) -> list[MethodRunner]:
    """Runners for method names; GNN runners need ``checkpoints[(name, task)]``
    with task ``"marginals"`` and/or ``"map"``."""
    checkpoints = checkpoints or {}
    runners = []
    for name in names:
        if name == ORACLE:
            runners.append(MethodRunner(name, lambda ms: [m.marginals_p1 for m in ms],
                                        lambda ms: [m.map_state for m in ms]))
        elif name == MF:
            runners.append(MethodRunner(name, _per_model(lambda m: mean_field(m.mrf, cfg).marginals_p1),
                                        _per_model(lambda m: mean_field_decode(m.mrf, cfg))))
        elif name == BP:
            runners.append(MethodRunner(name, _per_model(lambda m: bp_sum_product(m.mrf, cfg).marginals_p1),
                                        _per_model(lambda m: bp_max_product(m.mrf, cfg).map_state)))
        elif name == TRBP:
            runners.append(MethodRunner(name, _per_model(lambda m: trbp(m.mrf, None, cfg).marginals_p1)))
        elif name in (NODE_GNN, MSG_GNN):
            kind = "node-gnn" if name == NODE_GNN else "msg-gnn"
            marg = checkpoints.get((name, "marginals"))
            mapw = checkpoints.get((name, "map"))
            if marg is None and mapw is None:
                raise ValueError(f"{name} needs a checkpoint")
            for w in (marg, mapw):
                if w is not None and w.arch.kind != kind:
                    raise ValueError(f"{name} checkpoint has architecture {w.arch.kind}")
            m_fn = _gnn_batch(marg) if marg is not None else None
            if mapw is not None:
                inner = _gnn_batch(mapw)
                p_fn = lambda ms, inner=inner: [_decode(p) for p in inner(ms)]
            else:
                p_fn = None
            runners.append(MethodRunner(name, m_fn, p_fn))
        else:
            raise ValueError(f"unknown method {name!r}")
    return runners


# -- metrics -------------------------------------------------------------------

@dataclass
class MetricsRow:
    condition: str
    cell: str
    method: str
    mean_kl: float | None = None
    std_kl: float | None = None
    map_var_acc: float | None = None
    map_state_acc: float | None = None
    n_models: int = 0
    n_failures: int = 0


@dataclass
class MetricsReport:
    rows: list[MetricsRow] = field(default_factory=list)
    manifest: dict = field(default_factory=dict)
    traces: list[dict] = field(default_factory=list)

    def row(self, condition: str, cell: str, method: str) -> MetricsRow:
        for r in self.rows:
            if (r.condition, r.cell, r.method) == (condition, cell, method):
                return r
        raise KeyError((condition, cell, method))

    def to_dict(self) -> dict:
        return {"format_version": FORMAT_VERSION, "manifest": self.manifest,
                "rows": [asdict(r) for r in self.rows], "traces": self.traces}

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsReport":
        return cls([MetricsRow(**r) for r in d["rows"]], d["manifest"], d.get("traces", []))

    def __eq__(self, other):
        if not isinstance(other, MetricsReport):
            return NotImplemented
        return self.to_dict() == other.to_dict()


def eval_marginals(runner: MethodRunner, models: Sequence[LabeledModel]) -> dict:
    """Mean/std over models of the node-averaged KL; failures are counted, not scored."""
    outs = runner.marginals(models)
    per_model = []
    failures = 0
    for m, p_hat in zip(models, outs):
        if isinstance(p_hat, Exception):
            failures += 1
            continue
        per_model.append(float(np.mean(kl_per_node(m.marginals_p1, p_hat))))
    if not per_model:
        return {"mean_kl": None, "std_kl": None, "n_failures": failures}
    return {"mean_kl": float(np.mean(per_model)), "std_kl": float(np.std(per_model)),
            "n_failures": failures}


def eval_map(runner: MethodRunner, models: Sequence[LabeledModel]) -> dict:
    """Per-variable and whole-state agreement with the exact MAP."""
    outs = runner.map_states(models)
    var_hits = []
    state_hits = []
    failures = 0
    for m, x in zip(models, outs):
        if isinstance(x, Exception):
            failures += 1
            continue
        eq = np.asarray(x) == np.asarray(m.map_state)
        var_hits.append(float(np.mean(eq)))
        state_hits.append(float(np.all(eq)))
    if not var_hits:
        return {"map_var_acc": None, "map_state_acc": None, "n_failures": failures}
    return {"map_var_acc": float(np.mean(var_hits)), "map_state_acc": float(np.mean(state_hits)),
            "n_failures": failures}


def evaluate_cells(condition: str, cells: Mapping[str, Sequence[LabeledModel]],
                   runners: Sequence[MethodRunner]) -> list[MetricsRow]:
    rows = []
    for cell, models in cells.items():
        for r in runners:
            row = MetricsRow(condition, cell, r.name, n_models=len(models))
            fails = 0
            if r.marginals is not None:
                res = eval_marginals(r, models)
                row.mean_kl, row.std_kl = res["mean_kl"], res["std_kl"]
                fails = max(fails, res["n_failures"])
            if r.map_states is not None:
                res = eval_map(r, models)
                row.map_var_acc, row.map_state_acc = res["map_var_acc"], res["map_state_acc"]
                fails = max(fails, res["n_failures"])
            row.n_failures = fails
            rows.append(row)
    return rows


def trace_convergence(weights: GNNWeights, models: Sequence[LabeledModel], T_max: int | None = None,
                      chunk: int = 32) -> list[dict]:
    """Mean/std of ``||h^t - h^{t-1}||`` pooled over every GNN node of every model.

    One row per step t = 2..T_max (steps with a predecessor produced by the
    dynamics; the first step only leaves the all-zero start).
    """
    T_max = weights.arch.T if T_max is None else T_max
    pooled = [[] for _ in range(T_max)]
    for s in range(0, len(models), chunk):
        big = batch_graphs([build_gnn_graph(m.mrf, weights.arch.kind) for m in models[s:s + chunk]])
        d = forward(big, weights, T=T_max).deltas()
        for t in range(T_max):
            pooled[t].append(d[t])
    rows = []
    for t in range(1, T_max):
        v = np.concatenate(pooled[t]) if pooled[t] else np.zeros(0)
        rows.append({"t": t + 1, "mean": float(v.mean()) if v.size else 0.0,
                     "std": float(v.std()) if v.size else 0.0})
    return rows


def run_condition(cond: Condition | str, methods: Sequence[str],
                  checkpoints: Mapping[tuple[str, str], GNNWeights] | None = None,
                  seed: int = 0, models_per_cell: int = 100, cells: Sequence[str] | None = None,
                  cfg: FixedPointConfig = FixedPointConfig(),
                  corpus: Mapping[str, Sequence[LabeledModel]] | None = None,
                  trace_T: int | None = None) -> MetricsReport:
    """Generate (or reuse) the condition corpus, score every method, attach a manifest.

    ``trace_T`` adds convergence-trace rows for each GNN marginal checkpoint.
    """
    cond = CONDITIONS[cond] if isinstance(cond, str) else cond
    if corpus is None:
        corpus = generate_condition(cond, seed, models_per_cell, cells)
    runners = build_methods(methods, checkpoints, cfg)
    report = MetricsReport(evaluate_cells(cond.ident, corpus, runners))
    report.manifest = {
        "condition": cond.ident,
        "n": cond.n,
        "seed": seed,
        "models_per_cell": models_per_cell,
        "methods": list(methods),
        "kl_clamp": KL_CLAMP,
        "fixed_point": asdict(cfg),
        "kernel_backend": kernels.BACKEND,
        "corpus_hash": corpus_hash(corpus),
        "checkpoints": {f"{k[0]}:{k[1]}": weights_hash(w) for k, w in sorted((checkpoints or {}).items())},
    }
    if trace_T is not None:
        all_models = [m for ms in corpus.values() for m in ms]
        for (name, task), w in sorted((checkpoints or {}).items()):
            if task != "marginals" or name not in methods:
                continue
            for row in trace_convergence(w, all_models, trace_T):
                report.traces.append({"condition": cond.ident, "method": name, **row})
    return report


def merge_reports(reports: Sequence[MetricsReport]) -> MetricsReport:
    out = MetricsReport()
    out.manifest = {"parts": [r.manifest for r in reports]}
    for r in reports:
        out.rows.extend(r.rows)
        out.traces.extend(r.traces)
    return out


# -- output ---------------------------------------------------------------------

def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v) if math.isfinite(v) else str(v)
    return str(v)


def report_csv(report: MetricsReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in report.rows:
        w.writerow([_fmt(getattr(r, c)) for c in CSV_COLUMNS])
    return buf.getvalue()


def emit_report(report: MetricsReport, path: str | os.PathLike) -> tuple[Path, Path]:
    """Write ``<path>.csv`` and ``<path>.json``; output is a pure function of the report."""
    base = Path(path)
    if base.suffix in (".csv", ".json"):
        base = base.with_suffix("")
    csv_path = base.with_suffix(".csv")
    json_path = base.with_suffix(".json")
    csv_path.write_text(report_csv(report))
    json_path.write_text(json.dumps(report.to_dict(), indent=1, sort_keys=True))
    return csv_path, json_path


def load_report(path: str | os.PathLike) -> MetricsReport:
    p = Path(path)
    if p.suffix != ".json":
        p = p.with_suffix(".json")
    return MetricsReport.from_dict(json.loads(p.read_text()))
