"""Baseline inference: sum-product BP, max-product BP, mean field, TRBP.

Messages live on directed edges. Undirected edge ``e = (i, j)`` owns
directed edges ``2e`` (i -> j) and ``2e + 1`` (j -> i); each message is a
normalized pair ``(mu(+1), mu(-1))`` over the destination variable.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from . import kernels
from .model import BinaryMRF, GraphTopology

TIE_TOL = 1e-12


@dataclass(frozen=True)
class FixedPointConfig:
    """Iteration controls. ``damping=None`` picks 0 on trees and 0.5 otherwise."""

    max_iters: int = 200
    tol: float = 1e-8
    damping: float | None = None

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.tol <= 0:
            raise ValueError("tol must be positive")
        if self.damping is not None and not 0.0 <= self.damping < 1.0:
            raise ValueError("damping must lie in [0, 1)")

    def damping_for(self, topology: GraphTopology) -> float:
        if self.damping is not None:
            return self.damping
        return 0.0 if topology.cycle_rank() == 0 else 0.5


@dataclass
class BaselineResult:
    marginals_p1: np.ndarray | None
    map_state: np.ndarray | None
    converged: bool
    iterations: int
    residuals: np.ndarray
    messages: np.ndarray | None = field(default=None, repr=False)


@dataclass(frozen=True)
class _Layout:
    src: np.ndarray
    dst: np.ndarray
    rev: np.ndarray
    excl: np.ndarray
    inc: np.ndarray
    nbr: np.ndarray
    edge_of_nbr: np.ndarray


def _pad(rows: list[list[int]], fill: int = -1) -> np.ndarray:
    width = max((len(r) for r in rows), default=0)
    out = np.full((len(rows), max(width, 1)), fill, dtype=np.int64)
    for k, r in enumerate(rows):
        out[k, :len(r)] = r
    return out


@lru_cache(maxsize=512)
def _layout(topology: GraphTopology) -> _Layout:
    n = topology.n
    src, dst = [], []
    for i, j in topology.edges:
        src += [i, j]
        dst += [j, i]
    src_a = np.array(src, dtype=np.int64)
    dst_a = np.array(dst, dtype=np.int64)
    rev = np.arange(len(src), dtype=np.int64) ^ 1
    incoming: list[list[int]] = [[] for _ in range(n)]
    for d, t in enumerate(dst):
        incoming[t].append(d)
    excl = [[k for k in incoming[src[d]] if k != (d ^ 1)] for d in range(len(src))]
    nbr: list[list[int]] = [[] for _ in range(n)]
    edge_of: list[list[int]] = [[] for _ in range(n)]
    for e, (i, j) in enumerate(topology.edges):
        nbr[i].append(j)
        edge_of[i].append(e)
        nbr[j].append(i)
        edge_of[j].append(e)
    return _Layout(src_a, dst_a, rev, _pad(excl), _pad(incoming), _pad(nbr), _pad(edge_of))


def _backend(name: str | None):
    return kernels.impl if name is None else kernels.load(name)


def _check_finite(arr: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise FloatingPointError(f"non-finite {what}")


def bp_sum_product(mrf: BinaryMRF, cfg: FixedPointConfig = FixedPointConfig(),
                   backend: str | None = None) -> BaselineResult:
    k = _backend(backend)
    lay = _layout(mrf.topology)
    Jd = np.repeat(mrf.J, 2)
    msgs, res, conv = k.bp_messages(lay.src, lay.excl, Jd, mrf.b, False,
                                    cfg.damping_for(mrf.topology), cfg.tol, cfg.max_iters)
    bel = k.beliefs(lay.inc, msgs, mrf.b, None)
    _check_finite(bel, "beliefs")
    return BaselineResult(bel[:, 0].copy(), None, conv, len(res), res, msgs)


def trbp(mrf: BinaryMRF, rho=None, cfg: FixedPointConfig = FixedPointConfig(),
         backend: str | None = None) -> BaselineResult:
    """Tree-reweighted BP with per-edge appearance probabilities ``rho``.

    ``rho=None`` uses the uniform choice ``(n - 1) / |E|``.
    """
    if rho is None:
        rho = edge_appearance_probs(mrf.topology)
    rho = np.asarray(rho, dtype=np.float64)
    if rho.shape != (mrf.topology.num_edges,):
        raise ValueError(f"rho has shape {rho.shape}, expected ({mrf.topology.num_edges},)")
    if np.any(rho <= 0.0) or np.any(rho > 1.0):
        raise ValueError("edge appearance probabilities must lie in (0, 1]")
    k = _backend(backend)
    lay = _layout(mrf.topology)
    Jd = np.repeat(mrf.J, 2)
    rho_d = np.repeat(rho, 2)
    msgs, res, conv = k.trbp_messages(lay.src, lay.excl, lay.rev, Jd, mrf.b, rho_d,
                                      cfg.damping_for(mrf.topology), cfg.tol, cfg.max_iters)
    bel = k.beliefs(lay.inc, msgs, mrf.b, rho_d)
    _check_finite(bel, "beliefs")
    return BaselineResult(bel[:, 0].copy(), None, conv, len(res), res, msgs)


def _decode_max_marginals(mrf: BinaryMRF, msgs: np.ndarray, bel: np.ndarray) -> np.ndarray:
    """Per-node argmax with +1 on ties; tied nodes are resolved against an
    already-decoded neighbor so that tree MAPs stay globally consistent."""
    lay = _layout(mrf.topology)
    n = mrf.n
    x = np.zeros(n, dtype=np.int64)
    tied = np.abs(bel[:, 0] - bel[:, 1]) <= TIE_TOL * np.maximum(bel[:, 0], bel[:, 1])
    for i in range(n):
        if not tied[i]:
            x[i] = 1 if bel[i, 0] > bel[i, 1] else -1
    pending = sorted(np.flatnonzero(tied).tolist())
    while pending:
        pick = None
        for j in pending:
            decided = [(i, e) for i, e in zip(lay.nbr[j], lay.edge_of_nbr[j])
                       if i >= 0 and x[i] != 0]
            if decided:
                pick = (j, min(decided))
                break
        if pick is None:
            x[pending[0]] = 1
            pending.pop(0)
            continue
        j, (i, e) = pick
        # Score x_j given x_i: coupling, bias, and messages into j except from i.
        from_i = 2 * e if mrf.edges[e][0] == i else 2 * e + 1
        score = np.array([mrf.b[j], -mrf.b[j]])
        score += mrf.J[e] * x[i] * np.array([1.0, -1.0])
        for d in lay.inc[j]:
            if d >= 0 and d != from_i:
                score += np.log(msgs[d])
        x[j] = 1 if score[0] >= score[1] - TIE_TOL * max(1.0, abs(score[1])) else -1
        pending.remove(j)
    return x


def bp_max_product(mrf: BinaryMRF, cfg: FixedPointConfig = FixedPointConfig(),
                   backend: str | None = None) -> BaselineResult:
    k = _backend(backend)
    lay = _layout(mrf.topology)
    Jd = np.repeat(mrf.J, 2)
    msgs, res, conv = k.bp_messages(lay.src, lay.excl, Jd, mrf.b, True,
                                    cfg.damping_for(mrf.topology), cfg.tol, cfg.max_iters)
    bel = k.beliefs(lay.inc, msgs, mrf.b, None)
    _check_finite(bel, "max-marginals")
    return BaselineResult(None, _decode_max_marginals(mrf, msgs, bel), conv, len(res), res, msgs)


def mean_field(mrf: BinaryMRF, cfg: FixedPointConfig = FixedPointConfig(),
               backend: str | None = None) -> BaselineResult:
    k = _backend(backend)
    lay = _layout(mrf.topology)
    nbr_J = np.where(lay.edge_of_nbr >= 0, mrf.J[np.maximum(lay.edge_of_nbr, 0)], 0.0) \
        if mrf.topology.num_edges else np.zeros(lay.nbr.shape)
    m, res, conv = k.mean_field(lay.nbr, nbr_J, mrf.b, cfg.damping_for(mrf.topology),
                                cfg.tol, cfg.max_iters)
    # Saturated magnetizations would give marginals of exactly 0 or 1.
    p = np.clip((1.0 + m) / 2.0, 1e-16, 1.0 - 1e-16)
    return BaselineResult(p, None, conv, len(res), res)


def mean_field_decode(mrf: BinaryMRF, cfg: FixedPointConfig = FixedPointConfig()) -> np.ndarray:
    """MAP guess from mean-field marginals; ties go to +1."""
    p = mean_field(mrf, cfg).marginals_p1
    return np.where(p >= 0.5, 1, -1)


def _random_walk_tree(topology: GraphTopology, rng: np.random.Generator) -> list[int]:
    """Uniform spanning tree by the Aldous-Broder random walk; returns edge ids."""
    adj = topology.adjacency
    eidx = topology.edge_index()
    visited = np.zeros(topology.n, dtype=bool)
    v = int(rng.integers(topology.n))
    visited[v] = True
    remaining = topology.n - 1
    tree = []
    while remaining:
        w = adj[v][int(rng.integers(len(adj[v])))]
        if not visited[w]:
            visited[w] = True
            remaining -= 1
            tree.append(eidx[(min(v, w), max(v, w))])
        v = w
    return tree


def edge_appearance_probs(topology: GraphTopology, method: str = "uniform",
                          count: int = 1000, rng: np.random.Generator | None = None,
                          floor: float = 1e-3) -> np.ndarray:
    """Edge appearance probabilities for TRBP.

    ``uniform`` gives every edge ``(n - 1) / |E|``; ``spanning-tree-sample``
    uses edge frequencies over ``count`` uniform spanning trees.
    """
    if not topology.is_connected():
        raise ValueError("edge appearance probabilities need a connected topology")
    m = topology.num_edges
    if method == "uniform":
        return np.full(m, (topology.n - 1) / m) if m else np.zeros(0)
    if method != "spanning-tree-sample":
        raise ValueError(f"unknown method {method!r}")
    if rng is None:
        rng = np.random.default_rng()
    hits = np.zeros(m)
    for _ in range(count):
        hits[_random_walk_tree(topology, rng)] += 1.0
    return np.maximum(hits / count, floor)
