"""Exact inference by enumerating all ``2^n`` joint states."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .model import BinaryMRF

ENUMERATION_CAP = 20


class OracleCapError(ValueError):
    """Model too large for exhaustive enumeration."""


@dataclass(frozen=True)
class OracleResult:
    log_Z: float
    marginals_p1: np.ndarray
    map_state: np.ndarray
    map_log_score: float


def unnormalized_log_prob(mrf: BinaryMRF, x) -> float:
    """``b.x + sum_{(i,j) in E} J_ij x_i x_j`` for one state."""
    x = np.asarray(x)
    if x.shape != (mrf.n,):
        raise ValueError(f"state has shape {x.shape}, expected ({mrf.n},)")
    if not np.all((x == 1) | (x == -1)):
        raise ValueError("state entries must be +1 or -1")
    x = x.astype(np.float64)
    score = float(mrf.b @ x)
    for (i, j), J in zip(mrf.edges, mrf.J):
        score += J * x[i] * x[j]
    return score


def index_to_state(index: int, n: int) -> np.ndarray:
    """State at lexicographic position ``index`` (+1 ordered before -1)."""
    return np.array([1 - 2 * ((index >> (n - 1 - i)) & 1) for i in range(n)], dtype=np.int64)


def enumerate_mrf(mrf: BinaryMRF, cap: int = ENUMERATION_CAP,
                  backend: str | None = None) -> OracleResult:
    """Partition function, marginals and MAP state by brute force.

    The MAP tie-break is the lexicographically first maximizer.
    """
    if mrf.n > cap:
        raise OracleCapError(f"n={mrf.n} exceeds the enumeration cap of {cap}")
    k = kernels.impl if backend is None else kernels.load(backend)
    ei = np.array([e[0] for e in mrf.edges], dtype=np.int64)
    ej = np.array([e[1] for e in mrf.edges], dtype=np.int64)
    log_z, p_plus, map_index, map_score = k.enumerate_states(mrf.n, ei, ej, mrf.J, mrf.b)
    return OracleResult(float(log_z), np.asarray(p_plus), index_to_state(map_index, mrf.n),
                        float(map_score))
