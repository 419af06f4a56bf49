"""Binary pairwise Markov random fields and the graph/model corpus.

A model assigns to every state ``x in {+1, -1}^n`` the unnormalized
log-probability ``b.x + sum_{(i,j) in E} J_ij x_i x_j``; each unordered
edge contributes exactly once.
"""

from __future__ import annotations

import enum
import hashlib
import json
import math
import os
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

FORMAT_VERSION = 1
ER_RETRY_CAP = 10_000


class ConstructionError(ValueError):
    """A structure cannot be built for the requested size."""


class ConnectivityError(RuntimeError):
    """Rejection sampling did not produce a connected graph."""


def _is_connected(n: int, edges: Iterable[tuple[int, int]]) -> bool:
    adj: list[list[int]] = [[] for _ in range(n)]
    for i, j in edges:
        adj[i].append(j)
        adj[j].append(i)
    seen = [False] * n
    seen[0] = True
    stack = [0]
    count = 1
    while stack:
        v = stack.pop()
        for w in adj[v]:
            if not seen[w]:
                seen[w] = True
                count += 1
                stack.append(w)
    return count == n


@dataclass(frozen=True)
class GraphTopology:
    """Undirected simple graph on nodes ``0..n-1``; edges stored as (min, max)."""

    n: int
    edges: tuple[tuple[int, int], ...]
    connected: bool | None = None

    def __post_init__(self):
        if self.n < 1:
            raise ValueError(f"node count must be >= 1, got {self.n}")
        canon = []
        seen = set()
        for e in self.edges:
            i, j = int(e[0]), int(e[1])
            if i == j:
                raise ValueError(f"self-loop at node {i}")
            if not (0 <= i < self.n and 0 <= j < self.n):
                raise ValueError(f"edge ({i}, {j}) has an endpoint outside [0, {self.n})")
            key = (min(i, j), max(i, j))
            if key in seen:
                raise ValueError(f"duplicate edge {key}")
            seen.add(key)
            canon.append(key)
        object.__setattr__(self, "edges", tuple(canon))
        if self.connected and not _is_connected(self.n, self.edges):
            raise ValueError("topology flagged connected but traversal disagrees")

    @cached_property
    def adjacency(self) -> tuple[tuple[int, ...], ...]:
        nbrs: list[list[int]] = [[] for _ in range(self.n)]
        for i, j in self.edges:
            nbrs[i].append(j)
            nbrs[j].append(i)
        return tuple(tuple(sorted(a)) for a in nbrs)

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    def is_connected(self) -> bool:
        return _is_connected(self.n, self.edges)

    def is_tree(self) -> bool:
        return self.num_edges == self.n - 1 and self.is_connected()

    def cycle_rank(self) -> int:
        """Number of independent cycles, ``|E| - n + components``."""
        comps = 0
        seen = [False] * self.n
        for s in range(self.n):
            if seen[s]:
                continue
            comps += 1
            seen[s] = True
            stack = [s]
            while stack:
                v = stack.pop()
                for w in self.adjacency[v]:
                    if not seen[w]:
                        seen[w] = True
                        stack.append(w)
        return self.num_edges - self.n + comps

    def edge_index(self) -> dict[tuple[int, int], int]:
        return {e: k for k, e in enumerate(self.edges)}


class StructureKind(str, enum.Enum):
    """The 13 classic training structures.

    The five ``dense_*``/``complete`` kinds are fixed Erdos-Renyi-style
    templates drawn once with a seed derived from (kind, n), so they are as
    deterministic as the hand-built families.
    """

    CHAIN = "chain"
    STAR = "star"
    BINARY_TREE = "binary_tree"
    CYCLE = "cycle"
    LADDER = "ladder"
    GRID = "grid"
    BARBELL = "barbell"
    WHEEL = "wheel"
    DENSE_30 = "dense_30"
    DENSE_50 = "dense_50"
    DENSE_70 = "dense_70"
    DENSE_85 = "dense_85"
    COMPLETE = "complete"


CLASSIC_KINDS: tuple[StructureKind, ...] = tuple(StructureKind)

_TEMPLATE_DENSITY = {
    StructureKind.DENSE_30: 0.30,
    StructureKind.DENSE_50: 0.50,
    StructureKind.DENSE_70: 0.70,
    StructureKind.DENSE_85: 0.85,
}
_TEMPLATE_SEED = 20180730


def _path(nodes: Sequence[int]) -> list[tuple[int, int]]:
    return [(nodes[k], nodes[k + 1]) for k in range(len(nodes) - 1)]


def _clique(nodes: Sequence[int]) -> list[tuple[int, int]]:
    return [(a, b) for x, a in enumerate(nodes) for b in nodes[x + 1:]]


def build_topology(kind: StructureKind | str, n: int) -> GraphTopology:
    """Deterministic topology for a classic structure kind at size ``n``."""
    kind = StructureKind(kind)
    if n < 2:
        raise ConstructionError(f"{kind.value} needs n >= 2, got {n}")
    nodes = list(range(n))
    if kind is StructureKind.CHAIN:
        edges = _path(nodes)
    elif kind is StructureKind.STAR:
        edges = [(0, i) for i in range(1, n)]
    elif kind is StructureKind.BINARY_TREE:
        edges = [((i - 1) // 2, i) for i in range(1, n)]
    elif kind is StructureKind.CYCLE:
        if n < 3:
            raise ConstructionError(f"cycle needs n >= 3, got {n}")
        edges = _path(nodes) + [(0, n - 1)]
    elif kind is StructureKind.LADDER:
        if n < 4:
            raise ConstructionError(f"ladder needs n >= 4, got {n}")
        # Top rail 0..k-1, bottom rail k..n-1; odd n leaves the last top node without a rung.
        k = (n + 1) // 2
        top, bottom = nodes[:k], nodes[k:]
        edges = _path(top) + _path(bottom) + [(top[i], bottom[i]) for i in range(len(bottom))]
    elif kind is StructureKind.GRID:
        side = math.isqrt(n)
        if side * side != n or side < 2:
            raise ConstructionError(f"grid needs a square n >= 4, got {n}")
        edges = []
        for r in range(side):
            for c in range(side):
                v = r * side + c
                if c + 1 < side:
                    edges.append((v, v + 1))
                if r + 1 < side:
                    edges.append((v, v + side))
    elif kind is StructureKind.BARBELL:
        c = (n - 1) // 2
        if c < 3:
            raise ConstructionError(f"barbell needs n >= 7, got {n}")
        left = nodes[:c]
        right = nodes[n - c:]
        bridge = nodes[c - 1:n - c + 1]
        edges = _clique(left) + _clique(right) + _path(bridge)
    elif kind is StructureKind.WHEEL:
        if n < 4:
            raise ConstructionError(f"wheel needs n >= 4, got {n}")
        rim = nodes[1:]
        edges = [(0, i) for i in rim] + _path(rim) + [(rim[0], rim[-1])]
    elif kind is StructureKind.COMPLETE:
        edges = _clique(nodes)
    else:
        q = _TEMPLATE_DENSITY[kind]
        rng = np.random.default_rng([_TEMPLATE_SEED, CLASSIC_KINDS.index(kind), n])
        return sample_erdos_renyi_connected(n, q, rng)
    return GraphTopology(n, tuple(edges), connected=True)


def sample_erdos_renyi_connected(
    n: int, q: float, rng: np.random.Generator, retry_cap: int = ER_RETRY_CAP
) -> GraphTopology:
    """Draw G(n, q) and reject until connected."""
    if n < 2:
        raise ValueError(f"n must be >= 2, got {n}")
    if not 0.0 < q <= 1.0:
        raise ValueError(f"q must lie in (0, 1], got {q}")
    pairs = [(i, j) for i in range(n) for j in range(i + 1, n)]
    for _ in range(retry_cap):
        keep = rng.random(len(pairs)) < q
        edges = [p for p, k in zip(pairs, keep) if k]
        if len(edges) >= n - 1 and _is_connected(n, edges):
            return GraphTopology(n, tuple(edges), connected=True)
    raise ConnectivityError(
        f"no connected G(n={n}, q={q}) after {retry_cap} draws"
    )


@dataclass(frozen=True)
class BinaryMRF:
    topology: GraphTopology
    J: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        J = np.asarray(self.J, dtype=np.float64).reshape(-1)
        b = np.asarray(self.b, dtype=np.float64).reshape(-1)
        if J.shape[0] != self.topology.num_edges:
            raise ValueError(f"expected {self.topology.num_edges} couplings, got {J.shape[0]}")
        if b.shape[0] != self.topology.n:
            raise ValueError(f"expected {self.topology.n} biases, got {b.shape[0]}")
        if not (np.all(np.isfinite(J)) and np.all(np.isfinite(b))):
            raise ValueError("model parameters must be finite")
        J.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "J", J)
        object.__setattr__(self, "b", b)

    @property
    def n(self) -> int:
        return self.topology.n

    @property
    def edges(self) -> tuple[tuple[int, int], ...]:
        return self.topology.edges

    @classmethod
    def from_edges(cls, n: int, edges, J, b) -> "BinaryMRF":
        return cls(GraphTopology(n, tuple(map(tuple, edges))), J, b)

    def permuted(self, perm: Sequence[int]) -> "BinaryMRF":
        """Relabel variable ``i`` as ``perm[i]``."""
        perm = list(perm)
        new_edges = [(perm[i], perm[j]) for i, j in self.edges]
        order = sorted(range(len(new_edges)), key=lambda k: tuple(sorted(new_edges[k])))
        edges = tuple(tuple(sorted(new_edges[k])) for k in order)
        J = self.J[order]
        b = np.empty_like(self.b)
        b[perm] = self.b
        return BinaryMRF(GraphTopology(self.n, edges), J, b)

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "edges": [list(e) for e in self.edges],
            "J": [float(v) for v in self.J],
            "b": [float(v) for v in self.b],
        }

    def __eq__(self, other):
        if not isinstance(other, BinaryMRF):
            return NotImplemented
        return (
            self.topology.n == other.topology.n
            and self.edges == other.edges
            and np.array_equal(self.J, other.J)
            and np.array_equal(self.b, other.b)
        )

    __hash__ = None


def sample_mrf(topology: GraphTopology, rng: np.random.Generator,
               coupling_std: float = 1.0, bias_std: float = 0.25) -> BinaryMRF:
    """Couplings ~ N(0, 1) per edge, biases ~ N(0, 1/16) per node."""
    J = rng.normal(0.0, coupling_std, size=topology.num_edges)
    b = rng.normal(0.0, bias_std, size=topology.n)
    return BinaryMRF(topology, J, b)


@dataclass(frozen=True)
class LabeledModel:
    """A model together with its exact marginals ``p_i(+1)`` and MAP state."""

    mrf: BinaryMRF
    marginals_p1: np.ndarray
    map_state: np.ndarray
    structure: str = ""

    def to_dict(self) -> dict:
        d = {"format_version": FORMAT_VERSION}
        d.update(self.mrf.to_dict())
        d["structure"] = self.structure
        d["truth"] = {
            "marginals_p1": [float(v) for v in self.marginals_p1],
            "map_state": [int(v) for v in self.map_state],
        }
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "LabeledModel":
        mrf = BinaryMRF.from_edges(d["n"], d["edges"], d["J"], d["b"])
        truth = d.get("truth")
        if truth is None:
            raise ValueError("model file carries no ground truth")
        return cls(
            mrf,
            np.asarray(truth["marginals_p1"], dtype=np.float64),
            np.asarray(truth["map_state"], dtype=np.int64),
            d.get("structure", ""),
        )


def label(mrf: BinaryMRF, structure: str = "") -> LabeledModel:
    from .oracle import enumerate_mrf

    res = enumerate_mrf(mrf)
    return LabeledModel(mrf, res.marginals_p1, res.map_state, structure)


def save_model(model: LabeledModel, path: str | os.PathLike) -> None:
    Path(path).write_text(json.dumps(model.to_dict()))


def load_model(path: str | os.PathLike) -> LabeledModel:
    return LabeledModel.from_dict(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class DatasetSpec:
    """Which structures, how many models each, and the train:val:test ratio.

    ``models_per_structure`` counts training models; validation and test
    counts scale by ``ratio``.
    """

    kinds: tuple[str, ...] = tuple(k.value for k in CLASSIC_KINDS)
    models_per_structure: int = 100
    ratio: tuple[int, int, int] = (10, 2, 1)
    n: int = 9

    def split_counts(self) -> tuple[int, int, int]:
        r_tr, r_va, r_te = self.ratio
        m = self.models_per_structure
        if m * r_va % r_tr or m * r_te % r_tr:
            raise ValueError(f"{m} models per structure do not split {self.ratio} evenly")
        return m, m * r_va // r_tr, m * r_te // r_tr

    def to_dict(self) -> dict:
        return {
            "kinds": list(self.kinds),
            "models_per_structure": self.models_per_structure,
            "ratio": list(self.ratio),
            "n": self.n,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetSpec":
        return cls(tuple(d["kinds"]), int(d["models_per_structure"]),
                   tuple(d["ratio"]), int(d["n"]))


SPLITS = ("train", "validation", "test")


@dataclass
class Dataset:
    spec: DatasetSpec
    seed: int
    train: list[LabeledModel] = field(default_factory=list)
    validation: list[LabeledModel] = field(default_factory=list)
    test: list[LabeledModel] = field(default_factory=list)

    def split(self, name: str) -> list[LabeledModel]:
        return getattr(self, name)

    def manifest(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "seed": self.seed,
            "spec": self.spec.to_dict(),
            "counts": {s: len(self.split(s)) for s in SPLITS},
        }

    def content_hash(self) -> str:
        h = hashlib.sha256()
        for s in SPLITS:
            for m in self.split(s):
                h.update(json.dumps(m.to_dict(), sort_keys=True).encode())
        return h.hexdigest()

    def save(self, root: str | os.PathLike) -> Path:
        root = Path(root)
        manifest = self.manifest()
        manifest["paths"] = {}
        for s in SPLITS:
            (root / s).mkdir(parents=True, exist_ok=True)
            rels = []
            for k, m in enumerate(self.split(s)):
                rel = f"{s}/{k:06d}.json"
                save_model(m, root / rel)
                rels.append(rel)
            manifest["paths"][s] = rels
        out = root / "manifest.json"
        out.write_text(json.dumps(manifest, indent=2))
        return out

    @classmethod
    def load(cls, root: str | os.PathLike) -> "Dataset":
        root = Path(root)
        if root.is_file():
            root = root.parent
        manifest = json.loads((root / "manifest.json").read_text())
        ds = cls(DatasetSpec.from_dict(manifest["spec"]), int(manifest["seed"]))
        for s in SPLITS:
            ds.split(s).extend(load_model(root / rel) for rel in manifest["paths"][s])
        return ds


def model_rng(seed: int, *key: int) -> np.random.Generator:
    """Independent generator for one model, derived from (seed, *key)."""
    return np.random.default_rng([seed, *key])


def generate_dataset(spec: DatasetSpec, seed: int) -> Dataset:
    """Sample and label every model of every split.

    Everything is computed in memory; an oracle failure raises before a
    caller gets the chance to write anything.
    """
    counts = spec.split_counts()
    ds = Dataset(spec, seed)
    for k_idx, kind in enumerate(spec.kinds):
        topo = build_topology(kind, spec.n)
        for s_idx, (split, count) in enumerate(zip(SPLITS, counts)):
            for m_idx in range(count):
                mrf = sample_mrf(topo, model_rng(seed, k_idx, s_idx, m_idx))
                ds.split(split).append(label(mrf, StructureKind(kind).value))
    return ds
