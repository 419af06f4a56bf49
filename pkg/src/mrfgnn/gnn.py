"""node-GNN and msg-GNN: graph construction, unrolled forward pass, readout.

Both variants share one parameter layout: a message MLP, a GRU cell and a
readout MLP, each applied identically at every node/edge. Hidden states
start at zero and are updated for ``T`` synchronous rounds.

node-GNN
    one GNN node per variable; message ``i -> j`` is
    ``MLP(h_i, h_j, J_ij, b_i, b_j)``, summed at ``j``.
msg-GNN
    one GNN node per directed BP message ``i -> j``; its input is
    ``MLP(sum_{k in N_i \\ j} h_{k->i}, J_ij, b_i, b_j)``; variable ``i``
    reads out ``sum_{j in N_i} h_{j->i}``.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .autodiff import Index, ParamStore, ShapeError, Tape, Tensor
from .model import FORMAT_VERSION, BinaryMRF

NODE = "node-gnn"
MSG = "msg-gnn"
EDGE_FEATURES = 3


@dataclass(frozen=True)
class GNNArchitecture:
    kind: str = NODE
    D: int = 5
    P: int = 5
    T: int = 10
    mlp_widths: tuple[int, ...] = (64, 64)

    def __post_init__(self):
        if self.kind not in (NODE, MSG):
            raise ValueError(f"unknown GNN kind {self.kind!r}")
        if min(self.D, self.P) < 1 or self.T < 0:
            raise ValueError("D and P must be >= 1 and T >= 0")
        if any(w < 1 for w in self.mlp_widths):
            raise ValueError("MLP widths must be >= 1")
        object.__setattr__(self, "mlp_widths", tuple(int(w) for w in self.mlp_widths))

    @property
    def message_input(self) -> int:
        return (2 * self.D if self.kind == NODE else self.D) + EDGE_FEATURES

    def shapes(self) -> dict[str, tuple[int, ...]]:
        """Parameter name -> shape, in canonical order."""
        out: dict[str, tuple[int, ...]] = {}
        dims = [self.message_input, *self.mlp_widths, self.P]
        for k in range(len(dims) - 1):
            out[f"msg.W{k}"] = (dims[k], dims[k + 1])
            out[f"msg.b{k}"] = (dims[k + 1],)
        for gate in ("z", "r", "h"):
            out[f"gru.W{gate}"] = (self.P, self.D)
            out[f"gru.U{gate}"] = (self.D, self.D)
            out[f"gru.b{gate}"] = (self.D,)
        dims = [self.D, *self.mlp_widths, 1]
        for k in range(len(dims) - 1):
            out[f"out.W{k}"] = (dims[k], dims[k + 1])
            out[f"out.b{k}"] = (dims[k + 1],)
        return out

    def to_dict(self) -> dict:
        d = asdict(self)
        d["mlp_widths"] = list(self.mlp_widths)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "GNNArchitecture":
        return cls(d["kind"], int(d["D"]), int(d["P"]), int(d["T"]), tuple(d["mlp_widths"]))

    def with_T(self, T: int) -> "GNNArchitecture":
        return GNNArchitecture(self.kind, self.D, self.P, T, self.mlp_widths)


@dataclass
class GNNWeights:
    arch: GNNArchitecture
    store: ParamStore

    def __post_init__(self):
        self.check()

    def check(self) -> None:
        shapes = self.arch.shapes()
        names = self.store.names()
        if names != list(shapes):
            raise ShapeError(f"weights do not match architecture: {names[:4]}... vs {list(shapes)[:4]}...")
        for name, shape in shapes.items():
            if self.store[name].shape != shape:
                raise ShapeError(f"{name}: shape {self.store[name].shape} != expected {shape}")

    def to_dict(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "architecture": self.arch.to_dict(),
            "tensors": {
                name: {"shape": list(v.shape), "data": [float(x) for x in v.ravel()]}
                for name, v in self.store.params.items()
            },
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GNNWeights":
        arch = GNNArchitecture.from_dict(d["architecture"])
        store = ParamStore()
        for name, t in d["tensors"].items():
            store.add(name, np.asarray(t["data"], dtype=np.float64).reshape(t["shape"]))
        return cls(arch, store)

    def save(self, path: str | os.PathLike) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path: str | os.PathLike) -> "GNNWeights":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def copy(self) -> "GNNWeights":
        return GNNWeights(self.arch, self.store.copy())


def init_weights(arch: GNNArchitecture, rng: np.random.Generator | int) -> GNNWeights:
    """Glorot-uniform matrices, zero biases."""
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    store = ParamStore()
    for name, shape in arch.shapes().items():
        if len(shape) == 1:
            store.add(name, np.zeros(shape))
        else:
            s = np.sqrt(6.0 / (shape[0] + shape[1]))
            store.add(name, rng.uniform(-s, s, size=shape))
    return GNNWeights(arch, store)


def zero_weights(arch: GNNArchitecture) -> GNNWeights:
    store = ParamStore()
    for name, shape in arch.shapes().items():
        store.add(name, np.zeros(shape))
    return GNNWeights(arch, store)


@dataclass
class GNNGraph:
    """GNN-side graph.

    ``src``/``dst`` index directed GNN edges. ``features`` holds
    ``(J_ij, b_i, b_j)`` per GNN edge (node-GNN) or per GNN node (msg-GNN).
    ``readout[v]`` is the variable GNN node ``v`` contributes to.
    """

    kind: str
    num_nodes: int
    num_vars: int
    src: np.ndarray
    dst: np.ndarray
    features: np.ndarray
    readout: np.ndarray
    graph_of_var: np.ndarray = field(default=None)
    _index: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.graph_of_var is None:
            self.graph_of_var = np.zeros(self.num_vars, dtype=np.int64)

    @property
    def num_edges(self) -> int:
        return len(self.src)

    def index(self, which: str) -> Index:
        idx = self._index.get(which)
        if idx is None:
            if which == "src":
                idx = Index(self.src, self.num_nodes)
            elif which == "dst":
                idx = Index(self.dst, self.num_nodes)
            elif which == "readout":
                idx = Index(self.readout, self.num_vars)
            else:
                raise KeyError(which)
            self._index[which] = idx
        return idx

    def in_sources(self, v: int) -> list[int]:
        return sorted(self.src[self.dst == v].tolist())


def build_gnn_graph(mrf: BinaryMRF, kind: str) -> GNNGraph:
    edges = mrf.edges
    b = mrf.b
    if kind == NODE:
        src, dst, feats = [], [], []
        for (i, j), J in zip(edges, mrf.J):
            src += [i, j]
            dst += [j, i]
            feats += [(J, b[i], b[j]), (J, b[j], b[i])]
        return GNNGraph(NODE, mrf.n, mrf.n, np.array(src, dtype=np.int64),
                        np.array(dst, dtype=np.int64),
                        np.array(feats, dtype=np.float64).reshape(-1, EDGE_FEATURES),
                        np.arange(mrf.n, dtype=np.int64))
    if kind != MSG:
        raise ValueError(f"unknown GNN kind {kind!r}")
    # GNN node 2e is message i -> j, 2e + 1 is j -> i for edge e = (i, j).
    msg_src, msg_dst, feats = [], [], []
    for (i, j), J in zip(edges, mrf.J):
        msg_src += [i, j]
        msg_dst += [j, i]
        feats += [(J, b[i], b[j]), (J, b[j], b[i])]
    into: list[list[int]] = [[] for _ in range(mrf.n)]
    for v, t in enumerate(msg_dst):
        into[t].append(v)
    src, dst = [], []
    for v, (i, j) in enumerate(zip(msg_src, msg_dst)):
        for u in into[i]:
            if msg_src[u] != j:
                src.append(u)
                dst.append(v)
    return GNNGraph(MSG, len(msg_src), mrf.n, np.array(src, dtype=np.int64),
                    np.array(dst, dtype=np.int64),
                    np.array(feats, dtype=np.float64).reshape(-1, EDGE_FEATURES),
                    np.array(msg_dst, dtype=np.int64))


def batch_graphs(graphs: Sequence[GNNGraph]) -> GNNGraph:
    """Disjoint union; ``graph_of_var`` records which input each variable came from."""
    if not graphs:
        raise ValueError("empty batch")
    kind = graphs[0].kind
    node_off = var_off = 0
    src, dst, feats, readout, gid = [], [], [], [], []
    for g_idx, g in enumerate(graphs):
        if g.kind != kind:
            raise ValueError("cannot batch graphs of different kinds")
        src.append(g.src + node_off)
        dst.append(g.dst + node_off)
        feats.append(g.features)
        readout.append(g.readout + var_off)
        gid.append(np.full(g.num_vars, g_idx, dtype=np.int64))
        node_off += g.num_nodes
        var_off += g.num_vars
    return GNNGraph(kind, node_off, var_off, np.concatenate(src), np.concatenate(dst),
                    np.concatenate(feats), np.concatenate(readout), np.concatenate(gid))


@dataclass
class ForwardTrace:
    states: list[np.ndarray]
    logits: Tensor
    predictions: np.ndarray

    @property
    def T(self) -> int:
        return len(self.states) - 1

    def deltas(self) -> np.ndarray:
        """``(T, num_nodes)`` array of ``||h^t - h^{t-1}||_2`` for t = 1..T."""
        if self.T == 0:
            return np.zeros((0, self.states[0].shape[0]))
        h = np.stack(self.states)
        return np.linalg.norm(np.diff(h, axis=0), axis=2)


def _mlp(tape: Tape, p: dict[str, Tensor], prefix: str, x: Tensor, layers: int) -> Tensor:
    for k in range(layers):
        x = tape.add(tape.matmul(x, p[f"{prefix}.W{k}"]), p[f"{prefix}.b{k}"])
        if k < layers - 1:
            x = tape.relu(x)
    return x


def _gru(tape: Tape, p: dict[str, Tensor], h: Tensor, x: Tensor) -> Tensor:
    def gate(name, state):
        return tape.add(tape.add(tape.matmul(x, p[f"gru.W{name}"]),
                                 tape.matmul(state, p[f"gru.U{name}"])), p[f"gru.b{name}"])

    z = tape.sigmoid(gate("z", h))
    r = tape.sigmoid(gate("r", h))
    cand = tape.tanh(gate("h", tape.mul(r, h)))
    # (1 - z) * h + z * cand
    return tape.add(h, tape.mul(z, tape.sub(cand, h)))


def forward(graph: GNNGraph, weights: GNNWeights, tape: Tape | None = None,
            T: int | None = None) -> ForwardTrace:
    """Run ``T`` rounds (default ``weights.arch.T``) and read out logits.

    ``trace.logits`` lives on ``tape``; ``trace.predictions`` are
    ``sigmoid(logits)``, the estimated ``p_i(+1)``.
    """
    arch = weights.arch
    if graph.kind != arch.kind:
        raise ShapeError(f"graph built for {graph.kind}, weights for {arch.kind}")
    weights.check()
    T = arch.T if T is None else T
    tape = Tape() if tape is None else tape
    p = tape.params(weights.store)
    layers = len(arch.mlp_widths) + 1
    feats = tape.constant(graph.features)
    h = tape.constant(np.zeros((graph.num_nodes, arch.D)))
    states = [h.value]
    src, dst = graph.index("src"), graph.index("dst")
    for _ in range(T):
        if graph.kind == NODE:
            inp = tape.concat([tape.gather_rows(h, src), tape.gather_rows(h, dst), feats])
            m = tape.segment_sum(_mlp(tape, p, "msg", inp, layers), dst)
        else:
            pooled = tape.segment_sum(tape.gather_rows(h, src), dst)
            m = _mlp(tape, p, "msg", tape.concat([pooled, feats]), layers)
        h = _gru(tape, p, h, m)
        states.append(h.value)
    if graph.kind == MSG:
        h = tape.segment_sum(h, graph.index("readout"))
    logits = _mlp(tape, p, "out", h, layers)
    pred = tape.sigmoid(logits).value[:, 0]
    return ForwardTrace(states, logits, pred.copy())


def predict(mrf: BinaryMRF, weights: GNNWeights, T: int | None = None) -> np.ndarray:
    return forward(build_gnn_graph(mrf, weights.arch.kind), weights, T=T).predictions


def convergence_trace(trace: ForwardTrace) -> np.ndarray:
    """``(T, 2)`` array of (mean, std) of per-node state changes at t = 1..T."""
    d = trace.deltas()
    if d.shape[1] == 0:
        return np.zeros((d.shape[0], 2))
    return np.stack([d.mean(axis=1), d.std(axis=1)], axis=1)
