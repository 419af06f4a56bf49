"""A small reverse-mode autodiff tape over float64 arrays of rank <= 2.

Every primitive records its output and a backward rule on the tape that
created it; ``Tape.backward`` replays the records in reverse. Parameters
come from a :class:`ParamStore` and receive their gradients there.
"""

from __future__ import annotations

from collections import OrderedDict
from typing import Callable, Sequence

import numpy as np
from scipy import sparse

CHECK_FINITE = True


class ShapeError(ValueError):
    pass


class TapeError(RuntimeError):
    pass


class Tensor:
    __slots__ = ("value", "tape", "index", "param")

    def __init__(self, value: np.ndarray, tape: "Tape", index: int, param: str | None = None):
        self.value = value
        self.tape = tape
        self.index = index
        self.param = param

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def __add__(self, other):
        return self.tape.add(self, other)

    def __sub__(self, other):
        return self.tape.sub(self, other)

    def __mul__(self, other):
        return self.tape.mul(self, other)

    def __matmul__(self, other):
        return self.tape.matmul(self, other)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, index={self.index})"


class Index:
    """Row index map ``idx`` into an ``n``-row array; reused by gather and
    segment-sum so the sparse scatter operator is built once per graph."""

    def __init__(self, idx, n: int):
        self.idx = np.asarray(idx, dtype=np.int64)
        self.n = int(n)
        if self.idx.size and (self.idx.min() < 0 or self.idx.max() >= n):
            raise ShapeError(f"index out of range for {n} rows")
        m = len(self.idx)
        self.scatter = sparse.csr_matrix(
            (np.ones(m), (self.idx, np.arange(m))), shape=(self.n, m))

    def __len__(self):
        return len(self.idx)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for ax, size in enumerate(shape):
        if size == 1 and grad.shape[ax] != 1:
            grad = grad.sum(axis=ax, keepdims=True)
    return grad


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _softplus(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


class ParamStore:
    """Named parameters with gradients and Adam moments, in insertion order."""

    def __init__(self):
        self.params: "OrderedDict[str, np.ndarray]" = OrderedDict()
        self.grads: dict[str, np.ndarray | None] = {}
        self.adam_m: dict[str, np.ndarray] = {}
        self.adam_v: dict[str, np.ndarray] = {}
        self.step_count = 0

    def add(self, name: str, value: np.ndarray) -> None:
        if name in self.params:
            raise KeyError(f"duplicate parameter {name!r}")
        value = np.array(value, dtype=np.float64)
        if value.ndim > 2:
            raise ShapeError(f"parameter {name!r} has rank {value.ndim} > 2")
        self.params[name] = value
        self.grads[name] = None
        self.adam_m[name] = np.zeros_like(value)
        self.adam_v[name] = np.zeros_like(value)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.params[name]

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def names(self) -> list[str]:
        return list(self.params)

    def set(self, name: str, value: np.ndarray) -> None:
        value = np.asarray(value, dtype=np.float64)
        if value.shape != self.params[name].shape:
            raise ShapeError(f"{name}: shape {value.shape} != {self.params[name].shape}")
        self.params[name] = value.copy()

    def zero_grad(self) -> None:
        for name in self.grads:
            self.grads[name] = None

    def accumulate(self, name: str, grad: np.ndarray) -> None:
        cur = self.grads[name]
        self.grads[name] = grad.copy() if cur is None else cur + grad

    def grad_vector(self) -> np.ndarray:
        return np.concatenate([self.grads[k].ravel() for k in self.params])

    def copy(self) -> "ParamStore":
        out = ParamStore()
        for k, v in self.params.items():
            out.add(k, v)
        return out

    def num_parameters(self) -> int:
        return sum(v.size for v in self.params.values())


def adam_step(store: ParamStore, lr: float = 1e-3, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8) -> None:
    """Bias-corrected Adam update of every parameter; clears gradients."""
    missing = [k for k, g in store.grads.items() if g is None]
    if missing:
        raise TapeError(f"no gradient for {missing[:3]}{'...' if len(missing) > 3 else ''}")
    store.step_count += 1
    t = store.step_count
    bc1 = 1.0 - beta1 ** t
    bc2 = 1.0 - beta2 ** t
    for name, p in store.params.items():
        g = store.grads[name]
        m = store.adam_m[name]
        v = store.adam_v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        store.params[name] = p - lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
    store.zero_grad()


Backward = Callable[[np.ndarray], Sequence[np.ndarray | None]]


class Tape:
    """Records executed primitives; single use for one backward pass."""

    def __init__(self):
        self._values: list[Tensor] = []
        self._records: list[tuple[int, tuple[int, ...], Backward]] = []
        self._store: ParamStore | None = None
        self._done = False
        self._grads: list[np.ndarray | None] = []

    # -- leaves ---------------------------------------------------------
    def _new(self, value: np.ndarray, param: str | None = None) -> Tensor:
        if value.ndim > 2:
            raise ShapeError(f"rank {value.ndim} > 2")
        if CHECK_FINITE and not np.all(np.isfinite(value)):
            raise FloatingPointError("non-finite value recorded on tape")
        t = Tensor(value, self, len(self._values), param)
        self._values.append(t)
        return t

    def constant(self, value) -> Tensor:
        return self._new(np.asarray(value, dtype=np.float64))

    def param(self, store: ParamStore, name: str) -> Tensor:
        if self._store is None:
            self._store = store
        elif self._store is not store:
            raise TapeError("a tape can only draw parameters from one store")
        return self._new(store[name], param=name)

    def params(self, store: ParamStore) -> dict[str, Tensor]:
        return {k: self.param(store, k) for k in store.names()}

    def _op(self, value: np.ndarray, inputs: Sequence[Tensor], backward: Backward) -> Tensor:
        for x in inputs:
            if x.tape is not self:
                raise TapeError("operands belong to a different tape")
        out = self._new(value)
        self._records.append((out.index, tuple(x.index for x in inputs), backward))
        return out

    def _lift(self, x) -> Tensor:
        return x if isinstance(x, Tensor) else self.constant(x)

    # -- elementwise ----------------------------------------------------
    def _broadcast_shapes(self, a: Tensor, b: Tensor, op: str) -> None:
        try:
            np.broadcast_shapes(a.shape, b.shape)
        except ValueError:
            raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None

    def add(self, a, b) -> Tensor:
        a, b = self._lift(a), self._lift(b)
        self._broadcast_shapes(a, b, "add")
        sa, sb = a.shape, b.shape
        return self._op(a.value + b.value, (a, b),
                        lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))

    def sub(self, a, b) -> Tensor:
        a, b = self._lift(a), self._lift(b)
        self._broadcast_shapes(a, b, "sub")
        sa, sb = a.shape, b.shape
        return self._op(a.value - b.value, (a, b),
                        lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)))

    def mul(self, a, b) -> Tensor:
        a, b = self._lift(a), self._lift(b)
        self._broadcast_shapes(a, b, "mul")
        av, bv = a.value, b.value
        return self._op(av * bv, (a, b),
                        lambda g: (_unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape)))

    def scalar_mul(self, a: Tensor, c: float) -> Tensor:
        c = float(c)
        return self._op(a.value * c, (a,), lambda g: (g * c,))

    def relu(self, a: Tensor) -> Tensor:
        mask = a.value > 0
        return self._op(np.where(mask, a.value, 0.0), (a,), lambda g: (g * mask,))

    def sigmoid(self, a: Tensor) -> Tensor:
        s = _sigmoid(a.value)
        return self._op(s, (a,), lambda g: (g * s * (1.0 - s),))

    def tanh(self, a: Tensor) -> Tensor:
        t = np.tanh(a.value)
        return self._op(t, (a,), lambda g: (g * (1.0 - t * t),))

    def log(self, a: Tensor) -> Tensor:
        if np.any(a.value <= 0):
            raise FloatingPointError("log of a non-positive value")
        av = a.value
        return self._op(np.log(av), (a,), lambda g: (g / av,))

    def softplus(self, a: Tensor) -> Tensor:
        av = a.value
        return self._op(_softplus(av), (a,), lambda g: (g * _sigmoid(av),))

    # -- linear algebra and structure -----------------------------------
    def matmul(self, a: Tensor, b: Tensor) -> Tensor:
        a, b = self._lift(a), self._lift(b)
        if a.value.ndim != 2 or b.value.ndim not in (1, 2) or a.shape[1] != b.shape[0]:
            raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
        av, bv = a.value, b.value
        if bv.ndim == 1:
            return self._op(av @ bv, (a, b), lambda g: (np.outer(g, bv), av.T @ g))
        return self._op(av @ bv, (a, b), lambda g: (g @ bv.T, av.T @ g))

    matvec = matmul

    def concat(self, parts: Sequence[Tensor], axis: int = 1) -> Tensor:
        parts = [self._lift(p) for p in parts]
        if any(p.value.ndim != 2 for p in parts):
            raise ShapeError("concat expects rank-2 operands")
        other = 1 - axis
        if len({p.shape[other] for p in parts}) != 1:
            raise ShapeError(f"concat: mismatched shapes {[p.shape for p in parts]}")
        cuts = np.cumsum([p.shape[axis] for p in parts])[:-1]
        return self._op(np.concatenate([p.value for p in parts], axis=axis), parts,
                        lambda g: tuple(np.split(g, cuts, axis=axis)))

    def sum_rows(self, a: Tensor) -> Tensor:
        """Sum over rows: ``(m, k) -> (1, k)``."""
        if a.value.ndim != 2:
            raise ShapeError(f"sum_rows expects rank 2, got {a.shape}")
        m = a.shape[0]
        return self._op(a.value.sum(axis=0, keepdims=True), (a,),
                        lambda g: (np.repeat(g, m, axis=0),))

    def sum(self, a: Tensor) -> Tensor:
        shape = a.shape
        return self._op(np.asarray(a.value.sum()), (a,), lambda g: (np.full(shape, float(g)),))

    def gather_rows(self, a: Tensor, index: Index) -> Tensor:
        if a.shape[0] != index.n:
            raise ShapeError(f"gather: {a.shape[0]} rows but index built for {index.n}")
        S = index.scatter
        return self._op(a.value[index.idx], (a,), lambda g: (S @ g,))

    def segment_sum(self, a: Tensor, index: Index) -> Tensor:
        """Row ``r`` of the output is the sum of rows ``k`` with ``idx[k] == r``."""
        if a.shape[0] != len(index):
            raise ShapeError(f"segment_sum: {a.shape[0]} rows but index has {len(index)}")
        idx = index.idx
        return self._op(index.scatter @ a.value, (a,), lambda g: (g[idx],))

    # -- reverse pass ---------------------------------------------------
    def backward(self, loss: Tensor, store: ParamStore | None = None) -> dict[str, np.ndarray]:
        """Accumulate d(loss)/d(param) into the store; returns this pass's grads.

        Every parameter of the store gets a gradient array, zero when the
        loss does not depend on it.
        """
        if self._done:
            raise TapeError("backward already ran on this tape")
        if loss.tape is not self:
            raise TapeError("loss was recorded on another tape")
        if loss.value.size != 1:
            raise ShapeError(f"loss must be scalar, got shape {loss.shape}")
        self._done = True
        grads: list[np.ndarray | None] = [None] * len(self._values)
        grads[loss.index] = np.ones_like(loss.value)
        for out, ins, rule in reversed(self._records):
            g = grads[out]
            if g is None:
                continue
            for i, gi in zip(ins, rule(g)):
                if gi is None:
                    continue
                grads[i] = gi if grads[i] is None else grads[i] + gi
        self._grads = grads
        store = store if store is not None else self._store
        result: dict[str, np.ndarray] = {}
        if store is not None:
            for name in store.names():
                result[name] = np.zeros_like(store[name])
            for t in self._values:
                if t.param is not None and grads[t.index] is not None:
                    result[t.param] = result[t.param] + grads[t.index]
            for name, g in result.items():
                store.accumulate(name, g)
        return result

    def grad(self, t: Tensor) -> np.ndarray:
        """Gradient slot of any recorded value after ``backward``."""
        if not self._done:
            raise TapeError("backward has not run")
        g = self._grads[t.index]
        return np.zeros_like(t.value) if g is None else g
