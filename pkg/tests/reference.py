"""Independent reference computations used as test oracles.

Nothing here imports the code paths it checks: brute force goes through
``itertools``, and the GNN reference is a plain NumPy re-derivation that
evaluates many perturbed parameter sets at once for finite differences.
"""

import itertools

import numpy as np


def all_states(n):
    """All states in lexicographic order with +1 before -1."""
    return np.array(list(itertools.product((1, -1), repeat=n)), dtype=np.float64).reshape(-1, n)


def brute_force(n, edges, J, b):
    """(scores, log_Z, marginals_p1, map_state) by direct summation."""
    X = all_states(n)
    s = X @ np.asarray(b, dtype=np.float64)
    for (i, j), w in zip(edges, J):
        s = s + w * X[:, i] * X[:, j]
    top = s.max()
    log_z = top + np.log(np.sum(np.exp(s - top)))
    prob = np.exp(s - log_z)
    p1 = np.array([prob[X[:, i] > 0].sum() for i in range(n)])
    return s, log_z, p1, X[int(np.argmax(s))].astype(int)


def naive_bp(n, edges, J, b, iters=200, tol=1e-12, use_max=False):
    """Dict-based, undamped, synchronous BP; returns beliefs over (+1, -1)."""
    nbrs = {i: [] for i in range(n)}
    coup = {}
    for (i, j), w in zip(edges, J):
        nbrs[i].append(j)
        nbrs[j].append(i)
        coup[(i, j)] = coup[(j, i)] = w
    vals = (1.0, -1.0)
    mu = {(i, j): [0.5, 0.5] for i in range(n) for j in nbrs[i]}
    for _ in range(iters):
        new = {}
        for (i, j) in mu:
            out = []
            for xj in vals:
                terms = []
                for a, xi in enumerate(vals):
                    t = np.exp(coup[(i, j)] * xi * xj + b[i] * xi)
                    for k in nbrs[i]:
                        if k != j:
                            t *= mu[(k, i)][a]
                    terms.append(t)
                out.append(max(terms) if use_max else sum(terms))
            z = sum(out)
            new[(i, j)] = [o / z for o in out]
        delta = max((abs(new[e][a] - mu[e][a]) for e in mu for a in (0, 1)), default=0.0)
        mu = new
        if delta < tol:
            break
    bel = np.zeros((n, 2))
    for i in range(n):
        for a, xi in enumerate(vals):
            t = np.exp(b[i] * xi)
            for k in nbrs[i]:
                t *= mu[(k, i)][a]
            bel[i, a] = t
    return bel / bel.sum(axis=1, keepdims=True)


# -- GNN reference ------------------------------------------------------------

def _sig(x):
    return 1.0 / (1.0 + np.exp(-x))


def _lin(x, W, b):
    # x (L, r, i); W (L|1, i, o); b (L|1, o)
    return np.matmul(x, W) + b[:, None, :]


class ReferenceGNN:
    """Loss of a node-/msg-GNN for a stack of parameter sets.

    ``params`` maps name -> array with a leading lane axis (size 1 or L).
    """

    def __init__(self, kind, n_vars, src, dst, feats, readout, num_nodes, layers, T):
        self.kind = kind
        self.T = T
        self.layers = layers
        self.src = np.asarray(src)
        self.dst = np.asarray(dst)
        self.feats = np.asarray(feats, dtype=np.float64)
        self.num_nodes = num_nodes
        self.S_dst = np.zeros((num_nodes, len(self.src)))
        self.S_dst[self.dst, np.arange(len(self.src))] = 1.0
        self.R = np.zeros((n_vars, num_nodes))
        self.R[np.asarray(readout), np.arange(num_nodes)] = 1.0

    def _mlp(self, p, prefix, x):
        for k in range(self.layers):
            x = _lin(x, p[f"{prefix}.W{k}"], p[f"{prefix}.b{k}"])
            if k < self.layers - 1:
                self._signs.append((x > 0).reshape(x.shape[0], -1))
                x = np.maximum(x, 0.0)
        return x

    def loss(self, p, q):
        """Per-lane loss; ``self.signs`` keeps each lane's ReLU activation pattern."""
        L = max(v.shape[0] for v in p.values())
        self._signs = []
        D = p["gru.Uz"].shape[-1]
        h = np.zeros((L, self.num_nodes, D))
        feats = np.broadcast_to(self.feats, (L,) + self.feats.shape)
        for _ in range(self.T):
            if self.kind == "node-gnn":
                inp = np.concatenate([h[:, self.src], h[:, self.dst], feats], axis=2)
                m = np.matmul(self.S_dst, self._mlp(p, "msg", inp))
            else:
                pooled = np.matmul(self.S_dst, h[:, self.src])
                m = self._mlp(p, "msg", np.concatenate([pooled, feats], axis=2))
            z = _sig(np.matmul(m, p["gru.Wz"]) + np.matmul(h, p["gru.Uz"]) + p["gru.bz"][:, None])
            r = _sig(np.matmul(m, p["gru.Wr"]) + np.matmul(h, p["gru.Ur"]) + p["gru.br"][:, None])
            c = np.tanh(np.matmul(m, p["gru.Wh"]) + np.matmul(r * h, p["gru.Uh"]) + p["gru.bh"][:, None])
            h = (1.0 - z) * h + z * c
        if self.kind == "msg-gnn":
            h = np.matmul(self.R, h)
        logit = self._mlp(p, "out", h)[..., 0]
        pr = _sig(logit)
        q = np.asarray(q)[None, :]
        self.signs = np.concatenate([np.broadcast_to(a, (L, a.shape[1])) for a in self._signs], axis=1)
        return -np.sum(q * np.log(pr) + (1.0 - q) * np.log(1.0 - pr), axis=1)


def finite_difference_grads(ref, params, q, step=1e-5, max_lanes=512):
    """Central differences for every entry of every parameter.

    Returns ``(grads, smooth)``; ``smooth[name]`` is False where some ReLU
    input changes sign between the two probes, so the difference straddles
    a kink and says nothing about the derivative.
    """
    base = {k: v[None] for k, v in params.items()}
    grads, smooth = {}, {}
    for name, value in params.items():
        flat = value.ravel()
        g = np.empty(flat.size)
        ok = np.empty(flat.size, dtype=bool)
        for s in range(0, flat.size, max_lanes // 2):
            idx = np.arange(s, min(s + max_lanes // 2, flat.size))
            lanes = np.repeat(flat[None], 2 * len(idx), axis=0)
            lanes[np.arange(len(idx)), idx] += step
            lanes[len(idx) + np.arange(len(idx)), idx] -= step
            p = dict(base)
            p[name] = lanes.reshape((2 * len(idx),) + value.shape)
            out = ref.loss(p, q)
            g[idx] = (out[:len(idx)] - out[len(idx):]) / (2 * step)
            ok[idx] = np.all(ref.signs[:len(idx)] == ref.signs[len(idx):], axis=1)
        grads[name] = g.reshape(value.shape)
        smooth[name] = ok.reshape(value.shape)
    return grads, smooth


def refine_kinks(ref, params, q, fd, smooth, step=1e-5, shrink=10.0, tries=4):
    """Redo kink-straddling coordinates with smaller steps until both probes
    share one activation pattern. Returns the number still straddling."""
    base = {k: v[None] for k, v in params.items()}
    left = 0
    for name, value in params.items():
        for flat_i in np.flatnonzero(~smooth[name]):
            h = step
            for _ in range(tries):
                h /= shrink
                lanes = np.repeat(value.ravel()[None], 2, axis=0)
                lanes[0, flat_i] += h
                lanes[1, flat_i] -= h
                p = dict(base)
                p[name] = lanes.reshape((2,) + value.shape)
                out = ref.loss(p, q)
                if np.array_equal(ref.signs[0], ref.signs[1]):
                    fd[name].flat[flat_i] = (out[0] - out[1]) / (2 * h)
                    smooth[name].flat[flat_i] = True
                    break
            else:
                left += 1
    return left


def relative_error(a, b, floor=1e-6):
    """``|a - b| / max(|a|, |b|, floor)``, elementwise."""
    a = np.asarray(a)
    b = np.asarray(b)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
