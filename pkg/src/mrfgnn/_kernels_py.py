"""Pure NumPy kernels; the fallback when the compiled extension is absent.

Every function here has a twin with the same signature in ``_kernels.pyx``.
Products over incoming messages are taken left to right over padded index
tables so that sum-product and tree-reweighted runs with unit weights
perform the same floating-point operations.
"""

import numpy as np


def enumerate_states(n, ei, ej, J, b):
    """Exhaustive sums over ``{+1,-1}^n`` in lexicographic (+1 first) order.

    Returns ``(log_z, p_plus, map_index, map_score)``. Each state is paired
    with its global flip when accumulating per-node sums, so a model with
    zero biases yields bitwise-equal sums for both states of every node.
    """
    size = 1 << n
    half = size >> 1
    k = np.arange(size, dtype=np.int64)
    X = np.empty((n, size), dtype=np.float64)
    for i in range(n):
        X[i] = 1.0 - 2.0 * ((k >> (n - 1 - i)) & 1)
    s = np.zeros(size, dtype=np.float64)
    for i in range(n):
        s += b[i] * X[i]
    for e in range(len(J)):
        s += J[e] * (X[ei[e]] * X[ej[e]])
    map_index = int(np.argmax(s))
    smax = s[map_index]
    w = np.exp(s - smax)
    total = np.sum(w)
    lo = w[:half]
    hi = w[::-1][:half]
    p_plus = np.empty(n, dtype=np.float64)
    for i in range(n):
        plus = X[i, :half] > 0
        sp = np.sum(np.where(plus, lo, hi))
        sm = np.sum(np.where(plus, hi, lo))
        p_plus[i] = sp / (sp + sm)
    return smax + np.log(total), p_plus, map_index, float(smax)


def _finish(upd, old, damping, it):
    norm = upd.sum(axis=1, keepdims=True)
    if not np.all(np.isfinite(norm)) or np.any(norm <= 0.0):
        raise FloatingPointError(f"message update became degenerate at iteration {it}")
    upd = upd / norm
    new = (1.0 - damping) * upd + damping * old
    return new / new.sum(axis=1, keepdims=True)


def bp_messages(src, excl, Jd, b, max_product, damping, tol, max_iters):
    """Synchronous (damped) sum-/max-product on directed edges.

    ``excl[d]`` lists the directed edges into ``src[d]`` other than the
    reverse of ``d``, padded with ``-1``. Returns ``(messages, residuals,
    converged)``; ``messages[d] = (mu(+1), mu(-1))``.
    """
    m2 = len(src)
    msgs = np.full((m2 + 1, 2), 0.5)
    msgs[m2] = 1.0  # padding row
    idx = np.where(excl < 0, m2, excl)
    phi = np.stack([np.exp(b[src]), np.exp(-b[src])], axis=1)
    ep = np.exp(Jd)
    em = np.exp(-Jd)
    residuals = []
    converged = False
    for it in range(1, max_iters + 1):
        pre = phi.copy()
        for c in range(idx.shape[1]):
            pre *= msgs[idx[:, c]]
        if max_product:
            upd = np.stack([np.maximum(ep * pre[:, 0], em * pre[:, 1]),
                            np.maximum(em * pre[:, 0], ep * pre[:, 1])], axis=1)
        else:
            upd = np.stack([ep * pre[:, 0] + em * pre[:, 1],
                            em * pre[:, 0] + ep * pre[:, 1]], axis=1)
        new = _finish(upd, msgs[:m2], damping, it)
        res = float(np.max(np.abs(new - msgs[:m2]))) if m2 else 0.0
        msgs[:m2] = new
        residuals.append(res)
        if res < tol:
            converged = True
            break
    return msgs[:m2].copy(), np.asarray(residuals), converged


def trbp_messages(src, excl, rev, Jd, b, rho, damping, tol, max_iters):
    """Tree-reweighted sum-product; ``rho`` is per directed edge."""
    m2 = len(src)
    msgs = np.full((m2 + 1, 2), 0.5)
    msgs[m2] = 1.0
    rho_pad = np.append(rho, 1.0)
    idx = np.where(excl < 0, m2, excl)
    phi = np.stack([np.exp(b[src]), np.exp(-b[src])], axis=1)
    ep = np.exp(Jd / rho)
    em = np.exp(-Jd / rho)
    back = (rho - 1.0)[:, None]
    residuals = []
    converged = False
    for it in range(1, max_iters + 1):
        pre = phi.copy()
        for c in range(idx.shape[1]):
            col = idx[:, c]
            pre *= np.power(msgs[col], rho_pad[col][:, None])
        pre *= np.power(msgs[rev], back)
        upd = np.stack([ep * pre[:, 0] + em * pre[:, 1],
                        em * pre[:, 0] + ep * pre[:, 1]], axis=1)
        new = _finish(upd, msgs[:m2], damping, it)
        res = float(np.max(np.abs(new - msgs[:m2]))) if m2 else 0.0
        msgs[:m2] = new
        residuals.append(res)
        if res < tol:
            converged = True
            break
    return msgs[:m2].copy(), np.asarray(residuals), converged


def beliefs(inc, msgs, b, rho):
    """Normalized node beliefs ``e^{b x} prod_k mu_ki(x)^rho_ki``.

    ``inc[i]`` lists directed edges into ``i`` padded with ``-1``; pass
    ``rho=None`` for plain products.
    """
    m2 = len(msgs)
    pad = np.vstack([msgs, np.ones((1, 2))])
    idx = np.where(inc < 0, m2, inc)
    bel = np.stack([np.exp(b), np.exp(-b)], axis=1)
    if rho is None:
        for c in range(idx.shape[1]):
            bel *= pad[idx[:, c]]
    else:
        rho_pad = np.append(rho, 1.0)
        for c in range(idx.shape[1]):
            col = idx[:, c]
            bel *= np.power(pad[col], rho_pad[col][:, None])
    return bel / bel.sum(axis=1, keepdims=True)


def mean_field(nbr, nbr_J, b, damping, tol, max_iters):
    """Naive mean-field magnetizations ``m_i = tanh(b_i + sum_j J_ij m_j)``.

    ``nbr``/``nbr_J`` are padded neighbor tables (``-1`` / ``0.0`` pads).
    """
    n = len(b)
    m = np.zeros(n + 1)
    idx = np.where(nbr < 0, n, nbr)
    residuals = []
    converged = False
    for _ in range(max_iters):
        field = b.copy()
        for c in range(idx.shape[1]):
            field += nbr_J[:, c] * m[idx[:, c]]
        new = (1.0 - damping) * np.tanh(field) + damping * m[:n]
        res = float(np.max(np.abs(new - m[:n])))
        m[:n] = new
        residuals.append(res)
        if res < tol:
            converged = True
            break
    return m[:n].copy(), np.asarray(residuals), converged
