# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels for enumeration and the fixed-point baselines.

Signatures and operation order mirror ``_kernels_py``.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log, pow, tanh, fabs, isfinite

cnp.import_array()


def enumerate_states(int n, const long[:] ei, const long[:] ej,
                     const double[:] J, const double[:] b):
    cdef Py_ssize_t size = (<Py_ssize_t>1) << n
    cdef Py_ssize_t half = size >> 1
    cdef Py_ssize_t k, comp, e, best = 0
    cdef int i
    cdef long m = J.shape[0]
    cdef double s, smax, total, wlo, whi, sp, sm
    cdef double[::1] scores = np.empty(size, dtype=np.float64)
    cdef double[::1] x = np.empty(n, dtype=np.float64)
    cdef double[::1] splus = np.zeros(n, dtype=np.float64)
    cdef double[::1] sminus = np.zeros(n, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] p_plus = np.empty(n, dtype=np.float64)

    for k in range(size):
        for i in range(n):
            x[i] = 1.0 - 2.0 * ((k >> (n - 1 - i)) & 1)
        s = 0.0
        for i in range(n):
            s += b[i] * x[i]
        for e in range(m):
            s += J[e] * (x[ei[e]] * x[ej[e]])
        scores[k] = s
        if k == 0 or s > scores[best]:
            best = k
    smax = scores[best]

    total = 0.0
    for k in range(size):
        total += exp(scores[k] - smax)
    for k in range(half):
        comp = size - 1 - k
        wlo = exp(scores[k] - smax)
        whi = exp(scores[comp] - smax)
        for i in range(n):
            if (k >> (n - 1 - i)) & 1:
                splus[i] += whi
                sminus[i] += wlo
            else:
                splus[i] += wlo
                sminus[i] += whi
    for i in range(n):
        sp = splus[i]
        sm = sminus[i]
        p_plus[i] = sp / (sp + sm)
    return smax + log(total), p_plus, int(best), float(smax)


cdef inline double _dmax(double a, double c) nogil:
    return a if a >= c else c


def bp_messages(const long[:] src, const long[:, :] excl, const double[:] Jd,
                const double[:] b, bint max_product, double damping, double tol,
                int max_iters):
    cdef Py_ssize_t m2 = src.shape[0]
    cdef Py_ssize_t width = excl.shape[1]
    cdef Py_ssize_t d, c, k
    cdef int it
    cdef double p0, p1, u0, u1, s, n0, n1, res, diff, ep, em
    cdef bint converged = False
    cdef cnp.ndarray[cnp.float64_t, ndim=2] msgs_arr = np.full((m2, 2), 0.5)
    cdef cnp.ndarray[cnp.float64_t, ndim=2] new_arr = np.empty((m2, 2))
    cdef double[:, ::1] msgs = msgs_arr
    cdef double[:, ::1] new = new_arr
    residuals = []

    for it in range(1, max_iters + 1):
        res = 0.0
        for d in range(m2):
            p0 = exp(b[src[d]])
            p1 = exp(-b[src[d]])
            for c in range(width):
                k = excl[d, c]
                if k >= 0:
                    p0 *= msgs[k, 0]
                    p1 *= msgs[k, 1]
            ep = exp(Jd[d])
            em = exp(-Jd[d])
            if max_product:
                u0 = _dmax(ep * p0, em * p1)
                u1 = _dmax(em * p0, ep * p1)
            else:
                u0 = ep * p0 + em * p1
                u1 = em * p0 + ep * p1
            s = u0 + u1
            if not isfinite(s) or s <= 0.0:
                raise FloatingPointError(
                    f"message update became degenerate at iteration {it}")
            u0 = u0 / s
            u1 = u1 / s
            n0 = (1.0 - damping) * u0 + damping * msgs[d, 0]
            n1 = (1.0 - damping) * u1 + damping * msgs[d, 1]
            s = n0 + n1
            new[d, 0] = n0 / s
            new[d, 1] = n1 / s
        for d in range(m2):
            diff = fabs(new[d, 0] - msgs[d, 0])
            if diff > res:
                res = diff
            diff = fabs(new[d, 1] - msgs[d, 1])
            if diff > res:
                res = diff
        msgs[:, :] = new
        residuals.append(res)
        if res < tol:
            converged = True
            break
    return msgs_arr, np.asarray(residuals, dtype=np.float64), bool(converged)


def trbp_messages(const long[:] src, const long[:, :] excl, const long[:] rev,
                  const double[:] Jd, const double[:] b, const double[:] rho,
                  double damping, double tol, int max_iters):
    cdef Py_ssize_t m2 = src.shape[0]
    cdef Py_ssize_t width = excl.shape[1]
    cdef Py_ssize_t d, c, k, r
    cdef int it
    cdef double p0, p1, u0, u1, s, n0, n1, res, diff, ep, em, back
    cdef bint converged = False
    cdef cnp.ndarray[cnp.float64_t, ndim=2] msgs_arr = np.full((m2, 2), 0.5)
    cdef cnp.ndarray[cnp.float64_t, ndim=2] new_arr = np.empty((m2, 2))
    cdef double[:, ::1] msgs = msgs_arr
    cdef double[:, ::1] new = new_arr
    residuals = []

    for it in range(1, max_iters + 1):
        res = 0.0
        for d in range(m2):
            p0 = exp(b[src[d]])
            p1 = exp(-b[src[d]])
            for c in range(width):
                k = excl[d, c]
                if k >= 0:
                    p0 *= pow(msgs[k, 0], rho[k])
                    p1 *= pow(msgs[k, 1], rho[k])
            r = rev[d]
            back = rho[d] - 1.0
            p0 *= pow(msgs[r, 0], back)
            p1 *= pow(msgs[r, 1], back)
            ep = exp(Jd[d] / rho[d])
            em = exp(-Jd[d] / rho[d])
            u0 = ep * p0 + em * p1
            u1 = em * p0 + ep * p1
            s = u0 + u1
            if not isfinite(s) or s <= 0.0:
                raise FloatingPointError(
                    f"message update became degenerate at iteration {it}")
            u0 = u0 / s
            u1 = u1 / s
            n0 = (1.0 - damping) * u0 + damping * msgs[d, 0]
            n1 = (1.0 - damping) * u1 + damping * msgs[d, 1]
            s = n0 + n1
            new[d, 0] = n0 / s
            new[d, 1] = n1 / s
        for d in range(m2):
            diff = fabs(new[d, 0] - msgs[d, 0])
            if diff > res:
                res = diff
            diff = fabs(new[d, 1] - msgs[d, 1])
            if diff > res:
                res = diff
        msgs[:, :] = new
        residuals.append(res)
        if res < tol:
            converged = True
            break
    return msgs_arr, np.asarray(residuals, dtype=np.float64), bool(converged)


def beliefs(const long[:, :] inc, const double[:, :] msgs, const double[:] b, rho):
    cdef Py_ssize_t n = b.shape[0]
    cdef Py_ssize_t width = inc.shape[1]
    cdef Py_ssize_t i, c, k
    cdef double q0, q1, s
    cdef const double[:] r
    cdef bint weighted = rho is not None
    cdef cnp.ndarray[cnp.float64_t, ndim=2] out = np.empty((n, 2))
    if weighted:
        r = rho
    for i in range(n):
        q0 = exp(b[i])
        q1 = exp(-b[i])
        for c in range(width):
            k = inc[i, c]
            if k >= 0:
                if weighted:
                    q0 *= pow(msgs[k, 0], r[k])
                    q1 *= pow(msgs[k, 1], r[k])
                else:
                    q0 *= msgs[k, 0]
                    q1 *= msgs[k, 1]
        s = q0 + q1
        out[i, 0] = q0 / s
        out[i, 1] = q1 / s
    return out


def mean_field(const long[:, :] nbr, const double[:, :] nbr_J, const double[:] b,
               double damping, double tol, int max_iters):
    cdef Py_ssize_t n = b.shape[0]
    cdef Py_ssize_t width = nbr.shape[1]
    cdef Py_ssize_t i, c, k
    cdef int it
    cdef double field, res, diff
    cdef bint converged = False
    cdef cnp.ndarray[cnp.float64_t, ndim=1] m_arr = np.zeros(n)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] new_arr = np.empty(n)
    cdef double[::1] m = m_arr
    cdef double[::1] new = new_arr
    residuals = []
    for it in range(max_iters):
        res = 0.0
        for i in range(n):
            field = b[i]
            for c in range(width):
                k = nbr[i, c]
                if k >= 0:
                    field += nbr_J[i, c] * m[k]
            new[i] = (1.0 - damping) * tanh(field) + damping * m[i]
        for i in range(n):
            diff = fabs(new[i] - m[i])
            if diff > res:
                res = diff
        m[:] = new
        residuals.append(res)
        if res < tol:
            converged = True
            break
    return m_arr, np.asarray(residuals, dtype=np.float64), bool(converged)
