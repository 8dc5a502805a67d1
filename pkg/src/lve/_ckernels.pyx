# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loops.

Every function here has a numpy twin in ``_pykernels`` with the same
signature; ``lve.kernels`` picks one at import time.
"""
import numpy as np

from libc.math cimport cos, exp, fabs, sin


def grid_vertex_sum(const double[:, :, ::1] L, const double[:, ::1] nodes,
                    const double[::1] weights, const long[::1] k,
                    double complex g):
    """For each factor ``L[p]`` return sum_q weights[q] * prod_v (1 + i g s_v)^(-k_v),
    with ``s = L[p] @ nodes[q]``."""
    cdef Py_ssize_t P = L.shape[0]
    cdef Py_ssize_t n = L.shape[1]
    cdef Py_ssize_t Q = nodes.shape[0]
    out = np.zeros(P, dtype=np.complex128)
    cdef double complex[::1] o = out
    cdef Py_ssize_t p, q, v, u, e
    cdef double s
    cdef double complex acc, prod, r, rk
    cdef double complex ig = 1j * g
    with nogil:
        for p in range(P):
            acc = 0
            for q in range(Q):
                prod = 1
                for v in range(n):
                    s = 0
                    for u in range(n):
                        s = s + L[p, v, u] * nodes[q, u]
                    r = 1.0 / (1.0 + ig * s)
                    rk = r
                    for e in range(1, k[v]):
                        rk = rk * r
                    prod = prod * rk
                acc = acc + weights[q] * prod
            o[p] = acc
    return out


def point_vertex_mean(const double[:, :, ::1] L, const double[:, ::1] xi,
                      const long[::1] k, double complex g):
    """Antithetic pair average of prod_v (1 + i g s_v)^(-k_v) at s = +-L[p] @ xi[p]."""
    cdef Py_ssize_t P = L.shape[0]
    cdef Py_ssize_t n = L.shape[1]
    out = np.zeros(P, dtype=np.complex128)
    cdef double complex[::1] o = out
    cdef Py_ssize_t p, v, u, e
    cdef double s
    cdef double complex plus, minus, rp, rm, rpk, rmk
    cdef double complex ig = 1j * g
    with nogil:
        for p in range(P):
            plus = 1
            minus = 1
            for v in range(n):
                s = 0
                for u in range(n):
                    s = s + L[p, v, u] * xi[p, u]
                rp = 1.0 / (1.0 + ig * s)
                rm = 1.0 / (1.0 - ig * s)
                rpk = rp
                rmk = rm
                for e in range(1, k[v]):
                    rpk = rpk * rp
                    rmk = rmk * rm
                plus = plus * rpk
                minus = minus * rmk
            o[p] = 0.5 * (plus + minus)
    return out


cdef inline double complex _radial(double complex aq, const double[::1] x2,
                                   const double[::1] lw) noexcept nogil:
    # sum_l lw[l] exp(-aq x2[l])
    cdef Py_ssize_t l
    cdef double re = aq.real, im = aq.imag, m, ph
    cdef double sr = 0, si = 0
    for l in range(x2.shape[0]):
        m = lw[l] * exp(-re * x2[l])
        if m == 0.0:
            break
        if im == 0.0:
            sr = sr + m
        else:
            ph = im * x2[l]
            sr = sr + m * cos(ph)
            si = si - m * sin(ph)
    return sr + 1j * si


def schwinger_sum(const double[:, :, ::1] W, const double[:, ::1] U,
                  const double[::1] uw, const double[::1] x2, const double[::1] lw,
                  double complex a):
    """out[p] = sum_q uw[q] sum_l lw[l] exp(-a (U[q] W[p] U[q]) x2[l]).

    ``x2`` must be increasing so the inner sum can stop at the first
    underflowing weight.
    """
    cdef Py_ssize_t P = W.shape[0]
    cdef Py_ssize_t n = W.shape[1]
    cdef Py_ssize_t Q = U.shape[0]
    out = np.zeros(P, dtype=np.complex128)
    cdef double complex[::1] o = out
    cdef Py_ssize_t p, q, v, u
    cdef double quad, row
    cdef double complex acc
    with nogil:
        for p in range(P):
            acc = 0
            for q in range(Q):
                quad = 0
                for v in range(n):
                    row = 0
                    for u in range(n):
                        row = row + W[p, v, u] * U[q, u]
                    quad = quad + U[q, v] * row
                acc = acc + uw[q] * _radial(a * quad, x2, lw)
            o[p] = acc
    return out


def schwinger_point(const double[:, :, ::1] W, const double[:, ::1] U,
                    const double[::1] x2, const double[::1] lw, double complex a):
    """out[p] = sum_l lw[l] exp(-a (U[p] W[p] U[p]) x2[l])."""
    cdef Py_ssize_t P = W.shape[0]
    cdef Py_ssize_t n = W.shape[1]
    out = np.zeros(P, dtype=np.complex128)
    cdef double complex[::1] o = out
    cdef Py_ssize_t p, v, u
    cdef double quad, row
    with nogil:
        for p in range(P):
            quad = 0
            for v in range(n):
                row = 0
                for u in range(n):
                    row = row + W[p, v, u] * U[p, u]
                quad = quad + U[p, v] * row
            o[p] = _radial(a * quad, x2, lw)
    return out


def psd_min_pivots(const double[:, :, ::1] A, double tol):
    """Smallest relative pivot of a diagonally pivoted Cholesky sweep, per matrix.

    Elimination stops once the largest remaining diagonal drops to ``tol``
    (relative); the Gershgorin lower bound of the untouched remainder is then
    folded into the result, so a value >= -tol certifies positivity.
    """
    cdef Py_ssize_t B = A.shape[0]
    cdef Py_ssize_t n = A.shape[1]
    out = np.empty(B, dtype=np.float64)
    cdef double[::1] o = out
    work = np.empty((n, n), dtype=np.float64)
    cdef double[:, ::1] S = work
    active_arr = np.empty(n, dtype=np.intp)
    cdef Py_ssize_t[::1] active = active_arr
    cdef Py_ssize_t b, i, j, a, c, m, best, piv
    cdef double scale, d, worst, bound, x
    for b in range(B):
        scale = 0.0
        for i in range(n):
            for j in range(n):
                S[i, j] = A[b, i, j]
            if fabs(S[i, i]) > scale:
                scale = fabs(S[i, i])
        if scale == 0.0:
            scale = 1.0
        for i in range(n):
            active[i] = i
        m = n
        worst = 1.0
        while m > 0:
            best = 0
            for a in range(1, m):
                if S[active[a], active[a]] > S[active[best], active[best]]:
                    best = a
            piv = active[best]
            d = S[piv, piv] / scale
            if d <= tol:
                # remainder is numerically zero or indefinite: bound it
                for a in range(m):
                    i = active[a]
                    bound = S[i, i]
                    for c in range(m):
                        if c != a:
                            bound = bound - fabs(S[i, active[c]])
                    bound = bound / scale
                    if bound < worst:
                        worst = bound
                break
            if d < worst:
                worst = d
            active[best] = active[m - 1]
            m = m - 1
            for a in range(m):
                i = active[a]
                x = S[i, piv] / S[piv, piv]
                for c in range(m):
                    j = active[c]
                    S[i, j] = S[i, j] - x * S[piv, j]
        o[b] = worst
    return out
