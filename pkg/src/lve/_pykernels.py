"""Pure numpy implementations of the compiled kernels in ``_ckernels.pyx``."""

import numpy as np


def _vertex_powers(s, k, g):
    r = 1.0 / (1.0 + 1j * g * s)
    out = np.ones(s.shape[:-1], dtype=np.complex128)
    for v, kv in enumerate(k):
        out *= r[..., v] ** int(kv)
    return out


def grid_vertex_sum(L, nodes, weights, k, g):
    L = np.asarray(L, dtype=np.float64)
    nodes = np.asarray(nodes, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    P, n, _ = L.shape
    out = np.empty(P, dtype=np.complex128)
    # keep the (chunk, Q, n) temporaries around 32 MB
    chunk = max(1, int(2**21 // max(1, nodes.shape[0] * n)))
    for start in range(0, P, chunk):
        s = np.einsum("pvu,qu->pqv", L[start:start + chunk], nodes)
        out[start:start + chunk] = _vertex_powers(s, k, g) @ weights
    return out


def point_vertex_mean(L, xi, k, g):
    s = np.einsum("pvu,pu->pv", np.asarray(L, dtype=np.float64),
                  np.asarray(xi, dtype=np.float64))
    return 0.5 * (_vertex_powers(s, k, g) + _vertex_powers(-s, k, g))


def _radial(aq, x2, lw):
    return np.exp(-np.multiply.outer(aq, x2)) @ lw


def schwinger_sum(W, U, uw, x2, lw, a):
    W = np.asarray(W, dtype=np.float64)
    U = np.asarray(U, dtype=np.float64)
    out = np.empty(W.shape[0], dtype=np.complex128)
    for p, Wp in enumerate(W):
        quad = np.einsum("qv,vu,qu->q", U, Wp, U)
        out[p] = _radial(a * quad, x2, lw) @ uw
    return out


def schwinger_point(W, U, x2, lw, a):
    quad = np.einsum("pv,pvu,pu->p", np.asarray(U, dtype=np.float64),
                     np.asarray(W, dtype=np.float64), np.asarray(U, dtype=np.float64))
    return _radial(a * quad, x2, lw)


def psd_min_pivots(A, tol):
    A = np.asarray(A, dtype=np.float64)
    out = np.empty(A.shape[0])
    for b, mat in enumerate(A):
        S = mat.copy()
        scale = np.abs(np.diag(S)).max()
        if scale == 0.0:
            scale = 1.0
        active = list(range(S.shape[0]))
        worst = 1.0
        while active:
            diag = S[active, active]
            best = int(np.argmax(diag))
            piv = active[best]
            d = S[piv, piv] / scale
            if d <= tol:
                sub = S[np.ix_(active, active)]
                off = np.abs(sub).sum(axis=1) - np.abs(np.diag(sub))
                worst = min(worst, float(((np.diag(sub) - off) / scale).min()))
                break
            worst = min(worst, d)
            active[best] = active[-1]
            active.pop()
            if active:
                col = S[active, piv] / S[piv, piv]
                S[np.ix_(active, active)] -= np.outer(col, S[piv, active])
        out[b] = worst
    return out
