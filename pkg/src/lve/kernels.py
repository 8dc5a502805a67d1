"""Backend selection for the hot loops.

The compiled extension ``lve._ckernels`` is used when it was built and
``LVE_PURE_PYTHON`` is not set to ``1``; otherwise the numpy versions in
``lve._pykernels`` take over. Both expose the same functions.
"""

import os

import numpy as np

from . import _pykernels

if os.environ.get("LVE_PURE_PYTHON") == "1":
    _impl = _pykernels
else:
    try:
        from . import _ckernels as _impl
    except ImportError:
        _impl = _pykernels

BACKEND = "compiled" if _impl is not _pykernels else "python"


def _prep(L, k):
    L = np.ascontiguousarray(L, dtype=np.float64)
    k = np.ascontiguousarray(k, dtype=np.int_)
    if L.ndim != 3 or L.shape[1] != L.shape[2] or L.shape[1] != k.shape[0]:
        raise ValueError("L must have shape (P, n, n) matching len(k)")
    return L, k


def grid_vertex_sum(L, nodes, weights, k, g, impl=None):
    """Quadrature-weighted sums of vertex-resolvent products, one per factor L[p]."""
    L, k = _prep(L, k)
    nodes = np.ascontiguousarray(nodes, dtype=np.float64)
    weights = np.ascontiguousarray(weights, dtype=np.float64)
    return (impl or _impl).grid_vertex_sum(L, nodes, weights, k, complex(g))


def point_vertex_mean(L, xi, k, g, impl=None):
    """Antithetic vertex-resolvent products at one Gaussian point per factor."""
    L, k = _prep(L, k)
    xi = np.ascontiguousarray(xi, dtype=np.float64)
    return (impl or _impl).point_vertex_mean(L, xi, k, complex(g))


def psd_min_pivots(A, tol=1e-12, impl=None):
    """Relative minimum pivot of a pivoted Cholesky sweep for each matrix in A."""
    A = np.ascontiguousarray(A, dtype=np.float64)
    if A.ndim == 2:
        A = A[None]
    return (impl or _impl).psd_min_pivots(A, float(tol))


def _prep_schwinger(W, U, x2, lw):
    W = np.ascontiguousarray(W, dtype=np.float64)
    U = np.ascontiguousarray(U, dtype=np.float64)
    x2 = np.ascontiguousarray(x2, dtype=np.float64)
    lw = np.ascontiguousarray(lw, dtype=np.float64)
    if np.any(np.diff(x2) < 0):
        raise ValueError("radial nodes must be increasing")
    return W, U, x2, lw


def schwinger_sum(W, U, uw, x2, lw, a, impl=None):
    """Radial moments exp(-a u.W.u s^2) summed over a simplex rule u, per W[p]."""
    W, U, x2, lw = _prep_schwinger(W, U, x2, lw)
    uw = np.ascontiguousarray(uw, dtype=np.float64)
    return (impl or _impl).schwinger_sum(W, U, uw, x2, lw, complex(a))


def schwinger_point(W, U, x2, lw, a, impl=None):
    """Radial moment at one simplex point per W[p]."""
    W, U, x2, lw = _prep_schwinger(W, U, x2, lw)
    return (impl or _impl).schwinger_point(W, U, x2, lw, complex(a))
