"""Time the compiled kernels against their numpy twins on workloads the engine produces.

    python3 benchmarks/bench_kernels.py [--repeat 5]

Prints one line per kernel: best wall time for each backend, the speedup,
and the largest relative difference between the two results.
"""

import argparse
import timeit

import numpy as np

from lve import _pykernels, kernels
from lve.engine import _radial_rule, _simplex_points
from lve.interp import _simplex_rule, covariance_batch, w_rule_tensor
from lve.trees import prufer_decode

try:
    from lve import _ckernels
except ImportError:  # nothing to compare against
    _ckernels = None


def workloads():
    rng = np.random.default_rng(0)
    tree = prufer_decode((2, 2), 4)
    w, _ = w_rule_tensor(tree, 6)
    W = covariance_batch(tree, w)
    S, uw = _simplex_rule(3, 6)
    U = _simplex_points(S)
    x2, lw = _radial_rule(3, 64)
    yield "schwinger_sum", lambda impl: kernels.schwinger_sum(W, U, uw, x2, lw, 0.2 + 0.05j, impl=impl)

    Wp = W[rng.integers(0, len(W), 20000)]
    Up = U[rng.integers(0, len(U), 20000)]
    yield "schwinger_point", lambda impl: kernels.schwinger_point(Wp, Up, x2, lw, 0.2, impl=impl)

    L = np.linalg.cholesky(W[:400] + 1e-9 * np.eye(4))
    nodes = rng.standard_normal((400, 4))
    wts = np.full(400, 1 / 400)
    k = np.array([1, 3, 1, 1])
    yield "grid_vertex_sum", lambda impl: kernels.grid_vertex_sum(L, nodes, wts, k, 0.6, impl=impl)

    Lp = np.linalg.cholesky(W[rng.integers(0, len(W), 50000)] + 1e-9 * np.eye(4))
    xi = rng.standard_normal((50000, 4))
    yield "point_vertex_mean", lambda impl: kernels.point_vertex_mean(Lp, xi, k, 0.6, impl=impl)

    trees = [prufer_decode(rng.integers(1, 9, size=6), 8) for _ in range(200)]
    A = np.concatenate([covariance_batch(t, rng.random((25, 7))) for t in trees])
    yield "psd_min_pivots", lambda impl: kernels.psd_min_pivots(A, impl=impl)


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args()
    if _ckernels is None:
        raise SystemExit("compiled extension not built; run pip install -e . --no-build-isolation")
    print(f"{'kernel':<18} {'compiled':>11} {'python':>11} {'speedup':>8} {'max rel diff':>13}")
    for name, fn in workloads():
        fast = min(timeit.repeat(lambda: fn(_ckernels), number=1, repeat=args.repeat))
        slow = min(timeit.repeat(lambda: fn(_pykernels), number=1, repeat=args.repeat))
        a, b = np.asarray(fn(_ckernels)), np.asarray(fn(_pykernels))
        diff = float(np.max(np.abs(a - b) / np.maximum(np.abs(b), 1e-300)))
        print(f"{name:<18} {fast * 1e3:>9.2f}ms {slow * 1e3:>9.2f}ms {slow / fast:>7.1f}x {diff:>13.1e}")


if __name__ == "__main__":
    main()
