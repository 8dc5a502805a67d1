"""Loop vertex expansion: pressure series, Taylor/Borel diagnostics, two-point function.

log Z = sum_n 1/n! sum_T int_{[0,1]^{n-1}} dw E_{W^T(w)}[ prod_lines d/dsigma_v d/dsigma_v' prod_v V(sigma_v) ]

Each term is evaluated per isomorphism class of trees (the integrand is
invariant under relabeling the copies) and multiplied by the class size,
unless ``group=False`` asks for every labeled tree separately.
"""

from __future__ import annotations

import itertools
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy import special

from . import kernels
from .interp import (
    Estimate,
    QuadMode,
    QuadratureSpec,
    _simplex_rule,
    covariance_batch,
    normal_from_uniform,
    philox_normals,
    psd_sqrt,
    qmc_points,
    replicate_error,
    tensor_hermite,
    w_rule_tensor,
)
from .loopvertex import loop_vertex_batch, resolvent_batch, vertex_prefactor
from .model import ModelSpec, periodic_distances
from .trees import LabeledTree, enumerate_trees, tree_classes

DEFAULT_NMAX_ZERO_DIM = 7
DEFAULT_NMAX_LATTICE = 4
TREE_CAP = 9
_CHUNK = 1024


class SeriesDivergenceWarning(UserWarning):
    pass


class ExtrapolationError(ArithmeticError):
    pass


class InsufficientRangeError(ValueError):
    pass


@dataclass(frozen=True)
class QuadPolicy:
    """Deterministic rule for small trees, sampled rule beyond ``tensor_max_n``."""

    tensor: QuadratureSpec = QuadratureSpec(QuadMode.TENSOR, nodes=10, w_nodes=10)
    sampled: QuadratureSpec = QuadratureSpec(QuadMode.QMC, samples=2**14, replicates=8)
    tensor_max_n: int = 4
    estimate_error: bool = True

    def for_order(self, model: ModelSpec, n: int) -> QuadratureSpec:
        if not model.is_lattice and n <= self.tensor_max_n:
            return self.tensor
        return self.sampled


LATTICE_POLICY = QuadPolicy(
    sampled=QuadratureSpec(QuadMode.QMC, samples=2**12, replicates=8), tensor_max_n=0
)


def _policy(quad, model: ModelSpec) -> QuadPolicy:
    if quad is None:
        return LATTICE_POLICY if model.is_lattice else QuadPolicy()
    if isinstance(quad, QuadratureSpec):
        if quad.mode is QuadMode.TENSOR:
            return QuadPolicy(tensor=quad, tensor_max_n=4 if not model.is_lattice else 0,
                              sampled=QuadPolicy().sampled)
        return QuadPolicy(sampled=quad, tensor_max_n=0)
    return quad


# --- zero-dimensional tree terms -------------------------------------------

RADIAL_NODES = 64


def _zero_dim_vertex_mean(g, colors, q: int = 2 * RADIAL_NODES) -> Estimate:
    """E[V(sigma)] from log(1 + x) = int_0^inf (e^-t - e^-(1+x)t) dt / t.

    The Gaussian average of the second exponential is e^{-t - g^2 t^2 / 2},
    leaving int e^-t (1 - e^{-g^2 t^2 / 2}) / t dt, done on a fixed
    Gauss-Laguerre rule so the result is smooth in g^2.
    """
    a = complex(g) ** 2 / 2.0
    vals = []
    for nodes in (q, q // 2):
        x, w = special.roots_laguerre(nodes)
        vals.append(complex(np.sum(w * -np.expm1(-a * x * x) / x)))
    return Estimate(-0.5 * colors * vals[0], max(0.5 * colors * abs(vals[0] - vals[1]), 1e-16))


@lru_cache(maxsize=32)
def _radial_rule(m: int, q: int):
    """Generalized Gauss-Laguerre rule for s^m e^{-s} ds on [0, inf); returns (s^2, weights)."""
    x, w = special.roots_genlaguerre(q, m)
    return np.ascontiguousarray(x * x), np.ascontiguousarray(w)


def _simplex_points(ordered):
    """Map ordered points 0 <= s_1 <= ... <= s_m <= 1 to barycentric u of length m+1."""
    P, m = ordered.shape
    edges = np.concatenate([np.zeros((P, 1)), ordered, np.ones((P, 1))], axis=1)
    return np.diff(edges, axis=1)


def _conical_map(v):
    """Unit cube to the ordered simplex, s_m = v_m, s_i = v_i s_{i+1}; returns (s, jacobian)."""
    s = np.empty_like(v)
    m = v.shape[1]
    s[:, m - 1] = v[:, m - 1]
    for i in range(m - 2, -1, -1):
        s[:, i] = v[:, i] * s[:, i + 1]
    jac = np.prod(s[:, 1:], axis=1) if m > 1 else np.ones(len(v))
    return s, jac


def _schwinger_constants(tree):
    k = np.array(tree.degrees)
    m = int(np.sum(k - 1) + tree.n - 1)
    norm = 1.0
    for kv in k:
        norm /= math.factorial(kv - 1)
    return k, m, norm


def _zero_dim_schwinger_tensor(tree, g, qu, qw, qr=RADIAL_NODES) -> complex:
    k, m, norm = _schwinger_constants(tree)
    w, wt = w_rule_tensor(tree, qw)
    W = covariance_batch(tree, w)
    S, sw = _simplex_rule(tree.n - 1, qu)
    U = _simplex_points(S)
    uw = sw * np.prod(U ** (k - 1), axis=1)
    x2, lw = _radial_rule(m, qr)
    vals = kernels.schwinger_sum(W, U, uw, x2, lw, complex(g) ** 2 / 2.0)
    return complex(vals @ wt) * norm


def _zero_dim_schwinger_qmc(tree, g, quad: QuadratureSpec, stream, qr=RADIAL_NODES) -> Estimate:
    k, m, norm = _schwinger_constants(tree)
    d = tree.n - 1
    x2, lw = _radial_rule(m, qr)
    pts = qmc_points(2 * d, quad, stream)
    means = []
    for r in range(quad.replicates):
        W = covariance_batch(tree, pts[r, :, :d])
        S, jac = _conical_map(pts[r, :, d:])
        U = _simplex_points(S)
        vals = kernels.schwinger_point(W, U, x2, lw, complex(g) ** 2 / 2.0)
        # s -> u is volume preserving, so the jacobian alone carries the simplex measure
        means.append(np.mean(vals * jac * np.prod(U ** (k - 1), axis=1)))
    means = np.array(means) * norm
    return Estimate(complex(means.mean()), max(replicate_error(means), 1e-16))


def _zero_dim_prefactor(tree: LabeledTree, g, colors) -> complex:
    out = 1.0 + 0j
    for k in tree.degrees:
        out *= vertex_prefactor(k, g, colors) * math.factorial(k - 1)
    return out


def _zero_dim_tensor(tree, g, qh, qw) -> complex:
    k = np.array(tree.degrees)
    w, wt = w_rule_tensor(tree, qw)
    L = psd_sqrt(covariance_batch(tree, w))
    nodes, hw = tensor_hermite(qh, tree.n)
    vals = kernels.grid_vertex_sum(L, nodes, hw, k, g)
    return complex(vals @ wt)


def _zero_dim_sampled(tree, g, quad: QuadratureSpec, stream) -> Estimate:
    n, m = tree.n, tree.n - 1
    k = np.array(tree.degrees)
    if quad.mode is QuadMode.QMC:
        pts = qmc_points(m + n, quad, stream)
        means = []
        for r in range(quad.replicates):
            w = pts[r, :, :m]
            xi = normal_from_uniform(pts[r, :, m:])
            L = psd_sqrt(covariance_batch(tree, w))
            means.append(kernels.point_vertex_mean(L, xi, k, g).mean())
        means = np.array(means)
        return Estimate(complex(means.mean()), max(replicate_error(means), 1e-16))
    key = _stream_key(quad.seed, stream)
    u = np.random.Generator(np.random.Philox(key=key)).random((quad.samples, m))
    xi = philox_normals(key, 1, (quad.samples, n))
    L = psd_sqrt(covariance_batch(tree, u))
    vals = kernels.point_vertex_mean(L, xi, k, g)
    err = float(np.sqrt(np.sum(np.abs(vals - vals.mean()) ** 2) / (len(vals) - 1) / len(vals)))
    return Estimate(complex(vals.mean()), max(err, 1e-16))


def _stream_key(seed, stream) -> int:
    ss = np.random.SeedSequence(seed, spawn_key=tuple(stream))
    return int(ss.generate_state(2, np.uint64).view(np.uint64)[0])


def _zero_dim_tree_term(model: ModelSpec, tree: LabeledTree, quad: QuadratureSpec, stream,
                        method: str, estimate_error: bool = True) -> Estimate:
    g = model.g
    if tree.n == 1:
        return _zero_dim_vertex_mean(g, model.colors)
    pref = _zero_dim_prefactor(tree, g, model.colors)
    if method == "schwinger":
        if quad.mode is QuadMode.TENSOR:
            fine = _zero_dim_schwinger_tensor(tree, g, quad.nodes, quad.w_nodes)
            if not estimate_error:
                return Estimate(fine * pref, math.nan)
            coarse = _zero_dim_schwinger_tensor(tree, g, max(2, quad.nodes - 2), max(2, quad.w_nodes - 2),
                                                RADIAL_NODES - 16)
            err = max(abs(fine - coarse), 1e-15 * abs(fine))
            return Estimate(fine * pref, err * abs(pref))
        return _zero_dim_schwinger_qmc(tree, g, quad, stream).scale(pref)
    if method != "sigma":
        raise ValueError(f"unknown zero-dimensional method {method!r}")
    if quad.mode is QuadMode.TENSOR:
        fine = _zero_dim_tensor(tree, g, quad.nodes, quad.w_nodes)
        coarse = _zero_dim_tensor(tree, g, max(2, quad.nodes - 4), max(2, quad.w_nodes - 2))
        err = max(abs(fine - coarse), 1e-15 * abs(fine))
        return Estimate(fine * pref, err * abs(pref))
    return _zero_dim_sampled(tree, g, quad, stream).scale(pref)


# --- lattice tree terms ------------------------------------------------------

def _chain(R, msgs, order):
    """R U_{c1} R U_{c2} ... U_{ck} R for batched R (B,S,S) and messages (B,S)."""
    A = R
    for c in order:
        A = (A * msgs[c][:, None, :]) @ R
    return A


def contract_vacuum(tree: LabeledTree, R: dict, root: int) -> np.ndarray:
    """Sum over all line positions of prod_v (cyclic resolvent chain at v).

    Works leaf to root: each vertex sends its parent the diagonal of its
    chain summed over child orderings; the root closes the loop with a
    trace. Coupling prefactors are not included.
    """
    kids = tree.children(root)
    msgs = {}
    for v in tree.postorder(root):
        ch = kids[v]
        if v != root:
            acc = 0
            for perm in itertools.permutations(ch):
                acc = acc + np.diagonal(_chain(R[v], msgs, perm), axis1=-2, axis2=-1)
            msgs[v] = acc
        else:
            first, rest = ch[0], ch[1:]
            total = 0
            for perm in itertools.permutations(rest):
                A = _chain(R[v], msgs, perm)
                total = total + np.einsum("bx,bxx->b", msgs[first], A)
            return total
    raise AssertionError("root not reached")


def contract_resolvent(tree: LabeledTree, R: dict, root: int) -> np.ndarray:
    """Same contraction with ``root`` an open resolvent: returns (B, S, S) matrices."""
    kids = tree.children(root)
    msgs = {}
    for v in tree.postorder(root):
        ch = kids[v]
        if v == root:
            total = 0
            for perm in itertools.permutations(ch):
                total = total + _chain(R[v], msgs, perm)
            return total
        acc = 0
        for perm in itertools.permutations(ch):
            acc = acc + np.diagonal(_chain(R[v], msgs, perm), axis1=-2, axis2=-1)
        msgs[v] = acc
    raise AssertionError("root not reached")


def _lattice_samples(tree, model, quad: QuadratureSpec, stream):
    """Yield per replicate (or mc batch) lists of (sigma chunk (B,n,S)) arrays."""
    n, m = tree.n, tree.n - 1
    S = model.site_covariance().shape[0]
    dim = m + n * S
    if quad.mode is QuadMode.QMC:
        pts = qmc_points(dim, quad, stream)
        for r in range(quad.replicates):
            yield _sigma_chunks(tree, pts[r, :, :m], normal_from_uniform(pts[r, :, m:]), S)
    elif quad.mode is QuadMode.MC:
        key = _stream_key(quad.seed, stream)
        per = max(2, quad.samples // quad.replicates)
        for r in range(quad.replicates):
            u = np.random.Generator(np.random.Philox(key=key, counter=[0, 0, 2 * r, 0])).random((per, m))
            xi = philox_normals(key, 2 * r + 1, (per, n * S))
            yield _sigma_chunks(tree, u, xi, S)
    else:
        raise ValueError("lattice terms need qmc or mc quadrature")


def _sigma_chunks(tree, w, xi, S):
    n = tree.n
    out = []
    for start in range(0, w.shape[0], _CHUNK):
        wc = w[start:start + _CHUNK]
        L = psd_sqrt(covariance_batch(tree, wc)) if n > 1 else np.ones((len(wc), 1, 1))
        x = xi[start:start + _CHUNK].reshape(-1, n, S)
        out.append(np.einsum("bvu,bux->bvx", L, x))
    return out


def _lattice_tree_term(model, tree, quad, stream, root) -> Estimate:
    D = model.sqrt_covariance()
    g, N = model.g, model.colors
    pref = 1.0 + 0j
    for k in tree.degrees:
        pref *= vertex_prefactor(k, g, N)
    means = []
    for chunks in _lattice_samples(tree, model, quad, stream):
        tot, cnt = 0j, 0
        for sig in chunks:
            # +-sigma pairs keep the estimate even in g, hence analytic in lam
            for sgn in (1.0, -1.0):
                if tree.n == 1:
                    vals = loop_vertex_batch(sgn * sig[:, 0], D, g, N)
                else:
                    R = {v + 1: resolvent_batch(sgn * sig[:, v], D, g) for v in range(tree.n)}
                    vals = pref * contract_vacuum(tree, R, root)
                tot += complex(vals.sum())
                cnt += len(vals)
        means.append(tot / cnt)
    means = np.array(means)
    return Estimate(complex(means.mean()), max(replicate_error(means), 1e-16))


def tree_term(model: ModelSpec, tree: LabeledTree, quad=None, stream=(0,), root=None,
              method: str = "schwinger") -> Estimate:
    """Integrated contribution of one labeled tree (before the 1/n! weight).

    Lattice terms are summed over all line positions, so the sum over n of
    these gives log Z of the finite periodic lattice.

    In zero dimensions ``method="schwinger"`` writes each (1 + i g sigma_v)^-k
    as a Laplace integral, which turns the Gaussian average into
    exp(-g^2 t.W.t / 2) exactly and leaves a smooth integral over w, the
    simplex direction of t and its radius. ``method="sigma"`` samples or
    quadratures sigma directly from the resolvent chains.
    """
    model.require_analytic()
    if tree.n > TREE_CAP:
        raise ValueError(f"trees beyond n={TREE_CAP} are not supported")
    if model.lam == 0:
        return Estimate(0j, 0.0)
    policy = _policy(quad, model)
    spec = policy.for_order(model, tree.n)
    root = tree.root if root is None else root
    if model.is_lattice:
        return _lattice_tree_term(model, tree, spec, stream, root)
    return _zero_dim_tree_term(model, tree, spec, stream, method, policy.estimate_error)


# --- the series ----------------------------------------------------------------

def _fsum(values) -> complex:
    values = list(values)
    return complex(math.fsum(v.real for v in values), math.fsum(v.imag for v in values))


@dataclass
class SeriesAccumulator:
    terms: list = field(default_factory=list)
    errors: list = field(default_factory=list)
    partial_sums: list = field(default_factory=list)
    ratios: list = field(default_factory=list)
    tail_estimate: float = 0.0
    q: float = 0.0
    trees_evaluated: int = 0
    flagged: bool = False

    @property
    def total(self) -> complex:
        return self.partial_sums[-1] if self.partial_sums else 0j

    @property
    def integration_error(self) -> float:
        return math.sqrt(sum(e * e for e in self.errors))

    @property
    def tail_ratio(self) -> float:
        """Last term ratio, the one the tail extrapolation uses."""
        return self.ratios[-1] if self.ratios else 0.0

    def finalize(self):
        self.partial_sums = [_fsum(self.terms[: i + 1]) for i in range(len(self.terms))]
        mags = [abs(t) for t in self.terms]
        self.ratios = [mags[i + 1] / mags[i] if mags[i] > 0 else 0.0 for i in range(len(mags) - 1)]
        # the n = 1 -> 2 ratio is excluded: both terms start at order lambda
        later = self.ratios[1:]
        self.q = max(later) if later else (self.ratios[0] if self.ratios else 0.0)
        self.flagged = any(r >= 1.0 for r in later)
        if not self.ratios or mags[-1] == 0.0:
            self.tail_estimate = 0.0
        elif self.ratios[-1] >= 1.0:
            self.tail_estimate = math.inf
        else:
            rho = self.ratios[-1]
            self.tail_estimate = mags[-1] * rho / (1.0 - rho)
        return self


def _tasks(n, group, root):
    if group:
        return [(rep.with_root(min(root, n)), mult, (n, i))
                for i, (rep, mult) in enumerate(tree_classes(n))]
    return [(t.with_root(min(root, n)), 1, (n, i)) for i, t in enumerate(enumerate_trees(n))]


def pressure_series(model: ModelSpec, n_max: int | None = None, quad=None, root: int = 1,
                    group: bool = True, threads: int = 1, method: str = "schwinger") -> SeriesAccumulator:
    """Partial sums of the tree expansion of log Z up to n_max loop vertices.

    For a lattice the total is log Z of the whole periodic lattice; divide
    by ``sites * cell_volume`` for the pressure.
    """
    model.require_analytic()
    if n_max is None:
        n_max = DEFAULT_NMAX_LATTICE if model.is_lattice else DEFAULT_NMAX_ZERO_DIM
    if not 1 <= n_max <= TREE_CAP:
        raise ValueError(f"n_max must be in 1..{TREE_CAP}")
    acc = SeriesAccumulator()
    if model.lam == 0:
        acc.terms = [0j] * n_max
        acc.errors = [0.0] * n_max
        acc.trees_evaluated = sum(n ** (n - 2) if n > 1 else 1 for n in range(1, n_max + 1))
        return acc.finalize()
    policy = _policy(quad, model)
    jobs = [(n, t, mult, stream) for n in range(1, n_max + 1) for t, mult, stream in _tasks(n, group, root)]

    def run(job):
        n, t, mult, stream = job
        return tree_term(model, t, policy, stream, method=method).scale(mult / math.factorial(n))

    if threads and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run, jobs))
    else:
        results = [run(j) for j in jobs]
    for n in range(1, n_max + 1):
        mine = [r for (jn, *_), r in zip(jobs, results) if jn == n]
        acc.terms.append(_fsum(r.value for r in mine))
        acc.errors.append(math.sqrt(math.fsum(r.error ** 2 for r in mine)))
    acc.trees_evaluated = sum(mult for _, _, mult, _ in jobs)
    acc.finalize()
    if acc.flagged:
        warnings.warn(f"term magnitudes stopped decreasing (ratios {acc.ratios}); lambda too large?",
                      SeriesDivergenceWarning, stacklevel=2)
    return acc


# --- Taylor coefficients and Borel diagnostics -------------------------------

@dataclass(frozen=True)
class TaylorResult:
    coeffs: tuple
    errors: tuple
    converged: tuple
    levels: int

    @property
    def all_converged(self) -> bool:
        return all(self.converged)


def taylor_coefficients(model: ModelSpec, order: int, quad=None, h0: float | None = None,
                        rtol: float = 1e-6, max_levels: int = 7, extra: int = 3,
                        fail_rtol: float = 1e-2) -> TaylorResult:
    """a_0..a_order of log Z in lambda from Richardson-extrapolated finite differences.

    The series is truncated at n_max = order + 1 (a tree on n vertices
    starts at order lambda^(n-1)) and sampled at lambda = i h, i = 1..P with
    P = order + extra; a degree-P interpolant through these points and the
    origin gives every coefficient at once with error O(h^(P+1-k)), and h is
    halved until the extrapolated values agree to ``rtol``.

    Rounding in f is amplified like h^-k, so high coefficients can stop
    improving before reaching ``rtol``. Each coefficient keeps the diagonal
    entry with the smallest change between levels, halving stops once every
    unsettled change has grown twice in a row, and ``converged`` records
    which coefficients met ``rtol``. Only a change above ``fail_rtol``
    raises.
    """
    limit = 5 if not model.is_lattice else 3
    if not 1 <= order <= limit:
        raise ValueError(f"order must be in 1..{limit} for this model kind")
    if quad is None and not model.is_lattice:
        # fixed nodes make f exactly smooth in lam; only values are needed
        quad = QuadPolicy(tensor=QuadratureSpec(QuadMode.TENSOR, nodes=8, w_nodes=8), estimate_error=False)
    n_max = order + 1
    P = order + extra
    if h0 is None:
        h0 = 2e-3 if not model.is_lattice else 1e-2
    cache = {}

    def f(lam):
        key = round(lam / h0 * 2**max_levels)
        if key not in cache:
            cache[key] = pressure_series(model.with_lam(lam), n_max, quad).total
        return cache[key]

    def level(h):
        x = np.arange(1, P + 1, dtype=float)
        vals = np.array([f(h * xi) for xi in x])
        V = np.vander(x, P + 1, increasing=True)[:, 1:]
        c = np.linalg.solve(V, vals)
        return np.array([c[k - 1] / h ** k for k in range(1, order + 1)])

    table = [[level(h0)]]
    best = table[0][0].copy()
    best_diff = np.full(order, np.inf)
    growing = np.zeros(order, dtype=int)
    prev_diff = np.full(order, np.inf)
    for i in range(1, max_levels):
        row = [level(h0 / 2**i)]
        for col in range(1, i + 1):
            p = np.array([P + 1 - k + (col - 1) for k in range(1, order + 1)], dtype=float)
            fac = 2.0 ** p
            row.append((fac * row[col - 1] - table[i - 1][col - 1]) / (fac - 1.0))
        diff = np.abs(row[-1] - table[-1][-1])
        table.append(row)
        better = diff < best_diff
        best = np.where(better, row[-1], best)
        best_diff = np.where(better, diff, best_diff)
        growing = np.where(diff > prev_diff, growing + 1, 0)
        prev_diff = diff
        settled = best_diff <= rtol * np.abs(best)
        if np.all(settled | (growing >= 2)):
            break
    settled = best_diff <= rtol * np.abs(best)
    bad = best_diff > fail_rtol * np.abs(best)
    if np.any(bad):
        raise ExtrapolationError(
            f"Richardson table did not settle: relative changes {(best_diff / np.abs(best)).tolist()}"
        )
    return TaylorResult((0j, *map(complex, best)), (0.0, *map(float, best_diff)),
                        (True, *map(bool, settled)), len(table))


@dataclass(frozen=True)
class BorelDiagnostics:
    coeffs: tuple
    probes: tuple
    values: tuple
    remainders: dict
    A: float
    rho: float
    residual: float

    def bound(self, r, lam) -> float:
        return self.A * self.rho ** r * math.factorial(r) * abs(lam) ** r

    @property
    def bound_holds(self) -> bool:
        return all(abs(R) <= self.bound(r, lam) * (1 + 1e-12)
                   for lam, rs in zip(self.probes, self.remainders.values())
                   for r, R in enumerate(rs))


def borel_remainder_check(model: ModelSpec, probes, r_max: int, coeffs=None, n_max=None,
                          quad=None) -> BorelDiagnostics:
    """Taylor remainders R_r(lam) = f(lam) - sum_{k<r} a_k lam^k and a fit of A rho^r r! |lam|^r.

    rho comes from least squares on log|R_r| - log r! - r log|lam|; A is then
    the smallest constant for which the bound holds at every computed point.
    """
    probes = tuple(complex(p) for p in probes)
    for p in probes:
        if not p.real > 0:
            raise ValueError("Borel probes need Re(lambda) > 0")
    if coeffs is None:
        coeffs = taylor_coefficients(model, r_max - 1, quad).coeffs
    coeffs = tuple(complex(c) for c in coeffs)
    if len(coeffs) < r_max:
        raise ValueError(f"need coefficients a_0..a_{r_max - 1}")
    if n_max is None:
        base = DEFAULT_NMAX_LATTICE if model.is_lattice else DEFAULT_NMAX_ZERO_DIM
        n_max = max(base, r_max + 1)
    values, rem = [], {}
    xs, ys = [], []
    for lam in probes:
        f = pressure_series(model.with_lam(lam), n_max, quad).total
        values.append(f)
        rs = []
        partial = 0j
        for r in range(r_max + 1):
            rs.append(f - partial)
            if r < len(coeffs):
                partial += coeffs[r] * lam ** r
        rem[lam] = tuple(rs)
        for r, R in enumerate(rs):
            if abs(R) > 0:
                xs.append(r)
                ys.append(math.log(abs(R)) - math.lgamma(r + 1) - r * math.log(abs(lam)))
    xs, ys = np.array(xs, float), np.array(ys)
    slope, intercept = np.polyfit(xs, ys, 1)
    rho = math.exp(slope)
    resid = ys - (intercept + slope * xs)
    A = math.exp(float(np.max(ys - slope * xs)))
    return BorelDiagnostics(coeffs, probes, tuple(values), rem, A, rho,
                            float(np.sqrt(np.mean(resid ** 2))))


# --- two-point function -----------------------------------------------------------

@dataclass
class TwoPointResult:
    model: ModelSpec
    values: np.ndarray
    errors: np.ndarray
    separations: np.ndarray
    profile: np.ndarray
    profile_errors: np.ndarray
    per_n: list
    tail: np.ndarray
    x: int = 0
    y: int = 0

    @property
    def value(self) -> complex:
        return complex(self.values[self.x, self.y])

    @property
    def error(self) -> float:
        return float(self.errors[self.x, self.y])


def separation_classes(model: ModelSpec):
    """Pair distances (units of M^-j) and their distinct values; index distance without a slice."""
    if model.slice is None:
        S = model.site_covariance().shape[0]
        d = np.abs(np.subtract.outer(np.arange(S), np.arange(S))).astype(float)
        return d, np.unique(d)
    return periodic_distances(model.slice)


def _profile(mat, d, classes):
    return np.array([mat[d == c].mean() for c in classes])


def _resolvent_samples(tree, model, quad, stream):
    D = model.sqrt_covariance()
    g = model.g
    out = []
    for chunks in _lattice_samples(tree, model, quad, stream):
        tot, cnt = 0, 0
        for sig in chunks:
            for sgn in (1.0, -1.0):
                R = {v + 1: resolvent_batch(sgn * sig[:, v], D, g) for v in range(tree.n)}
                vals = contract_resolvent(tree, R, 1)
                tot = tot + vals.sum(axis=0)
                cnt += vals.shape[0]
        out.append(tot / cnt)
    return np.array(out)


def two_point_function(model: ModelSpec, x: int = 0, y: int = 0, n_max: int | None = None,
                       quad=None, threads: int = 1) -> TwoPointResult:
    """<phi_x phi_y> from trees over one resolvent (vertex 1) and n loop vertices.

    Per replicate the whole site matrix is estimated, so errors come from
    the replicate spread; ``profile`` averages over pairs at equal periodic
    distance.
    """
    if not model.is_lattice:
        raise ValueError("the two-point function needs a lattice model")
    model.require_analytic()
    if n_max is None:
        n_max = DEFAULT_NMAX_LATTICE
    C = model.site_covariance()
    S = C.shape[0]
    d, classes = separation_classes(model)
    policy = _policy(quad, model)
    spec = policy.sampled
    g = model.g
    if model.lam == 0:
        zero = np.zeros_like(C)
        return TwoPointResult(model, C.astype(complex), zero, classes, _profile(C, d, classes) + 0j,
                              np.zeros(len(classes)), [_profile(C, d, classes) + 0j], np.zeros(len(classes)),
                              x, y)

    jobs = []
    for n in range(0, n_max + 1):
        for i, (rep, mult) in enumerate(tree_classes(n + 1, rooted=True)):
            jobs.append((n, rep, mult, (100 + n, i)))

    def run(job):
        n, rep, mult, stream = job
        reps = _resolvent_samples(rep, model, spec, stream)
        pref = (-1j * g) ** rep.degrees[0]
        for k in rep.degrees[1:]:
            pref *= vertex_prefactor(k, g, model.colors)
        return reps * (pref * mult / math.factorial(n))

    if threads and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run, jobs))
    else:
        results = [run(j) for j in jobs]
    per_rep = np.zeros((spec.replicates, S, S), dtype=complex)
    per_n_rep = []
    for n in range(0, n_max + 1):
        tot = sum(r for (jn, *_), r in zip(jobs, results) if jn == n)
        per_n_rep.append(tot)
        per_rep = per_rep + tot
    per_rep = 0.5 * (per_rep + per_rep.transpose(0, 2, 1))
    values = per_rep.mean(axis=0)
    errors = np.sqrt(np.sum(np.abs(per_rep - values) ** 2, axis=0) / (spec.replicates - 1) / spec.replicates)
    profs = np.array([_profile(m, d, classes) for m in per_rep])
    profile = profs.mean(axis=0)
    perr = np.array([replicate_error(profs[:, c]) for c in range(len(classes))])
    per_n = [_profile(t.mean(axis=0), d, classes) for t in per_n_rep]
    mags = np.abs(np.array(per_n))
    with np.errstate(divide="ignore", invalid="ignore"):
        rho = np.where(mags[-2] > 0, mags[-1] / mags[-2], 0.0)
    tail = np.where(rho < 1, mags[-1] * rho / (1 - rho), np.inf)
    return TwoPointResult(model, values, errors, classes, profile, perr, per_n, tail, x, y)


@dataclass(frozen=True)
class DecayFit:
    c_hat: float
    K_hat: float
    residual: float
    separations: tuple


def decay_rate_fit(result: TwoPointResult, max_separation: float | None = None,
                   noise_sigmas: float = 3.0, min_separation: float = 0.0) -> DecayFit:
    """Least-squares fit of log|S| against M^j |x - y| over separations above noise.

    The coincident point is always excluded: the slice kernel is flat at zero
    separation, so it sits above the exponential envelope. Separations beyond
    a quarter of the lattice extent are skipped by default to stay clear of
    the periodic wrap-around. ``residual`` is the RMS misfit
    in log|S| as a fraction of the fitted range of log|S|.
    """
    sl = result.model.slice
    if max_separation is None:
        max_separation = sl.sites * sl.spacing / 4.0 if sl is not None else np.inf
    t = np.asarray(result.separations, float)
    S = np.abs(np.asarray(result.profile))
    err = np.asarray(result.profile_errors, float) + np.asarray(result.tail, float)
    ok = (t > min_separation) & (t <= max_separation + 1e-12) & (S > noise_sigmas * err) & (S > 0)
    if ok.sum() < 4:
        raise InsufficientRangeError(
            f"insufficient dynamic range: {int(ok.sum())} usable separations, need 4"
        )
    t, logs = t[ok], np.log(S[ok])
    slope, intercept = np.polyfit(t, logs, 1)
    c_hat = -slope
    resid = logs - (intercept + slope * t)
    span = logs.max() - logs.min()
    M, j = (sl.M, sl.j) if sl is not None else (1.0, 0)
    K_hat = float(np.max(S[ok] * float(M) ** (-2 * j) * np.exp(c_hat * t)))
    return DecayFit(float(c_hat), K_hat, float(np.sqrt(np.mean(resid ** 2)) / span), tuple(t))
