"""Interpolated Gaussian measures attached to a tree and their expectations.

For a tree T and weakening parameters w (one per edge) the copies
sigma_1..sigma_n are jointly Gaussian with covariance W[u, v] = smallest w on
the u-v path (1 on the diagonal). Equivalently W = int_0^1 B_t dt where B_t
is the block matrix of components of the forest {edges with w >= t}; this
is why W is positive.
"""

from __future__ import annotations

import enum
import itertools
import math
from dataclasses import dataclass
from functools import cached_property, lru_cache

import numpy as np
from scipy.stats import norm, qmc

from . import kernels
from .trees import LabeledTree

PSD_TOL = 1e-12
# floor for quadrature error estimates, relative to sum |w f|
ROUNDOFF = 64 * np.finfo(float).eps
MAX_TENSOR_DIM = 8


class CovarianceError(ArithmeticError):
    """A tree covariance failed the positivity check."""


class IntegrationError(ArithmeticError):
    pass


class QuadMode(str, enum.Enum):
    TENSOR = "tensor"
    QMC = "qmc"
    MC = "mc"


@dataclass(frozen=True)
class QuadratureSpec:
    """How to integrate over sigma (and w).

    ``nodes`` is the Gauss-Hermite order per axis (tensor mode), ``w_nodes``
    the Gauss-Legendre order per simplex axis for weakening parameters,
    ``samples`` the points per replicate (qmc, rounded up to a power of two)
    or total draws (mc).
    """

    mode: QuadMode = QuadMode.TENSOR
    nodes: int = 12
    w_nodes: int = 8
    samples: int = 2**14
    replicates: int = 8
    seed: int = 20240611

    def __post_init__(self):
        object.__setattr__(self, "mode", QuadMode(self.mode))
        if self.nodes < 1 or self.w_nodes < 1 or self.samples < 2 or self.replicates < 2:
            raise ValueError("quadrature sizes must be positive (replicates >= 2)")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")


@dataclass(frozen=True)
class Estimate:
    value: complex
    error: float

    def __add__(self, other):
        return Estimate(self.value + other.value, math.hypot(self.error, other.error))

    def scale(self, c):
        return Estimate(self.value * c, self.error * abs(c))


@dataclass(frozen=True)
class TreeCovariance:
    n: int
    W: np.ndarray
    min_pivot: float = 1.0

    @cached_property
    def sqrt_factor(self) -> np.ndarray:
        """L with L @ L.T == W, via eigendecomposition (W may be singular)."""
        return psd_sqrt(self.W[None])[0]

    @cached_property
    def chol(self) -> np.ndarray:
        """Lower-triangular factor; exists only when W is strictly positive."""
        return np.linalg.cholesky(self.W)


def psd_sqrt(W: np.ndarray) -> np.ndarray:
    """Batched symmetric square roots of PSD matrices, shape (P, n, n)."""
    vals, vecs = np.linalg.eigh(W)
    return vecs * np.sqrt(np.clip(vals, 0.0, None))[:, None, :]


def path_rank_table(tree: LabeledTree) -> list:
    """For every off-diagonal pair (u, v), u < v (0-based), the edge indices of its path."""
    return [(u - 1, v - 1, tree.path_edges(u, v))
            for u, v in itertools.combinations(range(1, tree.n + 1), 2)]


def covariance_batch(tree: LabeledTree, w: np.ndarray) -> np.ndarray:
    """W^T(w) for a batch of weakening vectors w of shape (P, n-1)."""
    w = np.asarray(w, dtype=float)
    P = w.shape[0]
    W = np.ones((P, tree.n, tree.n))
    for u, v, idx in path_rank_table(tree):
        m = w[:, idx].min(axis=1)
        W[:, u, v] = m
        W[:, v, u] = m
    return W


def build_covariance(tree: LabeledTree, w) -> TreeCovariance:
    w = np.asarray(w, dtype=float).reshape(-1)
    if w.shape[0] != tree.n - 1:
        raise ValueError(f"need {tree.n - 1} weakening parameters, got {w.shape[0]}")
    if np.any(w < 0) or np.any(w > 1):
        raise ValueError("weakening parameters must lie in [0, 1]")
    W = covariance_batch(tree, w[None])[0]
    piv = float(kernels.psd_min_pivots(W, PSD_TOL)[0])
    if piv < -PSD_TOL:
        raise CovarianceError(
            f"tree covariance not positive (pivot {piv:.3e}) for edges {tree.edges}, w={w.tolist()}"
        )
    W.setflags(write=False)
    return TreeCovariance(tree.n, W, piv)


# --- quadrature rules -----------------------------------------------------

@lru_cache(maxsize=64)
def hermite_rule(q: int):
    """Probabilists' Gauss-Hermite nodes and weights normalized to sum 1."""
    x, wts = np.polynomial.hermite_e.hermegauss(q)
    return x, wts / wts.sum()


@lru_cache(maxsize=64)
def tensor_hermite(q: int, dim: int, prune: float = 1e-18):
    """Tensor product rule for N(0, I_dim); negligible product weights dropped."""
    x, wts = hermite_rule(q)
    nodes = np.array(list(itertools.product(x, repeat=dim))).reshape(-1, dim)
    weights = np.prod(np.array(list(itertools.product(wts, repeat=dim))).reshape(-1, dim), axis=1)
    keep = weights > prune * weights.max()
    nodes, weights = nodes[keep], weights[keep]
    return nodes, weights / weights.sum()


@lru_cache(maxsize=64)
def _simplex_rule(m: int, q: int):
    """Nodes s_1 <= ... <= s_m of the unit ordered simplex, with weights.

    Uses s_m = u_m, s_i = u_i s_{i+1} on a Gauss-Legendre grid in u; the
    Jacobian prod_{i>=2} s_i is polynomial so the rule stays spectral.
    """
    x, wts = np.polynomial.legendre.leggauss(q)
    x = 0.5 * (x + 1.0)
    wts = 0.5 * wts
    U = np.array(list(itertools.product(x, repeat=m))).reshape(-1, m)
    Wt = np.prod(np.array(list(itertools.product(wts, repeat=m))).reshape(-1, m), axis=1)
    S = np.empty_like(U)
    S[:, m - 1] = U[:, m - 1]
    for i in range(m - 2, -1, -1):
        S[:, i] = U[:, i] * S[:, i + 1]
    jac = np.prod(S[:, 1:], axis=1) if m > 1 else np.ones(len(U))
    return S, Wt * jac


def w_rule_tensor(tree: LabeledTree, q: int):
    """Nodes and weights for integrating over w in [0,1]^(n-1).

    The cube is split into the (n-1)! regions of fixed edge ordering, on each
    of which W^T is linear in the sorted values, so the min-kinks sit on
    region boundaries and never inside a cell.
    """
    m = tree.n - 1
    if m == 0:
        return np.zeros((1, 0)), np.ones(1)
    S, wt = _simplex_rule(m, q)
    blocks = []
    for perm in itertools.permutations(range(m)):
        w = np.empty_like(S)
        w[:, list(perm)] = S
        blocks.append(w)
    return np.concatenate(blocks), np.tile(wt, math.factorial(m))


def qmc_points(dim: int, quad: QuadratureSpec, stream=()):
    """Scrambled Sobol replicates, shape (replicates, samples, dim).

    The scrambling for replicate r is keyed on (seed, *stream, r), so every
    caller that passes a distinct ``stream`` gets independent, reproducible
    points regardless of evaluation order.
    """
    m = max(1, int(math.ceil(math.log2(quad.samples))))
    out = np.empty((quad.replicates, 2**m, dim))
    for r in range(quad.replicates):
        ss = np.random.SeedSequence(quad.seed, spawn_key=tuple(stream) + (r,))
        eng = qmc.Sobol(dim, scramble=True, seed=np.random.default_rng(ss))
        out[r] = eng.random_base2(m)
    return out


def philox_normals(seed: int, batch: int, shape):
    """Standard normals from a counter-based stream keyed on (seed, batch)."""
    bitgen = np.random.Philox(key=seed, counter=[0, 0, batch, 0])
    return np.random.Generator(bitgen).standard_normal(shape)


def normal_from_uniform(u):
    return norm.ppf(np.clip(u, 1e-300, 1 - 1e-16))


def replicate_error(means) -> float:
    """Standard error of the mean of independent (complex) replicate estimates."""
    means = np.asarray(means, dtype=complex)
    spread = np.sum(np.abs(means - means.mean()) ** 2) / (len(means) - 1)
    return float(math.sqrt(spread / len(means)))


# --- expectations ---------------------------------------------------------

def _apply(L, xi, sites):
    """sigma[s, v, x] = sum_u L[v, u] xi[s, u, x] (xi flat: (S, n*sites))."""
    n = L.shape[-1]
    xi = xi.reshape(xi.shape[0], n, sites)
    sigma = np.einsum("vu,sux->svx", L, xi)
    return sigma[..., 0] if sites == 1 else sigma


def _check_finite(vals):
    if not np.all(np.isfinite(vals)):
        raise IntegrationError("integrand returned a non-finite value")


def gaussian_expectation(cov: TreeCovariance, integrand, quad: QuadratureSpec, sites: int = 1,
                         refine: int = 4) -> Estimate:
    """E[integrand(sigma)] for sigma ~ N(0, W (x) I_sites).

    ``integrand`` receives a batch of samples, shape (S, n) when sites == 1
    and (S, n, sites) otherwise, and returns S values. Tensor mode estimates
    its error by comparing with ``nodes - refine`` nodes; qmc by the spread
    of independently scrambled replicates; mc by the sample variance.
    """
    n = cov.n
    dim = n * sites
    L = cov.sqrt_factor
    if quad.mode is QuadMode.TENSOR:
        if dim > MAX_TENSOR_DIM:
            raise ValueError(f"tensor quadrature limited to dimension {MAX_TENSOR_DIM}, got {dim}")

        def rule(q):
            nodes, wts = tensor_hermite(q, dim)
            vals = np.asarray(integrand(_apply(L, nodes, sites)), dtype=complex)
            _check_finite(vals)
            return complex(vals @ wts), float(np.abs(vals) @ wts)

        fine, mass = rule(quad.nodes)
        coarse, _ = rule(max(1, quad.nodes - refine))
        err = max(abs(fine - coarse), ROUNDOFF * max(1.0, mass))
        return Estimate(fine, err)
    if quad.mode is QuadMode.QMC:
        pts = qmc_points(dim, quad)
        means = []
        for r in range(quad.replicates):
            xi = normal_from_uniform(pts[r])
            vals = np.asarray(integrand(_apply(L, xi, sites)), dtype=complex)
            _check_finite(vals)
            means.append(vals.mean())
        means = np.array(means)
        return Estimate(complex(means.mean()), max(replicate_error(means), 1e-15))
    # plain Monte Carlo in fixed-size batches
    total = quad.samples
    batch = 4096
    acc = []
    for b in range(int(math.ceil(total / batch))):
        size = min(batch, total - b * batch)
        xi = philox_normals(quad.seed, b, (size, dim))
        vals = np.asarray(integrand(_apply(L, xi, sites)), dtype=complex)
        _check_finite(vals)
        acc.append(vals)
    vals = np.concatenate(acc)
    err = float(np.sqrt((np.abs(vals - vals.mean()) ** 2).sum() / (len(vals) - 1) / len(vals)))
    return Estimate(complex(vals.mean()), max(err, 1e-15))


@dataclass(frozen=True)
class ReplicaReport:
    n: int
    single: Estimate
    replica: Estimate
    deviation: float
    combined_error: float

    @property
    def passed(self) -> bool:
        return self.deviation <= self.combined_error


def replica_identity_check(f, n: int, quad: QuadratureSpec, single_nodes: int = 80) -> ReplicaReport:
    """Compare E[f(s, ..., s)] for one Gaussian s with E[f(s_1..s_n)] under all-ones covariance.

    The one-variable side uses a Gauss-Hermite rule of ``single_nodes``
    points (error from halving it); the replica side goes through
    :func:`gaussian_expectation` in n dimensions.
    """
    x, wts = hermite_rule(single_nodes)
    xh, wh = hermite_rule(single_nodes // 2)

    def diag(z):
        vals = np.asarray(f(np.repeat(z[:, None], n, axis=1)), dtype=complex)
        _check_finite(vals)
        return vals

    vals = diag(x)
    fine = complex(vals @ wts)
    coarse = complex(diag(xh) @ wh)
    single = Estimate(fine, max(abs(fine - coarse), ROUNDOFF * max(1.0, float(np.abs(vals) @ wts))))
    ones = TreeCovariance(n, np.ones((n, n)))
    replica = gaussian_expectation(ones, f, quad)
    dev = abs(single.value - replica.value)
    return ReplicaReport(n, single, replica, dev, single.error + replica.error)
