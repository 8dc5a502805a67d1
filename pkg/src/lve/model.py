"""Model specifications, the single-slice propagator and its lattice discretization.

Lengths are physical; a slice ``j`` of base ``M`` has correlation length of
order ``M**-j``. Lattice spacings are given in units of that length so the
same :class:`SliceSpec` geometry can be reused across ``j``.

Each lattice site carries the volume element ``spacing**dim * M**(-4 j)``:
the ``dim`` lattice directions have cell width ``spacing * M**-j`` and the
remaining ``4 - dim`` directions are a single cell of width ``M**-j``. With
this convention the slice power counting is that of four dimensions for any
lattice dimension, and ``lam`` stays dimensionless.
"""

from __future__ import annotations

import enum
import itertools
import math
import warnings
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import integrate

# squared separation (in units of M**-j) beyond which e^{-t^2/4M^2} < 1e-18
_IMAGE_CUTOFF = 2.0 * math.sqrt(math.log(1e18))


class DiscretizationError(ValueError):
    """Lattice covariance is not positive within tolerance, or too large."""


class ConvergenceError(RuntimeError):
    """An iterative routine hit its iteration cap."""


class ModelKind(str, enum.Enum):
    ZERO_DIM = "zero-d"
    LATTICE = "lattice"


@dataclass(frozen=True)
class SliceSpec:
    M: float = 2.0
    j: int = 0
    mass: float = 0.0
    dim: int = 1
    sites: int = 4
    spacing: float = 1.0

    def __post_init__(self):
        if not self.M > 1:
            raise ValueError("slice base M must exceed 1")
        if int(self.j) != self.j or self.j < 0:
            raise ValueError("slice index j must be a non-negative integer")
        if self.mass < 0:
            raise ValueError("mass must be non-negative")
        if self.dim not in (1, 2, 3, 4):
            raise ValueError("dim must be 1, 2, 3 or 4")
        if self.sites < 1:
            raise ValueError("need at least one site per axis")
        if not self.spacing > 0:
            raise ValueError("spacing must be positive")

    @property
    def n_sites(self) -> int:
        return self.sites ** self.dim

    @property
    def length_unit(self) -> float:
        """Physical length of one correlation length, M**-j."""
        return float(self.M) ** (-self.j)

    @property
    def cell_volume(self) -> float:
        return self.spacing ** self.dim * float(self.M) ** (-4 * self.j)

    def coordinates(self) -> np.ndarray:
        """Physical site coordinates, shape (n_sites, dim), in lexicographic order."""
        grid = itertools.product(range(self.sites), repeat=self.dim)
        return np.array(list(grid), dtype=float) * self.spacing * self.length_unit

    def with_j(self, j: int) -> "SliceSpec":
        return SliceSpec(self.M, j, self.mass, self.dim, self.sites, self.spacing)


@dataclass(frozen=True)
class ModelSpec:
    """A zero-dimensional model or a finite periodic lattice in one slice.

    ``covariance`` replaces the slice kernel with an explicit site covariance
    (tuple of rows); the cell volume is then 1.
    """

    kind: ModelKind = ModelKind.ZERO_DIM
    lam: complex = 0.0
    colors: int = 1
    slice: SliceSpec | None = None
    covariance: tuple | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", ModelKind(self.kind))
        object.__setattr__(self, "lam", complex(self.lam))
        if self.colors < 1 or int(self.colors) != self.colors:
            raise ValueError("colors must be a positive integer")
        if not np.isfinite(self.lam.real) or not np.isfinite(self.lam.imag):
            raise ValueError("coupling must be finite")
        if self.kind is ModelKind.LATTICE and self.slice is None and self.covariance is None:
            raise ValueError("lattice models need a SliceSpec or an explicit covariance")

    def with_lam(self, lam) -> "ModelSpec":
        return ModelSpec(self.kind, complex(lam), self.colors, self.slice, self.covariance)

    def require_analytic(self):
        """Series evaluators need Re(lam) > 0; lam == 0 is the free theory."""
        if self.lam != 0 and not self.lam.real > 0:
            raise ValueError(f"Re(lambda) must be positive, got {self.lam}")

    @property
    def is_lattice(self) -> bool:
        return self.kind is ModelKind.LATTICE

    @property
    def cell_volume(self) -> float:
        if self.kind is ModelKind.ZERO_DIM or self.covariance is not None:
            return 1.0
        return self.slice.cell_volume

    @property
    def site_coupling(self) -> complex:
        """Quartic weight per site: lam * cell volume."""
        return self.lam * self.cell_volume

    @property
    def g(self) -> complex:
        """Intermediate-field constant, V = -(N/2) Tr log(1 + i g D sigma D)."""
        return coupling_constant(self.site_coupling)

    def site_covariance(self) -> np.ndarray:
        if self.kind is ModelKind.ZERO_DIM:
            return np.ones((1, 1))
        if self.covariance is not None:
            return np.array(self.covariance, dtype=float)
        return build_lattice_covariance(self.slice).matrix

    def sqrt_covariance(self) -> np.ndarray:
        if self.kind is ModelKind.ZERO_DIM:
            return np.ones((1, 1))
        return _symmetric_sqrt(self.site_covariance())


def coupling_constant(lam) -> complex:
    """g with g**2 = 8 lam: e^{-lam phi^4} = E_sigma[e^{-(i g / 2) sigma phi^2}]."""
    return complex(np.sqrt(8.0 * complex(lam)))


def _symmetric_sqrt(C):
    vals, vecs = np.linalg.eigh(C)
    return (vecs * np.sqrt(np.clip(vals, 0.0, None))) @ vecs.T


def _reduced_kernel(t, M, j, mass):
    """M^{-2j} C_j at separation t (in units of M^{-j}); vectorized over t."""
    m2 = mass * mass * float(M) ** (-2 * j)
    t2 = np.square(np.asarray(t, dtype=float)) / 4.0

    def integrand(beta):
        return np.exp(-beta * m2 - t2 / beta) / (beta * beta)

    val, _ = integrate.quad_vec(integrand, 1.0, float(M) ** 2, epsabs=0.0, epsrel=1e-13)
    return val


def _physical_kernel(r, slice: SliceSpec):
    """C_j at physical separations r, integrating in the original variable a."""
    r2 = np.square(np.asarray(r, dtype=float)) / 4.0
    m2 = slice.mass ** 2
    lo = float(slice.M) ** (-2 * slice.j)

    def integrand(a):
        return np.exp(-a * m2 - r2 / a) / (a * a)

    val, _ = integrate.quad_vec(integrand, lo, lo * float(slice.M) ** 2,
                                epsabs=0.0, epsrel=1e-13)
    return val


def eval_propagator(slice: SliceSpec, x, y) -> float:
    """C_j(x, y) = int_{M^-2j}^{M^-2j+2} e^{-a m^2} e^{-|x-y|^2/4a} a^-2 da (adaptive)."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise ValueError("propagator arguments must be finite")
    r2 = float(np.sum((x - y) ** 2)) / 4.0
    m2 = slice.mass ** 2
    lo = float(slice.M) ** (-2 * slice.j)
    val, _ = integrate.quad(
        lambda a: math.exp(-a * m2 - r2 / a) / (a * a),
        lo, lo * float(slice.M) ** 2, epsabs=0.0, epsrel=1e-13, limit=200,
    )
    return val


@dataclass(frozen=True)
class LatticeCovariance:
    matrix: np.ndarray
    min_eigenvalue: float
    clipped: int


@lru_cache(maxsize=64)
def build_lattice_covariance(slice: SliceSpec, cap: int = 64) -> LatticeCovariance:
    """Site covariance of the periodic lattice for one slice.

    The continuum kernel is periodized over lattice images, which keeps the
    matrix positive up to quadrature error; eigenvalues below
    ``-1e-12 * ||C||`` raise, smaller negative ones are clipped to zero.
    """
    n = slice.n_sites
    if n > cap:
        raise DiscretizationError(f"{n} sites exceeds the cap of {cap}")
    if slice.sites == 1:
        # a single site has no images: [C(x, x)]
        C = np.array([[eval_propagator(slice, 0.0, 0.0)]])
        C.setflags(write=False)
        return LatticeCovariance(C, float(C[0, 0]), 0)
    extent = slice.sites * slice.spacing
    if extent < 3.0:
        warnings.warn(
            f"lattice extent {extent:g} is under three correlation lengths", stacklevel=2
        )
    idx = np.array(list(itertools.product(range(slice.sites), repeat=slice.dim)))
    # displacement classes modulo the period
    disp = np.unique((idx[:, None, :] - idx[None, :, :]) % slice.sites, axis=0)
    disp = disp.reshape(-1, slice.dim)
    nimg = int(math.ceil(_IMAGE_CUTOFF * slice.M / extent)) + 1
    shifts = np.array(list(itertools.product(range(-nimg, nimg + 1), repeat=slice.dim)))
    seps = np.sqrt((((disp[:, None, :] + shifts[None, :, :] * slice.sites) * slice.spacing) ** 2).sum(-1))
    keep = seps <= _IMAGE_CUTOFF * slice.M
    vals = np.zeros(seps.shape)
    vals[keep] = _reduced_kernel(seps[keep], slice.M, slice.j, slice.mass)
    kernel = float(slice.M) ** (2 * slice.j) * vals.sum(axis=1)
    lookup = {tuple(d): kv for d, kv in zip(disp, kernel)}
    C = np.empty((n, n))
    for a in range(n):
        for b in range(n):
            C[a, b] = lookup[tuple((idx[a] - idx[b]) % slice.sites)]
    C = 0.5 * (C + C.T)
    vals, vecs = np.linalg.eigh(C)
    norm = float(np.abs(vals).max())
    low = float(vals.min())
    if low < -1e-12 * norm:
        raise DiscretizationError(
            f"lattice covariance has eigenvalue {low:.3e} (norm {norm:.3e}); discretization too coarse"
        )
    clipped = int(np.sum(vals < 0))
    if clipped:
        C = (vecs * np.clip(vals, 0.0, None)) @ vecs.T
    C.setflags(write=False)
    return LatticeCovariance(C, low, clipped)


def periodic_distances(slice: SliceSpec):
    """Periodic site-pair distances in units of M^-j, and their distinct values."""
    idx = np.array(list(itertools.product(range(slice.sites), repeat=slice.dim)))
    delta = np.abs(idx[:, None, :] - idx[None, :, :])
    delta = np.minimum(delta, slice.sites - delta)
    d = np.round(np.sqrt((delta ** 2).sum(-1)) * slice.spacing, 12)
    return d, np.unique(d)


def power_iteration(A, rtol=1e-8, maxiter=10_000, start=None):
    """Largest-modulus eigenvalue of a symmetric matrix by power iteration."""
    A = np.asarray(A)
    v = np.ones(A.shape[0]) if start is None else np.asarray(start, dtype=float)
    # a fixed non-symmetric tilt avoids starting orthogonal to the top vector
    v = v + 1e-3 * np.arange(1, A.shape[0] + 1) / A.shape[0]
    v /= np.linalg.norm(v)
    prev = None
    for _ in range(maxiter):
        w = A @ v
        ev = float(np.linalg.norm(w))
        if ev == 0.0:
            return 0.0
        v = w / ev
        if prev is not None and abs(ev - prev) <= rtol * ev:
            return ev
        prev = ev
    raise ConvergenceError(f"power iteration did not reach rtol={rtol} in {maxiter} steps")


def operator_norm(slice: SliceSpec, rtol=1e-8) -> float:
    """Norm of the slice covariance as an operator, ``lambda_max(C) * cell volume``."""
    C = build_lattice_covariance(slice).matrix
    return power_iteration(C, rtol=rtol) * slice.cell_volume


@dataclass(frozen=True)
class BoundReport:
    c_trial: float
    sup: float
    argmax: float
    failed: bool
    failure_distance: float | None


def verify_propagator_bound(slice: SliceSpec, c_trial: float, t_max=12.0, samples=241,
                            overflow=1e100) -> BoundReport:
    """sup_t M^{-2j} C_j(t) e^{c t} over separations t in [0, t_max] (units M^{-j}).

    A finite sup certifies the pointwise exponential bound at the sampled
    scale with K = sup and c = c_trial. Past ``overflow`` the trial rate is
    declared too large and the first offending separation is reported.
    """
    if not c_trial >= 0:
        raise ValueError("c_trial must be non-negative")
    ts = np.linspace(0.0, t_max, samples)
    scale = float(slice.M) ** (2 * slice.j)
    reduced = _physical_kernel(ts * slice.length_unit, slice) / scale
    with np.errstate(divide="ignore"):
        logs = np.log(reduced) + c_trial * ts
    bad = np.nonzero(~np.isfinite(logs) | (logs > math.log(overflow)))[0]
    if bad.size:
        cut = bad[0]
        head = logs[:cut] if cut else logs[:1]
        best = int(np.argmax(head))
        return BoundReport(c_trial, float(np.exp(min(head[best], 700.0))), float(ts[best]),
                           True, float(ts[cut]))
    best = int(np.argmax(logs))
    return BoundReport(c_trial, float(np.exp(logs[best])), float(ts[best]), False, None)
