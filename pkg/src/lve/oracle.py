"""Brute-force references that never touch the intermediate field.

All routines work with the original quartic weight e^{-lam (phi.phi)^2}
under the free Gaussian measure, so agreement with the tree expansion is a
check of every convention in between.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np
from scipy import integrate, special

from .model import ModelSpec, SliceSpec, periodic_distances


class OracleError(RuntimeError):
    pass


@dataclass(frozen=True)
class OracleResult:
    value: complex
    error: float
    method: str


def _radial_weight(colors):
    # density of |phi| for an N-component standard normal
    c = 2.0 ** (1.0 - colors / 2.0) / math.gamma(colors / 2.0)
    return lambda r: c * r ** (colors - 1) * math.exp(-0.5 * r * r)


def truncation_radius(tol: float, colors: int = 1) -> float:
    """Radius beyond which the Gaussian (chi) mass is below tol / 10."""
    target = tol / 10.0
    R = math.sqrt(2.0 * math.log(1.0 / target)) + 1.0
    while special.chdtrc(colors, R * R) > target:
        R += 0.5
    return R


def quadrature_logZ_0d(lam, tol: float = 1e-12, colors: int = 1) -> OracleResult:
    """log E[e^{-lam (phi.phi)^2}] for an N-component standard normal phi, by adaptive quadrature.

    Since |e^{-lam r^4}| <= 1 for Re(lam) >= 0, the part of the radial
    integral beyond the truncation radius is bounded by the Gaussian tail.
    """
    lam = complex(lam)
    if lam == 0:
        return OracleResult(0j, tol, "quad")
    if not lam.real > 0:
        raise ValueError("Re(lambda) must be positive")
    R = truncation_radius(tol, colors)
    rho = _radial_weight(colors)
    parts, errs = [], []
    for part in (np.real, np.imag):
        val, err = integrate.quad(lambda r: float(part(np.exp(-lam * r ** 4))) * rho(r), 0.0, R,
                                  epsabs=tol / 10.0, epsrel=0.0, limit=400)
        parts.append(val)
        errs.append(err)
    Z = complex(parts[0], parts[1])
    err_Z = math.hypot(*errs) + tol / 10.0
    if abs(Z) == 0 or err_Z / abs(Z) > tol:
        raise OracleError(f"tolerance {tol} not reached (error {err_Z:.2e})")
    return OracleResult(complex(np.log(Z)), err_Z / abs(Z), "quad")


def gauss_legendre_logZ_0d(lam, panels: int = 400, order: int = 10, tol: float = 1e-14,
                           colors: int = 1) -> OracleResult:
    """Same integral on a composite fixed-order Gauss-Legendre rule (second, independent rule)."""
    lam = complex(lam)
    R = truncation_radius(tol, colors)
    x, w = np.polynomial.legendre.leggauss(order)
    edges = np.linspace(0.0, R, panels + 1)
    mid = 0.5 * (edges[1:] + edges[:-1])[:, None]
    half = 0.5 * (edges[1:] - edges[:-1])[:, None]
    r = (mid + half * x).ravel()
    wts = (half * w).ravel()
    c = 2.0 ** (1.0 - colors / 2.0) / math.gamma(colors / 2.0)
    Z = np.sum(wts * c * r ** (colors - 1) * np.exp(-0.5 * r * r - lam * r ** 4))
    return OracleResult(complex(np.log(Z)), tol, "gauss-legendre")


def bessel_Z_0d(lam: float) -> float:
    """Closed form for N = 1 and real lam > 0: e^{1/(32 lam)} K_{1/4}(1/(32 lam)) / sqrt(4 pi lam) / 2."""
    z = 1.0 / (32.0 * lam)
    return float(special.kve(0.25, z) / math.sqrt(4.0 * math.pi * lam) * 0.5)


def wick_coefficients(k_max: int, colors: int = 1):
    """Exact Z and log Z series coefficients in lam, as Fractions (index 0 included).

    z_k = (-1)^k <(phi.phi)^{2k}> / k!, with <(phi.phi)^m> = prod_{i<m} (N + 2i)
    (for N = 1 the pairing count (4k-1)!!). a_n follows from the recursion
    for the logarithm of a power series with z_0 = 1.
    """
    if not 0 <= k_max <= 12:
        raise ValueError("k_max must be in 0..12")
    z = []
    for k in range(k_max + 1):
        moment = 1
        for i in range(2 * k):
            moment *= colors + 2 * i
        z.append(Fraction((-1) ** k * moment, math.factorial(k)))
    a = [Fraction(0)]
    for n in range(1, k_max + 1):
        a.append(z[n] - sum((k * a[k] * z[n - k] for k in range(1, n)), Fraction(0)) / n)
    return z, a


def _lattice_setup(model, lam):
    if isinstance(model, SliceSpec):
        model = ModelSpec("lattice", lam, 1, model)
    elif lam is not None:
        model = model.with_lam(lam)
    if model.colors != 1:
        raise ValueError("lattice oracles support a single color")
    C = model.site_covariance()
    vals, vecs = np.linalg.eigh(C)
    D = vecs * np.sqrt(np.clip(vals, 0.0, None))
    return model, D, model.site_coupling


def lattice_logZ(model, lam=None, quad: str | None = None, nodes: int = 36, samples: int = 2**20,
                 seed: int = 7, tol: float | None = None) -> OracleResult:
    """log E_C[e^{-lam vol sum_x phi_x^4}] on a small lattice.

    ``quad`` is "tensor" (up to 4 sites; error from nodes - 8) or "mc" (up
    to 16 sites; error from the sample variance). phi = D xi with D D^T = C.
    """
    model, D, lam_site = _lattice_setup(model, lam)
    S = D.shape[0]
    if quad is None:
        quad = "tensor" if S <= 4 else "mc"
    if lam_site == 0:
        return OracleResult(0j, 1e-16, quad)
    if quad == "tensor":
        if S > 4:
            raise ValueError("tensor oracle limited to 4 sites")

        def rule(q):
            x, w = np.polynomial.hermite_e.hermegauss(q)
            w = w / w.sum()
            grids = np.meshgrid(*([x] * S), indexing="ij")
            xi = np.stack([g.ravel() for g in grids], axis=1)
            wt = np.ones(xi.shape[0])
            for gw in np.meshgrid(*([w] * S), indexing="ij"):
                wt = wt * gw.ravel()
            phi = xi @ D.T
            return complex(np.sum(wt * np.exp(-lam_site * np.sum(phi ** 4, axis=1))))

        Z = rule(nodes)
        err = abs(Z - rule(nodes - 8)) / abs(Z) + 1e-15
        out = OracleResult(complex(np.log(Z)), err, "tensor")
    elif quad == "mc":
        if S > 16:
            raise ValueError("mc oracle limited to 16 sites")
        total, sq, n = 0j, 0.0, 0
        batch = 2**15
        for b in range(int(math.ceil(samples / batch))):
            size = min(batch, samples - b * batch)
            xi = np.random.Generator(np.random.Philox(key=seed, counter=[0, 0, b, 0])).standard_normal((size, S))
            wv = np.exp(-lam_site * np.sum((xi @ D.T) ** 4, axis=1))
            total += wv.sum()
            sq += float(np.sum(np.abs(wv) ** 2))
            n += size
        Z = total / n
        var = sq / n - abs(Z) ** 2
        err = math.sqrt(max(var, 0.0) / n) / abs(Z)
        out = OracleResult(complex(np.log(Z)), err, "mc")
    else:
        raise ValueError(f"unknown oracle quadrature {quad!r}")
    if tol is not None and out.error > tol:
        raise OracleError(f"oracle error {out.error:.2e} above requested {tol:.2e}")
    return out


@dataclass(frozen=True)
class TwoPointOracle:
    matrix: np.ndarray
    errors: np.ndarray
    separations: np.ndarray
    profile: np.ndarray
    profile_errors: np.ndarray
    ess: float


def two_point_mc(model, lam=None, samples: int = 2**18, seed: int = 11, batch: int = 2**14,
                 min_ess: float = 100.0) -> TwoPointOracle:
    """<phi_x phi_y> by reweighting free Gaussian samples with e^{-lam vol sum phi^4}.

    Batch b draws from Philox keyed on ``seed`` with counter b, so results do
    not depend on how batches are scheduled. Errors are delta-method standard
    errors of the ratio estimator.
    """
    model, D, lam_site = _lattice_setup(model, lam)
    S = D.shape[0]
    if model.slice is not None:
        d, classes = periodic_distances(model.slice)
    else:
        d = np.abs(np.subtract.outer(np.arange(S), np.arange(S))).astype(float)
        classes = np.unique(d)
    masks = [d == c for c in classes]
    sw, sw2 = 0j, 0.0
    swf = np.zeros((S, S), complex)
    swp = np.zeros(len(classes), complex)
    chunks = []
    n = 0
    for b in range(int(math.ceil(samples / batch))):
        size = min(batch, samples - b * batch)
        xi = np.random.Generator(np.random.Philox(key=seed, counter=[0, 0, b, 0])).standard_normal((size, S))
        phi = xi @ D.T
        wv = np.exp(-lam_site * np.sum(phi ** 4, axis=1))
        outer = phi[:, :, None] * phi[:, None, :]
        prof = np.stack([outer[:, m].mean(axis=1) for m in masks], axis=1)
        sw += wv.sum()
        sw2 += float(np.sum(np.abs(wv) ** 2))
        swf += np.einsum("s,sxy->xy", wv, outer)
        swp += wv @ prof
        chunks.append((wv, outer, prof))
        n += size
    ess = abs(sw) ** 2 / sw2
    if ess < min_ess:
        raise OracleError(f"effective sample size {ess:.1f} below {min_ess}")
    mat = swf / sw
    prof_mean = swp / sw
    wbar = sw / n
    vm = np.zeros((S, S))
    vp = np.zeros(len(classes))
    for wv, outer, prof in chunks:
        vm += np.sum(np.abs(wv[:, None, None] * (outer - mat)) ** 2, axis=0)
        vp += np.sum(np.abs(wv[:, None] * (prof - prof_mean)) ** 2, axis=0)
    err_m = np.sqrt(vm / n / n) / abs(wbar)
    err_p = np.sqrt(vp / n / n) / abs(wbar)
    return TwoPointOracle(mat, err_m, classes, prof_mean, err_p, float(ess))


def connected_2pt_oracle(model, lam=None, x: int = 0, y: int = 0, samples: int = 2**18,
                         seed: int = 11) -> OracleResult:
    """<phi_x phi_y> on the lattice; odd moments vanish, so this is the connected part."""
    res = two_point_mc(model, lam, samples=samples, seed=seed)
    return OracleResult(complex(res.matrix[x, y]), float(res.errors[x, y]), "reweighted-mc")
