"""The loop vertex V(sigma) = -(N/2) Tr log(1 + iH), its derivatives and resolvents.

Zero-dimensional models have scalar sigma and H = g sigma. Lattice models
have one sigma per site and H = g D diag(sigma) D with D = C^(1/2), where C
is the site covariance and g the per-site constant from
:attr:`ModelSpec.g`. The resolvent is C(sigma) = D (1 + iH)^(-1) D.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .model import ModelSpec, SliceSpec, operator_norm


def _as_sigma(sigma):
    sigma = np.asarray(sigma)
    if np.iscomplexobj(sigma):
        if np.any(sigma.imag != 0):
            raise ValueError("the loop vertex is only defined here for real sigma")
        sigma = sigma.real
    return sigma.astype(float)


def field_operator(sigma, D) -> np.ndarray:
    """D diag(sigma) D for a batch of site fields, shape (..., S, S)."""
    return np.einsum("xy,...y,yz->...xz", D, sigma, D)


def resolvent_batch(sigma, D, g) -> np.ndarray:
    """D (1 + i g D sigma D)^(-1) D for sigma of shape (B, S)."""
    S = D.shape[0]
    A = np.eye(S) + 1j * g * field_operator(sigma, D)
    rhs = np.broadcast_to(D.astype(complex), A.shape)
    return D @ np.linalg.solve(A, rhs)


def resolvent(sigma, model: ModelSpec):
    """C(sigma): scalar (1 + i g sigma)^(-1) in zero dimensions, a site matrix otherwise."""
    sigma = _as_sigma(sigma)
    if not model.is_lattice:
        return 1.0 / (1.0 + 1j * model.g * sigma)
    return resolvent_batch(sigma[None], model.sqrt_covariance(), model.g)[0]


def loop_vertex_batch(sigma, D, g, colors=1) -> np.ndarray:
    """-(N/2) sum_i log(1 + i g mu_i), mu the eigenvalues of D sigma D; sigma (B, S)."""
    mu = np.linalg.eigvalsh(field_operator(sigma, D))
    return -0.5 * colors * np.log(1.0 + 1j * g * mu).sum(axis=-1)


def loop_vertex_value(sigma, model: ModelSpec) -> complex:
    """V(sigma) on the principal branch.

    Every eigenvalue of 1 + iH is 1 + i g mu with real mu, which stays off
    the negative axis whenever |arg g| < pi/2, so summing logs eigenvalue by
    eigenvalue is continuous in sigma.
    """
    sigma = _as_sigma(sigma)
    if not model.is_lattice:
        return complex(-0.5 * model.colors * np.log(1.0 + 1j * model.g * sigma))
    return complex(loop_vertex_batch(sigma[None], model.sqrt_covariance(), model.g, model.colors)[0])


def vertex_prefactor(k: int, g, colors=1) -> complex:
    """(N/2) (-i g)^k, the coupling factor of a loop vertex hit by k derivatives."""
    return 0.5 * colors * (-1j * g) ** k


def cyclic_chain_sum(R, points) -> complex:
    """sum over tau of prod_i R[x_tau(i), x_tau(i+1)], tau(1) = tau(k+1) = 1.

    tau runs over permutations of positions 2..k; for k = 1 the single term
    is R[x_1, x_1].
    """
    first, rest = points[0], list(points[1:])
    total = 0.0
    for perm in itertools.permutations(rest):
        cycle = [first, *perm, first]
        term = 1.0
        for a, b in zip(cycle, cycle[1:]):
            term = term * R[a, b]
        total = total + term
    return complex(total)


def vertex_derivative_chain(k: int, sigma, model: ModelSpec, points=None) -> complex:
    """k-th sigma-derivative of the loop vertex.

    Zero dimensions: (N/2) (k-1)! (-i g)^k (1 + i g sigma)^(-k). Lattice:
    the derivative with respect to sigma at sites ``points`` (k entries),
    (N/2) (-i g)^k sum_tau prod C(sigma; x_tau(i), x_tau(i+1)).
    """
    if k < 1:
        raise ValueError("derivative order must be >= 1; use loop_vertex_value for k = 0")
    pref = vertex_prefactor(k, model.g, model.colors)
    if not model.is_lattice:
        r = resolvent(sigma, model)
        return complex(pref * math.factorial(k - 1) * r ** k)
    if points is None or len(points) != k:
        raise ValueError("lattice derivatives need one site per derivative")
    return complex(pref * cyclic_chain_sum(resolvent(sigma, model), list(points)))


def resolvent_inverse_norm(H, theta=0.0) -> float:
    """Operator norm of (1 + i e^{i theta} H)^(-1) for a hermitian H."""
    S = H.shape[-1]
    A = np.eye(S) + 1j * np.exp(1j * theta) * H
    return float(np.linalg.norm(np.linalg.inv(A), 2))


@dataclass(frozen=True)
class LoopBoundReport:
    k: int
    j: int
    worst: float
    bound: float
    worst_sample: int

    @property
    def within_bound(self) -> bool:
        return self.worst <= self.bound * (1 + 1e-10)


def resolvent_loop_bound_check(slice: SliceSpec, k: int, sigma_samples, lam=1.0) -> LoopBoundReport:
    """Worst M^{(2k-4)j} |[C(sigma)^k](x, x)| over samples and sites.

    Operator powers include the cell volume per intermediate sum, so the
    diagonal kernel of the k-th power is vol^(k-1) (R^k)[x, x]. ``bound`` is
    the sigma-independent estimate C(x,x) ||C||^(k-1) that follows from
    ||(1+iH)^(-1)|| <= 1, on the same scale.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    model = ModelSpec("lattice", lam, 1, slice)
    sigma = _as_sigma(sigma_samples)
    if sigma.ndim == 1:
        sigma = sigma[None]
    D = model.sqrt_covariance()
    C = model.site_covariance()
    vol = slice.cell_volume
    R = resolvent_batch(sigma, D, model.g)
    P = R.copy()
    for _ in range(k - 1):
        P = P @ R
    diag = np.abs(np.diagonal(P, axis1=-2, axis2=-1)) * vol ** (k - 1)
    scale = float(slice.M) ** ((2 * k - 4) * slice.j)
    flat = int(np.argmax(diag))
    worst = float(diag.reshape(-1)[flat]) * scale
    bound = float(np.max(np.diag(C))) * operator_norm(slice) ** (k - 1) * scale
    return LoopBoundReport(k, slice.j, worst, bound, flat // diag.shape[-1])
