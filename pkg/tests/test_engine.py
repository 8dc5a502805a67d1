import itertools
import math
import warnings

import numpy as np
import pytest

from lve.engine import (DecayFit, ExtrapolationError, InsufficientRangeError, QuadPolicy,
                        SeriesDivergenceWarning, TwoPointResult, borel_remainder_check,
                        contract_resolvent, contract_vacuum, decay_rate_fit, pressure_series,
                        taylor_coefficients, tree_term, two_point_function)
from lve.interp import QuadMode, QuadratureSpec
from lve.loopvertex import cyclic_chain_sum
from lve.model import ModelSpec, SliceSpec, verify_propagator_bound
from lve.oracle import lattice_logZ, quadrature_logZ_0d
from lve.trees import LabeledTree, prufer_decode

# fixed 8-node rules, no error estimate: exact enough for identities, and fast
FAST_ZERO_DIM = QuadPolicy(tensor=QuadratureSpec(QuadMode.TENSOR, nodes=8, w_nodes=8),
                           estimate_error=False)
FAST_LATTICE = QuadPolicy(sampled=QuadratureSpec(QuadMode.QMC, samples=2**10, replicates=8),
                          tensor_max_n=0)


def _brute_vacuum(tree, R):
    # every line carries one site shared by its two ends
    S = R[1].shape[-1]
    total = 0j
    for sites in itertools.product(range(S), repeat=tree.n - 1):
        term = 1.0 + 0j
        for v in range(1, tree.n + 1):
            pts = [sites[i] for i, e in enumerate(tree.edges) if v in e]
            term *= cyclic_chain_sum(R[v], pts)
        total += term
    return total


def _random_resolvents(n, S, seed):
    rng = np.random.default_rng(seed)
    return {v: (rng.standard_normal((1, S, S)) + 1j * rng.standard_normal((1, S, S)))
            for v in range(1, n + 1)}


@pytest.mark.parametrize("code", [(), (1,), (2, 2), (3, 1), (1, 1, 1)])
@pytest.mark.parametrize("root", [1, 2])
def test_contract_vacuum_matches_brute_force(code, root):
    tree = prufer_decode(code, len(code) + 2)
    R = _random_resolvents(tree.n, 3, seed=len(code) + root)
    fast = contract_vacuum(tree, R, root)[0]
    brute = _brute_vacuum(tree, {v: R[v][0] for v in R})
    assert fast == pytest.approx(brute, rel=1e-12)


def test_contract_resolvent_matches_brute_force():
    tree = prufer_decode((1, 2), 4)  # root 1 with children 3 and 2, 2 with child 4
    R = _random_resolvents(4, 3, seed=9)
    out = contract_resolvent(tree, R, 1)[0]
    S = 3
    ref = np.zeros((S, S), complex)
    for a, b, c in itertools.product(range(S), repeat=3):
        # lines (1,2)->a, (1,3)->b, (2,4)->c; vertex 1 is an open chain through a and b
        open_chain = (np.outer(R[1][0][:, a], R[1][0][a, b] * R[1][0][b, :])
                      + np.outer(R[1][0][:, b], R[1][0][b, a] * R[1][0][a, :]))
        closed = cyclic_chain_sum(R[2][0], [a, c]) * R[3][0][b, b] * R[4][0][c, c]
        ref += open_chain * closed
    lines = {e: i for i, e in enumerate(tree.edges)}
    assert set(lines) == {(1, 2), (1, 3), (2, 4)}
    assert np.allclose(out, ref, rtol=1e-12)


def test_free_theory_is_zero():
    acc = pressure_series(ModelSpec("zero-d", 0.0), n_max=4)
    assert acc.total == 0 and acc.trees_evaluated == 1 + 1 + 3 + 16
    assert tree_term(ModelSpec("zero-d", 0.0), LabeledTree(2, ((1, 2),))).value == 0


def test_rejects_bad_inputs():
    with pytest.raises(ValueError):
        pressure_series(ModelSpec("zero-d", -0.1))
    with pytest.raises(ValueError):
        pressure_series(ModelSpec("zero-d", 0.1), n_max=10)
    with pytest.raises(ValueError):
        two_point_function(ModelSpec("zero-d", 0.1))


def test_order_lambda_split():
    lam = 1e-3
    full = pressure_series(ModelSpec("zero-d", lam), n_max=2).terms
    half = pressure_series(ModelSpec("zero-d", lam / 2), n_max=2).terms
    # one Richardson step removes the lambda^2 part of each term
    linear = [4 * h - f for h, f in zip(half, full)]
    assert linear[0].real == pytest.approx(-2 * lam, rel=1e-3)
    assert linear[1].real == pytest.approx(-lam, rel=1e-3)
    # n = 1 is <V> = (1/2) sum_m (-8 lam)^m (2m-1)!! / (2m) = -2 lam + 24 lam^2 - 640 lam^3 + ...
    assert full[0].real == pytest.approx(-2 * lam + 24 * lam ** 2 - 640 * lam ** 3, rel=1e-4)


def test_grouping_matches_labeled_sum():
    model = ModelSpec("zero-d", 0.05)
    quad = QuadPolicy(estimate_error=False)
    a = pressure_series(model, n_max=4, quad=quad, group=True)
    b = pressure_series(model, n_max=4, quad=quad, group=False)
    # relabeling permutes the w-rule, which is symmetric only up to quadrature error
    assert np.allclose(a.terms, b.terms, rtol=1e-8, atol=0)
    assert a.trees_evaluated == b.trees_evaluated == 1 + 1 + 3 + 16


def test_threads_do_not_change_results():
    model = ModelSpec("zero-d", 0.03 + 0.01j)
    a = pressure_series(model, n_max=5, quad=FAST_ZERO_DIM)
    b = pressure_series(model, n_max=5, quad=FAST_ZERO_DIM, threads=3)
    assert a.terms == b.terms
    # errors are not estimated with this policy
    assert np.array_equal(a.errors, b.errors, equal_nan=True)


def test_schwinger_and_sigma_methods_agree():
    model = ModelSpec("zero-d", 0.05)
    tree = prufer_decode((2,), 3)
    a = tree_term(model, tree, method="schwinger")
    b = tree_term(model, tree, method="sigma")
    assert abs(a.value - b.value) <= 3 * (a.error + b.error) + 1e-12


def test_sampled_zero_dim_orders_agree_with_tensor():
    model = ModelSpec("zero-d", 0.05)
    tree = prufer_decode((1, 1), 4)
    tensor = tree_term(model, tree)
    qmc = tree_term(model, tree, QuadPolicy(tensor_max_n=0))
    assert abs(tensor.value - qmc.value) <= 3 * (tensor.error + qmc.error)


def test_complex_coupling_conjugation():
    lam = 0.03 * np.exp(1j * np.pi / 6)
    a = pressure_series(ModelSpec("zero-d", lam), n_max=4, quad=FAST_ZERO_DIM).total
    b = pressure_series(ModelSpec("zero-d", np.conj(lam)), n_max=4, quad=FAST_ZERO_DIM).total
    assert a == pytest.approx(np.conj(b), rel=1e-12)


def test_divergence_flagged_at_large_coupling():
    # real couplings keep shrinking ratios; near the edge of the sector they do not
    acc = pressure_series(ModelSpec("zero-d", 2.0), n_max=5, quad=FAST_ZERO_DIM)
    assert not acc.flagged
    with pytest.warns(SeriesDivergenceWarning):
        acc = pressure_series(ModelSpec("zero-d", 5 * np.exp(0.45j * np.pi)), n_max=5, quad=FAST_ZERO_DIM)
    assert acc.flagged and acc.tail_estimate == math.inf


def test_decoupled_lattice_is_two_zero_dim_copies():
    lam = 0.05
    lat = ModelSpec("lattice", lam, covariance=((1.0, 0.0), (0.0, 1.0)))
    a = pressure_series(lat, n_max=3, quad=FAST_LATTICE)
    b = pressure_series(ModelSpec("zero-d", lam), n_max=3)
    for n in range(3):
        assert abs(a.terms[n] - 2 * b.terms[n]) <= 4 * a.errors[n] + 1e-12


def test_lattice_series_matches_oracle():
    model = ModelSpec("lattice", 0.05, 1, SliceSpec(sites=2, spacing=1.0))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        acc = pressure_series(model, n_max=4)
        ref = lattice_logZ(model)
    assert abs(acc.total - ref.value) <= acc.tail_estimate + 3 * acc.integration_error + ref.error


def test_taylor_low_orders():
    res = taylor_coefficients(ModelSpec("zero-d", 0.0), 2)
    assert res.all_converged
    assert res.coeffs[1] == pytest.approx(-3, abs=1e-6)
    assert res.coeffs[2] == pytest.approx(48, abs=1e-3)
    with pytest.raises(ValueError):
        taylor_coefficients(ModelSpec("zero-d", 0.0), 6)


def test_taylor_raises_when_unsettled():
    # a single coarse level cannot be compared with anything
    with pytest.raises(ExtrapolationError):
        taylor_coefficients(ModelSpec("zero-d", 0.0), 2, h0=0.2, max_levels=2, fail_rtol=1e-9)


def test_borel_with_exact_coefficients():
    from lve.oracle import wick_coefficients
    _, a = wick_coefficients(4)
    diag = borel_remainder_check(ModelSpec("zero-d", 0.0), [0.01, 0.02], 4, coeffs=a[:4])
    assert np.isfinite(diag.rho) and diag.rho > 0
    assert diag.bound_holds
    # R_0 is log Z itself
    assert diag.remainders[0.01][0] == pytest.approx(quadrature_logZ_0d(0.01).value, abs=1e-8)
    with pytest.raises(ValueError):
        borel_remainder_check(ModelSpec("zero-d", 0.0), [-0.01], 2, coeffs=a[:2])


def _synthetic(profile, errors, sites=16):
    model = ModelSpec("lattice", 0.01, 1, SliceSpec(sites=sites))
    seps = np.arange(len(profile), dtype=float)
    z = np.zeros(len(profile))
    return TwoPointResult(model, np.zeros((1, 1)), np.zeros((1, 1)), seps, np.asarray(profile),
                          np.asarray(errors, float), [], z)


def test_decay_fit_recovers_rate():
    t = np.arange(9.0)
    res = _synthetic(2.0 * np.exp(-0.8 * t), 1e-6 * np.ones(9))
    fit = decay_rate_fit(res)
    assert isinstance(fit, DecayFit)
    assert fit.c_hat == pytest.approx(0.8, rel=1e-10)
    assert fit.residual < 1e-10
    assert fit.separations == (1.0, 2.0, 3.0, 4.0)


def test_decay_fit_needs_dynamic_range():
    t = np.arange(9.0)
    res = _synthetic(np.exp(-0.8 * t), np.exp(-0.8 * 2) * np.ones(9))
    with pytest.raises(InsufficientRangeError):
        decay_rate_fit(res)


def test_two_point_free_and_symmetric():
    model = ModelSpec("lattice", 0.0, 1, SliceSpec(sites=4))
    res = two_point_function(model)
    assert np.allclose(res.values, model.site_covariance())
    model = ModelSpec("lattice", 0.02, 1, SliceSpec(sites=4))
    res = two_point_function(model, n_max=2, quad=FAST_LATTICE)
    assert np.allclose(res.values, res.values.T)
    # the interaction lowers the equal-point correlation
    assert res.value.real < model.site_covariance()[0, 0]
    assert len(res.per_n) == 3


def test_series_does_not_depend_on_root():
    model = ModelSpec("lattice", 0.05, 1, SliceSpec(sites=3, spacing=1.0))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        a = pressure_series(model, n_max=3, quad=FAST_LATTICE, root=1)
        b = pressure_series(model, n_max=3, quad=FAST_LATTICE, root=2)
    assert abs(a.total - b.total) < a.integration_error
    assert a.tail_ratio == a.ratios[-1]


def test_first_remainder_recovers_negative_a1():
    # R_1(lam) / lam -> a_1 as lam -> 0+
    diag = borel_remainder_check(ModelSpec("zero-d", 0.0), [1e-4, 2e-4], 1, coeffs=[0.0],
                                 n_max=3)
    for lam, rem in diag.remainders.items():
        slope = rem[1] / lam
        assert slope.real < 0
        # next order is 48 lam
        assert abs(slope - (-3.0)) <= 60 * abs(lam)


def test_free_decay_is_at_least_the_certified_rate():
    model = ModelSpec("lattice", 0.0, 1, SliceSpec(M=2, j=2, mass=0.0, sites=16, spacing=1.0))
    certified = verify_propagator_bound(model.slice, 0.25)
    assert not certified.failed
    fit = decay_rate_fit(two_point_function(model))
    assert fit.c_hat >= certified.c_trial


@pytest.mark.slow
def test_decay_rate_is_stable_in_coupling():
    fits = []
    for lam in (0.01, 0.02):
        model = ModelSpec("lattice", lam, 1, SliceSpec(M=2, j=2, mass=0.0, sites=16, spacing=1.0))
        fits.append(decay_rate_fit(two_point_function(model, n_max=3)).c_hat)
    assert abs(fits[1] / fits[0] - 1) < 0.2
