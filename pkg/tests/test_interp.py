import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lve import kernels
from lve.interp import (CovarianceError, IntegrationError, QuadMode, QuadratureSpec,
                        TreeCovariance, _simplex_rule, build_covariance, gaussian_expectation, qmc_points, replica_identity_check,
                        tensor_hermite, w_rule_tensor)
from lve.trees import LabeledTree, path_infimum, prufer_decode

CHAIN = LabeledTree(3, ((1, 2), (2, 3)))


def _random_tree(rng, n):
    return prufer_decode(rng.integers(1, n + 1, size=n - 2), n)


def test_covariance_entries_are_path_minima():
    rng = np.random.default_rng(3)
    for n in range(2, 8):
        t = _random_tree(rng, n)
        w = rng.random(n - 1)
        W = build_covariance(t, w).W
        for u in range(1, n + 1):
            for v in range(1, n + 1):
                assert W[u - 1, v - 1] == path_infimum(t, w, u, v)


def test_covariance_extremes():
    t = prufer_decode((2, 2), 4)
    assert np.array_equal(build_covariance(t, [1, 1, 1]).W, np.ones((4, 4)))
    assert np.array_equal(build_covariance(t, [0, 0, 0]).W, np.eye(4))


def test_covariance_is_read_only_and_validated():
    cov = build_covariance(CHAIN, [0.3, 0.6])
    with pytest.raises(ValueError):
        cov.W[0, 0] = 2.0
    with pytest.raises(ValueError):
        build_covariance(CHAIN, [0.3])
    with pytest.raises(ValueError):
        build_covariance(CHAIN, [0.3, 1.5])


@given(st.integers(2, 8), st.integers(0, 2**32 - 1))
@settings(max_examples=150, deadline=None)
def test_covariance_positive(n, seed):
    rng = np.random.default_rng(seed)
    t = _random_tree(rng, n)
    w = rng.random(n - 1)
    w[rng.random(n - 1) < 0.2] = 0.0
    w[rng.random(n - 1) < 0.2] = 1.0
    cov = build_covariance(t, w)
    assert cov.min_pivot >= -1e-12
    assert np.linalg.eigvalsh(cov.W).min() >= -1e-12
    L = cov.sqrt_factor
    assert np.allclose(L @ L.T, cov.W, atol=1e-12)


def test_psd_pivots_flag_indefinite():
    bad = np.array([[1.0, 0.9, 0.0], [0.9, 1.0, 0.9], [0.0, 0.9, 1.0]])
    assert kernels.psd_min_pivots(bad)[0] < -1e-12
    assert kernels.psd_min_pivots(np.ones((3, 3)))[0] >= -1e-12


def test_covariance_error_raised_for_non_tree_minimum(monkeypatch):
    from lve import interp
    monkeypatch.setattr(interp, "covariance_batch",
                        lambda tree, w: np.array([[[1.0, 0.9, 0.0], [0.9, 1.0, 0.9], [0.0, 0.9, 1.0]]]))
    with pytest.raises(CovarianceError):
        interp.build_covariance(CHAIN, [0.5, 0.5])


def test_tensor_hermite_moments():
    nodes, wts = tensor_hermite(10, 2)
    assert wts.sum() == pytest.approx(1.0)
    assert (nodes[:, 0] ** 4 * nodes[:, 1] ** 2) @ wts == pytest.approx(3.0, rel=1e-12)


@pytest.mark.parametrize("m", [1, 2, 3])
def test_simplex_rule_volume(m):
    S, wt = _simplex_rule(m, 8)
    assert wt.sum() == pytest.approx(1.0 / math.factorial(m), rel=1e-13)
    assert np.all(np.diff(S, axis=1) >= 0)
    # E[s_1 ... s_m] over the ordered simplex: m! / (2m)! * ... checked numerically by polynomial exactness
    assert (S[:, -1] ** 2) @ wt == pytest.approx(1.0 / (math.factorial(m - 1) * (m + 2)), rel=1e-12)


def test_w_rule_integrates_path_minimum():
    # int_[0,1]^2 min(w1, w2) dw = 1/3
    nodes, wts = w_rule_tensor(CHAIN, 6)
    assert wts.sum() == pytest.approx(1.0)
    assert np.minimum(nodes[:, 0], nodes[:, 1]) @ wts == pytest.approx(1.0 / 3.0, rel=1e-13)


@pytest.mark.parametrize("mode", [QuadMode.TENSOR, QuadMode.QMC, QuadMode.MC])
def test_gaussian_expectation_second_moment(mode):
    cov = build_covariance(CHAIN, [0.4, 0.7])
    quad = QuadratureSpec(mode, nodes=8, samples=2**13)
    est = gaussian_expectation(cov, lambda s: s[:, 0] * s[:, 2], quad)
    assert abs(est.value - 0.4) <= max(5 * est.error, 1e-12)
    assert est.error < 0.05


def test_gaussian_expectation_sites():
    cov = TreeCovariance(2, np.array([[1.0, 0.5], [0.5, 1.0]]))
    est = gaussian_expectation(cov, lambda s: s[:, 0, 1] * s[:, 1, 1] + s[:, 0, 0] * s[:, 1, 1],
                               QuadratureSpec(nodes=6), sites=2)
    assert est.value == pytest.approx(0.5, abs=1e-12)


def test_gaussian_expectation_rejects_nonfinite():
    cov = build_covariance(CHAIN, [0.5, 0.5])
    with pytest.raises(IntegrationError):
        gaussian_expectation(cov, lambda s: np.full(len(s), np.inf), QuadratureSpec(nodes=4))


def test_qmc_streams_reproducible_and_distinct():
    quad = QuadratureSpec(QuadMode.QMC, samples=64, replicates=2)
    a = qmc_points(3, quad, stream=(1, 2))
    assert np.array_equal(a, qmc_points(3, quad, stream=(1, 2)))
    assert not np.array_equal(a, qmc_points(3, quad, stream=(1, 3)))


def test_quadrature_spec_validation():
    with pytest.raises(ValueError):
        QuadratureSpec(replicates=1)
    with pytest.raises(ValueError):
        QuadratureSpec(mode="bogus")


@pytest.mark.parametrize("n", [2, 3, 4])
def test_replica_identity_polynomial(n):
    rep = replica_identity_check(lambda s: np.prod(s, axis=1) ** 2, n, QuadratureSpec(nodes=10))
    # E[s^(2n)] = (2n-1)!!
    assert rep.single.value.real == pytest.approx(math.prod(range(1, 2 * n, 2)), rel=1e-10)
    assert rep.passed


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 7), st.integers(0, 2**32 - 1))
def test_covariance_monotone_in_each_weight(n, seed):
    rng = np.random.default_rng(seed)
    t = _random_tree(rng, n)
    w = rng.random(n - 1)
    base = build_covariance(t, w).W
    for edge in range(n - 1):
        up = w.copy()
        up[edge] += rng.random() * (1.0 - up[edge])
        assert np.all(build_covariance(t, up).W >= base)


def test_zero_weight_decouples_the_edge():
    W = build_covariance(CHAIN, [0.0, 0.6]).W
    assert W[0, 1] == 0.0 and W[0, 2] == 0.0
    assert W[1, 2] == 0.6


@pytest.mark.parametrize("mode", [QuadMode.TENSOR, QuadMode.QMC])
def test_odd_moments_vanish(mode):
    cov = build_covariance(CHAIN, [0.3, 0.8])
    est = gaussian_expectation(cov, lambda s: s[:, 0] ** 3 * s[:, 1] * s[:, 2],
                               QuadratureSpec(mode, nodes=10, samples=2**12, replicates=8))
    assert abs(est.value) <= max(5 * est.error, 1e-12)


def test_replica_identity_closed_forms():
    quad = QuadratureSpec(QuadMode.TENSOR, nodes=20)
    rep = replica_identity_check(lambda s: np.prod(s, axis=1), 2, quad)
    assert rep.single.value == pytest.approx(1.0, abs=1e-12)
    assert rep.replica.value == pytest.approx(1.0, abs=1e-12)
    rep = replica_identity_check(lambda s: np.exp(1j * s.sum(axis=1)), 3, quad)
    assert rep.single.value == pytest.approx(math.exp(-4.5), abs=1e-9)
    assert rep.replica.value == pytest.approx(math.exp(-4.5), abs=1e-9)
    assert rep.passed
