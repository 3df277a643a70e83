import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kale.convolved import (
    CLOSED_FORM,
    MONTE_CARLO,
    ConvolvedKernel,
    ModeMismatch,
    cov_matrix_K,
    cov_r,
    cov_rN,
    psi_s,
)
from kale.kernels import GAUSSIAN, MATERN, KernelSpec, NoiseModel
from kale.numerics import RngStream, cholesky_spd, hermite_rule


def make(theta=1.0, v=0.25, d=1, sigma_sq=1.0, mode=CLOSED_FORM, family=GAUSSIAN, **kw):
    kernel = KernelSpec(family, theta=theta, phi=theta, nu=kw.pop("nu", 3.0), dim=d)
    return ConvolvedKernel(kernel, NoiseModel("gaussian", v, d), sigma_sq, mode=mode, **kw)


def gauss_expect(f, v, m=40):
    """E f(eps) for eps ~ N(0, v) by Gauss-Hermite."""
    r = hermite_rule(m)
    return float(np.sum(r.weights * f(math.sqrt(2 * v) * r.nodes)) / math.sqrt(math.pi))


def gauss_expect2(f, v, m=40):
    r = hermite_rule(m)
    e = math.sqrt(2 * v) * r.nodes
    E1, E2 = np.meshgrid(e, e, indexing="ij")
    W = np.outer(r.weights, r.weights)
    return float(np.sum(W * f(E1, E2)) / math.pi)


def test_zero_noise_reduces_to_kernel():
    ck = make(theta=0.7, v=0.0, sigma_sq=2.0)
    for h in (0.0, 0.3, 1.1):
        assert math.isclose(cov_r(ck, [h], [0.0]), 2.0 * math.exp(-0.7 * h * h), rel_tol=1e-14)
        assert math.isclose(cov_rN(ck, [h], [0.0]), 2.0 * math.exp(-0.7 * h * h), rel_tol=1e-14)
        assert math.isclose(psi_s(ck, [h]), math.exp(-0.7 * h * h), rel_tol=1e-14)


def test_cov_r_example_and_quadrature_oracle():
    ck = make()
    assert math.isclose(cov_r(ck, [0.0], [0.0]), 1 / math.sqrt(1.5), rel_tol=1e-14)
    assert abs(cov_r(ck, [0.0], [0.0]) - 0.8164966) < 1e-7
    for x, xj in ((0.0, 0.0), (0.4, -0.3), (1.5, 0.2)):
        oracle = gauss_expect(lambda e: np.exp(-((x - xj - e) ** 2)), 0.25)
        assert abs(cov_r(ck, [x], [xj]) - oracle) < 1e-12


def test_cov_rN_example_and_quadrature_oracle():
    ck = make()
    assert math.isclose(cov_rN(ck, [0.0], [0.0]), 1 / math.sqrt(2.0), rel_tol=1e-14)
    for x, xj in ((0.0, 0.0), (0.4, -0.3), (1.5, 0.2)):
        oracle = gauss_expect2(lambda e, ej: np.exp(-((x + e - xj - ej) ** 2)), 0.25)
        assert abs(cov_rN(ck, [x], [xj]) - oracle) < 1e-12


def test_cov_r_monte_carlo_large_sample():
    ck = make(mode=MONTE_CARLO, n_r=10**6, n_K=10, stream=RngStream(5))
    val, se = cov_r(ck, [0.0], [0.0], return_stderr=True)
    assert abs(val - 0.8164966) <= 3 * se


def test_smoothing_identity():
    # r_N(x, x_j) = E r(x + eps, x_j)
    ck = make(theta=1.3, v=0.15)
    for x, xj in ((0.0, 0.0), (0.7, 0.1), (-0.4, 0.9)):
        lhs = cov_rN(ck, [x], [xj])
        rhs = gauss_expect(lambda e: np.array([cov_r(ck, [x + ei], [xj]) for ei in e]), 0.15)
        assert abs(lhs - rhs) <= 1e-8


def test_matrix_K_small_cases():
    ck = make(sigma_sq=1.7)
    assert np.array_equal(cov_matrix_K(ck, [[0.3]]), [[1.7]])
    K = cov_matrix_K(make(), [[0.5], [0.5]])
    assert np.allclose(K, [[1.0, 1 / math.sqrt(2)], [1 / math.sqrt(2), 1.0]], atol=1e-15)
    assert cholesky_spd(K).jitter_applied == 0.0


@pytest.mark.parametrize("mode", [CLOSED_FORM, MONTE_CARLO])
def test_matrix_K_decomposition(mode):
    family = GAUSSIAN if mode == CLOSED_FORM else MATERN
    ck = make(theta=1.2, v=0.1, d=2, sigma_sq=1.5, mode=mode, family=family)
    X = np.random.default_rng(0).random((5, 2))
    K = ck.matrix_K(X)
    # the Monte Carlo estimate is not exactly even in the lag; K is built from j < k
    KS = np.array([[ck.sigma_sq * psi_s(ck, X[min(j, k)] - X[max(j, k)]) for k in range(5)]
                   for j in range(5)])
    D = K - KS
    assert np.max(np.abs(D - np.diag(np.diag(D)))) <= 1e-12
    assert np.allclose(np.diag(D), ck.sigma_sq * (1 - psi_s(ck, [0.0, 0.0])), atol=1e-12)
    assert np.array_equal(K, K.T)
    assert np.all(np.diag(K) == ck.sigma_sq)


def test_psi_s_example_and_positive_definite():
    ck = make(v=0.05)
    assert math.isclose(psi_s(ck, [0.0]), 1 / math.sqrt(1.2), rel_tol=1e-14)
    assert abs(psi_s(ck, [0.0]) - 0.9128709) < 1e-7
    oracle = gauss_expect2(lambda a, b: np.exp(-((0.3 + a - b) ** 2)), 0.05)
    assert abs(psi_s(ck, [0.3]) - oracle) < 1e-12
    X = np.random.default_rng(3).random((10, 2))
    c = make(theta=2.0, v=0.1, d=2)
    S = np.array([[psi_s(c, a - b) for b in X] for a in X])
    assert np.linalg.eigvalsh(S).min() > -1e-8
    for mode, family in ((CLOSED_FORM, GAUSSIAN), (MONTE_CARLO, MATERN)):
        assert psi_s(make(v=0.1, d=2, mode=mode, family=family), [0.0, 0.0]) < 1.0


def test_closed_and_monte_carlo_agree():
    rng = np.random.default_rng(11)
    cf = make(theta=1.0, v=0.2, d=2)
    mc = make(theta=1.0, v=0.2, d=2, mode=MONTE_CARLO, stream=RngStream(3))
    A, B = rng.uniform(-1, 1, (100, 2)), rng.uniform(-1, 1, (100, 2))
    r_cf = np.array([cov_r(cf, a, b) for a, b in zip(A, B)])
    r_mc = np.array([cov_r(mc, a, b) for a, b in zip(A, B)])
    rN_cf = np.array([cov_rN(cf, a, b) for a, b in zip(A, B)])
    rN_mc = np.array([cov_rN(mc, a, b) for a, b in zip(A, B)])
    assert np.max(np.abs(r_cf - r_mc)) <= 4 / math.sqrt(mc.n_r)
    assert np.max(np.abs(rN_cf - rN_mc)) <= 4 / math.sqrt(mc.n_K)


def test_monte_carlo_is_deterministic_given_object():
    mc = make(mode=MONTE_CARLO, family=MATERN, stream=RngStream(9))
    X = np.linspace(0, 1, 6)[:, None]
    assert np.array_equal(mc.matrix_K(X), mc.matrix_K(X))
    again = make(mode=MONTE_CARLO, family=MATERN, stream=RngStream(9))
    assert np.array_equal(mc.matrix_K(X), again.matrix_K(X))
    # changing the noise variance rescales the same standard draws
    wider = mc.with_params(noise=NoiseModel("gaussian", 0.5, 1))
    assert np.array_equal(wider.z_pairs, mc.z_pairs)


def test_matrix_K_vectorized_matches_pointwise_mc():
    mc = make(theta=0.8, v=0.1, d=2, mode=MONTE_CARLO, family=MATERN, nu=2.5, stream=RngStream(1))
    X = np.random.default_rng(2).random((4, 2))
    K = mc.matrix_K(X)
    for i in range(4):
        for j in range(i + 1, 4):
            assert math.isclose(K[i, j], cov_rN(mc, X[i], X[j]), rel_tol=1e-12)
            assert K[j, i] == K[i, j]
    R = mc.cross_r(X[:2], X)
    assert math.isclose(R[1, 3], cov_r(mc, X[1], X[3]), rel_tol=1e-12)


@settings(max_examples=50, deadline=None)
@given(
    theta=st.floats(0.05, 20.0),
    v=st.floats(0.0, 2.0),
    d=st.integers(1, 4),
    sigma_sq=st.floats(0.1, 10.0),
)
def test_closed_form_ordering_at_zero_lag(theta, v, d, sigma_sq):
    ck = make(theta=theta, v=v, d=d, sigma_sq=sigma_sq)
    z = np.zeros(d)
    rn, r = cov_rN(ck, z, z), cov_r(ck, z, z)
    assert 0 < rn <= r * (1 + 1e-14) and r <= sigma_sq * (1 + 1e-14)


@settings(max_examples=30, deadline=None)
@given(
    v=st.floats(1e-4, 1.0),
    seed=st.integers(0, 2**32 - 1),
)
def test_matrix_K_positive_definite_with_replicates(v, seed):
    rng = np.random.default_rng(seed)
    X = rng.random((6, 2))
    X = np.vstack([X, X[:3]])
    K = make(theta=3.0, v=v, d=2).matrix_K(X)
    assert cholesky_spd(K).jitter_applied == 0.0


def test_translation_invariance():
    ck = make(theta=1.1, v=0.3, d=2, sigma_sq=0.9)
    c = np.array([3.7, -2.2])
    x, xj = np.array([0.2, 0.5]), np.array([-0.1, 0.9])
    for f in (cov_r, cov_rN):
        assert math.isclose(f(ck, x, xj), f(ck, x + c, xj + c), rel_tol=1e-12)
    X = np.random.default_rng(4).random((5, 2))
    assert np.allclose(ck.matrix_K(X), ck.matrix_K(X + c), rtol=0, atol=1e-14)


def test_mode_mismatch_and_validation():
    with pytest.raises(ModeMismatch):
        make(family=MATERN, mode=CLOSED_FORM)
    with pytest.raises(ValueError):
        make(sigma_sq=0.0)
    with pytest.raises(ValueError):
        ConvolvedKernel(KernelSpec(GAUSSIAN, dim=2), NoiseModel("gaussian", 0.1, 1))


def test_extrinsic_variance_on_diagonal():
    ck = make(extrinsic_var=0.3)
    K = ck.matrix_K([[0.0], [1.0]])
    assert np.allclose(np.diag(K), 1.3)
