import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import gamma, kv

from kale.kernels import (
    GAUSSIAN,
    MATERN,
    KernelSpec,
    NoiseModel,
    UnsupportedNoiseKind,
    _matern,
    characteristic_function,
    correlation,
    sample_noise,
    spectral_density,
)
from kale.numerics import RngStream, hermite_rule, legendre_rule


def matern_reference(r, nu, phi):
    z = 2 * math.sqrt(nu) * phi * r
    return z**nu * kv(nu, z) / (gamma(nu) * 2 ** (nu - 1))


def test_correlation_at_zero():
    assert correlation(KernelSpec(GAUSSIAN, theta=1.0), [0.0]) == 1.0
    for nu in (0.5, 1.3, 3.0):
        assert correlation(KernelSpec(MATERN, nu=nu, phi=0.7, dim=2), [0.0, 0.0]) == 1.0


def test_gaussian_correlation_value():
    k = KernelSpec(GAUSSIAN, theta=0.8, dim=2)
    assert math.isclose(correlation(k, [0.3, -0.4]), math.exp(-0.8 * 0.25), rel_tol=1e-15)


def test_matern_half_is_exponential():
    # nu = 1/2: argument 2 sqrt(1/2) phi r = sqrt(2) phi r and Psi = exp(-sqrt(2) phi r)
    k = KernelSpec(MATERN, nu=0.5, phi=1.7)
    for r in (0.01, 0.4, 2.0):
        assert math.isclose(correlation(k, [r]), math.exp(-math.sqrt(2) * 1.7 * r), rel_tol=1e-12)


def test_matern_nu3_against_scipy_bessel():
    k = KernelSpec(MATERN, nu=3.0, phi=1.0)
    assert abs(correlation(k, [0.5]) - matern_reference(0.5, 3.0, 1.0)) < 1e-9


@pytest.mark.parametrize("nu", [2.0, 2.5, 3.0, 4.2, 8.0])
def test_matern_table_matches_direct(nu):
    r = np.concatenate([np.linspace(0, 0.02, 201), np.linspace(0.02, 12, 5000), [40.0, 80.0]])
    assert np.max(np.abs(_matern(r, nu, 1.3) - _matern(r, nu, 1.3, exact=True))) < 1e-12
    assert np.allclose(_matern(r[1:], nu, 1.3, exact=True), matern_reference(r[1:], nu, 1.3),
                       rtol=1e-9, atol=1e-300)


@settings(max_examples=60, deadline=None)
@given(
    family=st.sampled_from([GAUSSIAN, MATERN]),
    rate=st.floats(0.1, 5.0),
    nu=st.floats(0.3, 6.0),
    h=st.lists(st.floats(-3, 3), min_size=2, max_size=2),
)
def test_correlation_symmetric_bounded(family, rate, nu, h):
    k = KernelSpec(family, theta=rate, phi=rate, nu=nu, dim=2)
    v = correlation(k, h)
    assert 0.0 <= v <= 1.0
    assert math.isclose(v, correlation(k, [-h[0], -h[1]]), rel_tol=1e-14, abs_tol=1e-300)


@pytest.mark.parametrize("family", [GAUSSIAN, MATERN])
def test_correlation_decreasing_in_distance(family):
    k = KernelSpec(family, theta=1.2, phi=1.2, nu=2.5)
    r = np.linspace(0, 3, 400)
    vals = k(r[:, None])
    assert np.all(np.diff(vals) < 0)


def test_matern_increasing_in_nu_at_small_lag():
    vals = [correlation(KernelSpec(MATERN, nu=nu, phi=1.0), [0.05]) for nu in (0.5, 1, 2, 4, 8, 16)]
    assert all(b > a for a, b in zip(vals, vals[1:]))


def test_correlation_matrices_positive_semidefinite():
    rng = np.random.default_rng(0)
    for trial in range(50):
        d = int(rng.integers(1, 4))
        n = int(rng.integers(2, 26))
        X = rng.random((n, d))
        fam = GAUSSIAN if trial % 2 else MATERN
        k = KernelSpec(fam, theta=rng.uniform(0.5, 5), phi=rng.uniform(0.5, 3),
                       nu=rng.uniform(0.5, 4), dim=d)
        assert np.linalg.eigvalsh(k.gram(X)).min() > -1e-8


def test_gram_matches_pointwise_and_scales():
    rng = np.random.default_rng(1)
    A, B = rng.random((4, 3)), rng.random((5, 3))
    k = KernelSpec(MATERN, nu=2.5, phi=0.9, dim=3, scales=(1.0, 2.0, 0.5))
    G = k.gram(A, B)
    for i in range(4):
        for j in range(5):
            h = (A[i] - B[j]) * np.array([1.0, 2.0, 0.5])
            assert abs(G[i, j] - matern_reference(np.linalg.norm(h), 2.5, 0.9)) < 1e-9


def test_spectral_density_point_values():
    g = KernelSpec(GAUSSIAN, theta=1.0)
    assert math.isclose(float(spectral_density(g, [0.0])), (4 * math.pi) ** -0.5, rel_tol=1e-14)
    assert math.isclose(float(spectral_density(g, [0.0])), 0.2820948, rel_tol=1e-7)
    m = KernelSpec(MATERN, nu=3.0, phi=1.0)
    expected = math.pi**-0.5 * math.gamma(3.5) / math.gamma(3.0) * 12.0**3 * 12.0**-3.5
    assert math.isclose(float(spectral_density(m, [0.0])), expected, rel_tol=1e-12)


def test_spectral_density_integrates_to_one():
    rule = legendre_rule(200, -40, 40)
    g = KernelSpec(GAUSSIAN, theta=1.0)
    assert abs(rule.integrate(lambda w: spectral_density(g, w[:, None])) - 1.0) <= 1e-8
    # Matérn tails are polynomial; check on a wide window and account for the tail analytically
    m = KernelSpec(MATERN, nu=3.0, phi=1.0)
    rule = legendre_rule(200, 0, 400)
    inner = 2 * rule.integrate(lambda w: spectral_density(m, w[:, None]))
    assert abs(inner - 1.0) < 1e-6


def test_spectral_density_is_fourier_pair():
    # Psi(h) = int cos(w h) f(w) dw in one dimension
    rule = legendre_rule(200, 0, 60)
    for k in (KernelSpec(GAUSSIAN, theta=0.7), KernelSpec(MATERN, nu=3.0, phi=1.1)):
        for h in (0.2, 0.9):
            val = 2 * rule.integrate(lambda w: np.cos(w * h) * spectral_density(k, w[:, None]))
            assert abs(val - correlation(k, [h])) < 1e-6


def test_characteristic_function_values():
    n = NoiseModel("gaussian", 0.25, 1)
    assert float(characteristic_function(n, [0.0])) == 1.0
    assert math.isclose(float(characteristic_function(n, [2.0])), math.exp(-0.5), rel_tol=1e-15)
    zero = NoiseModel("gaussian", 0.0, 2)
    assert np.all(characteristic_function(zero, np.random.default_rng(0).random((5, 2))) == 1.0)


def test_characteristic_function_matches_hermite_expectation():
    v = 0.3
    n = NoiseModel("gaussian", v, 1)
    rule = hermite_rule(60)
    for t in (0.1, 1.0, 3.0):
        # E cos(eps t) with eps = sqrt(2 v) u under weight exp(-u^2)
        est = rule.integrate(lambda u: np.cos(math.sqrt(2 * v) * u * t)) / math.sqrt(math.pi)
        assert abs(est - float(characteristic_function(n, [t]))) < 1e-8


def test_noise_density_integrates_to_one():
    rule = legendre_rule(120, -5, 5)
    for v in (0.1, 0.5):
        n1 = NoiseModel("gaussian", v, 1)
        assert abs(rule.integrate(lambda e: n1.density(e[:, None])) - 1.0) < 1e-8
        n2 = NoiseModel("gaussian", v, 2)
        E1, E2 = np.meshgrid(rule.nodes, rule.nodes, indexing="ij")
        W = np.outer(rule.weights, rule.weights)
        total = np.sum(W * n2.density(np.stack([E1, E2], axis=-1)))
        assert abs(total - 1.0) < 1e-8


def test_sample_noise():
    zero = NoiseModel("gaussian", 0.0, 3)
    assert np.all(sample_noise(zero, RngStream(1), 10) == 0.0)
    n = NoiseModel("gaussian", 0.1, 2)
    e = sample_noise(n, RngStream(2), 100_000)
    assert e.shape == (100_000, 2)
    assert np.all(np.abs(e.var(axis=0) - 0.1) < 0.005)
    assert np.array_equal(e, sample_noise(n, RngStream(2), 100_000))


def test_validation():
    with pytest.raises(ValueError):
        KernelSpec(GAUSSIAN, theta=-1.0)
    with pytest.raises(ValueError):
        KernelSpec(MATERN, nu=0.0)
    with pytest.raises(UnsupportedNoiseKind):
        NoiseModel("uniform", 0.1, 1)
    with pytest.raises(ValueError):
        NoiseModel("gaussian", -0.1, 1)
