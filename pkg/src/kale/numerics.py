"""Shared numerical kernels: SPD linear algebra, quadrature rules, the
modified Bessel function of the second kind, normal quantiles and seeded
random streams.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from statistics import NormalDist

import numpy as np
from numpy.polynomial import hermite, legendre
from scipy.linalg import cho_solve

__all__ = [
    "NotPositiveDefinite",
    "DimensionMismatch",
    "UnsupportedOrder",
    "DomainError",
    "SpdFactorization",
    "QuadratureRule",
    "RngStream",
    "cholesky_spd",
    "solve_spd",
    "log_det",
    "hermite_rule",
    "legendre_rule",
    "bessel_k",
    "std_normal_quantile",
    "std_normal_sample",
]


class NotPositiveDefinite(np.linalg.LinAlgError):
    """Raised when a matrix cannot be factorized even at the largest jitter."""


class DimensionMismatch(ValueError):
    pass


class UnsupportedOrder(ValueError):
    pass


class DomainError(ValueError):
    pass


# ---------------------------------------------------------------------------
# SPD linear algebra
# ---------------------------------------------------------------------------

_JITTER_BASE = 1e-12
_JITTER_STEPS = 9  # 1e-12 ... 1e-4 times mean(diag)


@dataclass(frozen=True)
class SpdFactorization:
    """Lower Cholesky factor of ``A + jitter_applied * I``."""

    lower_triangular_factor: np.ndarray
    jitter_applied: float = 0.0

    @property
    def n(self) -> int:
        return self.lower_triangular_factor.shape[0]


def cholesky_spd(A) -> SpdFactorization:
    """Cholesky factorization with a geometric jitter ladder.

    The raw matrix is tried first. On failure, ``10**k * 1e-12 * mean(diag)``
    is added to the diagonal for k = 0..8 and the first success is returned.
    """
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise DimensionMismatch(f"expected a square matrix, got shape {A.shape}")
    scale = np.max(np.abs(A)) if A.size else 0.0
    if scale > 0 and np.max(np.abs(A - A.T)) > 1e-12 * scale:
        raise ValueError("matrix is not symmetric")
    try:
        return SpdFactorization(np.linalg.cholesky(A), 0.0)
    except np.linalg.LinAlgError:
        pass
    mean_diag = float(np.mean(np.diag(A)))
    if not mean_diag > 0:
        raise NotPositiveDefinite("non-positive mean diagonal")
    eye = np.eye(A.shape[0])
    for k in range(_JITTER_STEPS):
        jitter = 10.0**k * _JITTER_BASE * mean_diag
        try:
            return SpdFactorization(np.linalg.cholesky(A + jitter * eye), jitter)
        except np.linalg.LinAlgError:
            continue
    raise NotPositiveDefinite(
        f"factorization failed at maximum jitter {1e-4 * mean_diag:.3g}"
    )


def solve_spd(F: SpdFactorization, b):
    """Solve ``(A + jitter I) x = b`` given a factorization of A."""
    b = np.asarray(b, dtype=float)
    if b.shape[0] != F.n:
        raise DimensionMismatch(f"rhs has {b.shape[0]} rows, matrix is {F.n}x{F.n}")
    return cho_solve((F.lower_triangular_factor, True), b, check_finite=False)


def log_det(F: SpdFactorization) -> float:
    return 2.0 * float(np.sum(np.log(np.diag(F.lower_triangular_factor))))


# ---------------------------------------------------------------------------
# Quadrature
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class QuadratureRule:
    nodes: np.ndarray
    weights: np.ndarray
    kind: str  # "hermite" (weight exp(-t^2) on R) or "legendre" (weight 1 on [a, b])

    def integrate(self, f) -> float:
        return float(np.dot(self.weights, f(self.nodes)))


def _check_order(m: int) -> None:
    if not 1 <= m <= 200:
        raise UnsupportedOrder(f"quadrature order must be in [1, 200], got {m}")


def hermite_rule(m: int) -> QuadratureRule:
    _check_order(m)
    x, w = hermite.hermgauss(m)
    return QuadratureRule(x, w, "hermite")


def legendre_rule(m: int, a: float = -1.0, b: float = 1.0) -> QuadratureRule:
    _check_order(m)
    x, w = legendre.leggauss(m)
    half = 0.5 * (b - a)
    return QuadratureRule(half * x + 0.5 * (a + b), half * w, "legendre")


# ---------------------------------------------------------------------------
# Modified Bessel function of the second kind
# ---------------------------------------------------------------------------

# Taylor coefficients of 1/Gamma(z) about 0 (c[1] = 1); used for the
# Temme gamma combinations, which cancel catastrophically near mu = 0.
_RGAMMA_TAYLOR = (
    0.0,
    1.0,
    0.577215664901532861,
    -0.655878071520253881,
    -0.0420026350340952355,
    0.16653861138229149,
    -0.0421977345555443367,
    -0.00962197152787697356,
    0.00721894324666309954,
    -0.00116516759185906511,
    -0.000215241674114950973,
    0.000128050282388116186,
    -0.0000201348547807882387,
    -1.25049348214267066e-6,
    1.13302723198169588e-6,
    -2.0563384169776071e-7,
    6.11609510448141582e-9,
    5.00200764446922293e-9,
    -1.18127457048702014e-9,
    1.04342671169110051e-10,
    7.78226343990507125e-12,
    -3.69680561864220571e-12,
    5.10037028745447598e-13,
    -2.05832605356650678e-14,
    -5.34812253942301798e-15,
    1.22677862823826079e-15,
    -1.18125930169745877e-16,
    1.18669225475160033e-18,
)

_EPS = 1e-16
_MAX_ITER = 20000


def _temme_gammas(mu: float):
    """Return gam1, gam2, 1/Gamma(1+mu), 1/Gamma(1-mu) for |mu| <= 1/2."""
    c = _RGAMMA_TAYLOR
    gam1 = -sum(c[k] * mu ** (k - 2) for k in range(2, len(c), 2))
    gam2 = sum(c[k] * mu ** (k - 1) for k in range(1, len(c), 2))
    gampl = gam2 - mu * gam1
    gammi = gam2 + mu * gam1
    return gam1, gam2, gampl, gammi


def _k_small(mu: float, x: np.ndarray):
    """Temme's series for K_mu(x), K_{mu+1}(x); accurate for x <= 2."""
    gam1, gam2, gampl, gammi = _temme_gammas(mu)
    x2 = 0.5 * x
    pimu = math.pi * mu
    fact = 1.0 if abs(pimu) < _EPS else pimu / math.sin(pimu)
    d = -np.log(x2)
    e = mu * d
    with np.errstate(invalid="ignore", divide="ignore"):
        fact2 = np.where(np.abs(e) < _EPS, 1.0, np.sinh(e) / np.where(e == 0, 1.0, e))
    ff = fact * (gam1 * np.cosh(e) + gam2 * fact2 * d)
    total = ff.copy()
    e = np.exp(e)
    p = 0.5 * e / gampl
    q = 0.5 / (e * gammi)
    c = np.ones_like(x)
    dd = x2 * x2
    total1 = p.copy()
    for i in range(1, _MAX_ITER):
        ff = (i * ff + p + q) / (i * i - mu * mu)
        c = c * dd / i
        p = p / (i - mu)
        q = q / (i + mu)
        delta = c * ff
        total += delta
        total1 += c * (p - i * ff)
        if np.all(np.abs(delta) < np.abs(total) * _EPS):
            break
    return total, total1 * 2.0 / x


def _k_large(mu: float, x: np.ndarray):
    """Steed's continued fraction (CF2) for K_mu(x), K_{mu+1}(x); x >= 2."""
    b = 2.0 * (1.0 + x)
    d = 1.0 / b
    h = d.copy()
    delh = d.copy()
    q1 = np.zeros_like(x)
    q2 = np.ones_like(x)
    a1 = 0.25 - mu * mu
    q = np.full_like(x, a1)
    c = np.full_like(x, a1)
    a = -a1
    s = 1.0 + q * delh
    for i in range(2, _MAX_ITER):
        a -= 2 * (i - 1)
        c = -a * c / i
        qnew = (q1 - b * q2) / a
        q1 = q2
        q2 = qnew
        q = q + c * qnew
        b = b + 2.0
        d = 1.0 / (b + a * d)
        delh = (b * d - 1.0) * delh
        h = h + delh
        dels = q * delh
        s = s + dels
        if np.all(np.abs(dels / s) < _EPS):
            break
    h = a1 * h
    k_mu = np.sqrt(math.pi / (2.0 * x)) * np.exp(-x) / s
    k_mu1 = k_mu * (mu + x + 0.5 - h) / x
    return k_mu, k_mu1


def _is_half_integer(nu: float) -> bool:
    return abs(nu - math.floor(nu) - 0.5) < 1e-14


def bessel_k(nu: float, x):
    """Modified Bessel function of the second kind, K_nu(x), for real nu >= 0.

    Half-integer orders use the closed form for K_{1/2}, K_{3/2}; other orders
    reduce to |mu| <= 1/2 and use Temme's series (x < 2) or Steed's continued
    fraction (x >= 2). Higher orders follow from the upward recurrence
    ``K_{v+1} = K_{v-1} + (2v/x) K_v``. Accepts scalars or arrays.
    """
    if nu < 0:
        nu = -nu  # K is even in the order
    xa = np.asarray(x, dtype=float)
    if np.any(~(xa > 0)):
        raise DomainError("bessel_k requires x > 0")
    scalar = xa.ndim == 0
    xv = np.atleast_1d(xa).ravel()

    if _is_half_integer(nu):
        n_up = int(math.floor(nu))
        mu = 0.5
        k_mu = np.sqrt(math.pi / (2.0 * xv)) * np.exp(-xv)
        k_mu1 = k_mu * (1.0 + 1.0 / xv)
    else:
        n_up = int(nu + 0.5)
        mu = nu - n_up
        k_mu = np.empty_like(xv)
        k_mu1 = np.empty_like(xv)
        small = xv < 2.0
        if np.any(small):
            k_mu[small], k_mu1[small] = _k_small(mu, xv[small])
        if np.any(~small):
            k_mu[~small], k_mu1[~small] = _k_large(mu, xv[~small])

    for i in range(1, n_up + 1):
        k_next = (mu + i) * (2.0 / xv) * k_mu1 + k_mu
        k_mu, k_mu1 = k_mu1, k_next
    out = k_mu.reshape(np.shape(xa)) if not scalar else float(k_mu[0])
    return out


# ---------------------------------------------------------------------------
# Normal distribution and random streams
# ---------------------------------------------------------------------------

_STD_NORMAL = NormalDist()


def std_normal_quantile(p: float) -> float:
    if not 0.0 < p < 1.0:
        raise DomainError(f"probability must lie in (0, 1), got {p}")
    return _STD_NORMAL.inv_cdf(p)


@dataclass(frozen=True)
class RngStream:
    """Counter-based (Philox) random stream keyed by ``(seed, stream_id)``.

    Every call to :meth:`generator` restarts the stream at counter zero, so a
    stream identity always reproduces the same draws.
    """

    seed: int
    stream_id: int = 0

    def generator(self) -> np.random.Generator:
        key = np.array([self.seed % 2**64, self.stream_id % 2**64], dtype=np.uint64)
        return np.random.Generator(np.random.Philox(key=key))

    def spawn(self, stream_id: int) -> "RngStream":
        """A stream with the same seed and a different id."""
        return RngStream(self.seed, stream_id)

    def child(self, index: int) -> "RngStream":
        """Deterministically derived sub-stream, independent of siblings."""
        mixed = np.random.SeedSequence([self.seed, self.stream_id, index])
        return RngStream(self.seed, int(mixed.generate_state(1, dtype=np.uint64)[0]))


def std_normal_sample(stream: RngStream, count: int, dim: int | None = None) -> np.ndarray:
    shape = count if dim is None else (count, dim)
    return stream.generator().standard_normal(shape)
