"""Correlation families, their spectral densities, and the input-noise model.

Matérn parameterization: ``Psi(h) = (k r)^nu K_nu(k r) / (Gamma(nu) 2^(nu-1))``
with ``k = 2 sqrt(nu) phi``. Libraries that write the Matérn argument as
``sqrt(2 nu) r / ell`` (scikit-learn, GPy) correspond to ``phi = 1 / (sqrt(2) ell)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import gammaln

from .numerics import RngStream, bessel_k

__all__ = [
    "GAUSSIAN",
    "MATERN",
    "KernelSpec",
    "NoiseModel",
    "UnsupportedNoiseKind",
    "correlation",
    "spectral_density",
    "characteristic_function",
    "sample_noise",
]

GAUSSIAN = "gaussian"
MATERN = "matern"


class UnsupportedNoiseKind(ValueError):
    pass


@dataclass(frozen=True)
class KernelSpec:
    """Stationary isotropic correlation function on R^d.

    ``scales`` optionally stretches coordinates (``h -> h * scales``) to give
    per-dimension rates; with scales ``s`` the Gaussian family becomes
    ``exp(-theta * sum(s_k^2 h_k^2))``.
    """

    family: str = GAUSSIAN
    theta: float = 1.0
    nu: float = 2.5
    phi: float = 1.0
    dim: int = 1
    scales: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.family not in (GAUSSIAN, MATERN):
            raise ValueError(f"unknown kernel family {self.family!r}")
        if self.dim < 1:
            raise ValueError("dim must be positive")
        if self.family == GAUSSIAN and not self.theta > 0:
            raise ValueError("theta must be positive")
        if self.family == MATERN and not (self.nu > 0 and self.phi > 0):
            raise ValueError("nu and phi must be positive")
        if self.scales is not None:
            if len(self.scales) != self.dim or min(self.scales) <= 0:
                raise ValueError("scales must be positive, one per dimension")

    @property
    def rate_vector(self) -> np.ndarray:
        """Per-dimension Gaussian rates ``theta * s_k^2``."""
        s = np.ones(self.dim) if self.scales is None else np.asarray(self.scales)
        return self.theta * s**2

    def stretch(self, h) -> np.ndarray:
        h = np.asarray(h, dtype=float)
        if self.scales is None:
            return h
        return h * np.asarray(self.scales)

    def with_params(self, **changes) -> "KernelSpec":
        params = {f: getattr(self, f) for f in self.__dataclass_fields__}
        params.update(changes)
        return KernelSpec(**params)

    # -- evaluation ---------------------------------------------------------

    def from_sq_dist(self, r2) -> np.ndarray:
        """Correlation as a function of the squared (stretched) distance."""
        r2 = np.asarray(r2, dtype=float)
        if self.family == GAUSSIAN:
            return np.exp(-self.theta * r2)
        return _matern(np.sqrt(r2), self.nu, self.phi)

    def __call__(self, h) -> np.ndarray:
        """Correlation at lag vectors ``h`` of shape ``(..., dim)``."""
        h = self.stretch(h)
        return self.from_sq_dist(np.sum(h * h, axis=-1))

    def gram(self, A, B=None) -> np.ndarray:
        """Correlation matrix ``[Psi(a_i - b_j)]``."""
        A = np.atleast_2d(np.asarray(A, dtype=float))
        B = A if B is None else np.atleast_2d(np.asarray(B, dtype=float))
        As, Bs = self.stretch(A), self.stretch(B)
        r2 = (
            np.sum(As**2, axis=1)[:, None]
            + np.sum(Bs**2, axis=1)[None, :]
            - 2.0 * As @ Bs.T
        )
        np.maximum(r2, 0.0, out=r2)
        if B is A:
            np.fill_diagonal(r2, 0.0)
        return self.from_sq_dist(r2)


def _matern_direct(z: np.ndarray, nu: float) -> np.ndarray:
    """``z^nu K_nu(z) / (Gamma(nu) 2^(nu-1))`` evaluated through bessel_k."""
    out = np.ones_like(z)
    pos = z > 0
    if np.any(pos):
        zp = z[pos]
        log_norm = -gammaln(nu) - (nu - 1.0) * math.log(2.0)
        with np.errstate(under="ignore"):
            out[pos] = np.exp(log_norm + nu * np.log(zp)) * bessel_k(nu, zp)
    return out


# Cubic Hermite table for smooth Matérn shapes (nu >= 2): the likelihood
# surfaces in Monte-Carlo mode evaluate the correlation ~1e5 times per call.
TABLE_MIN_NU = 2.0
TABLE_STEP = 2e-3
TABLE_MAX_Z = 60.0


@lru_cache(maxsize=16)
def _matern_table(nu: float):
    z = np.arange(0.0, TABLE_MAX_Z + 2 * TABLE_STEP, TABLE_STEP)
    g = _matern_direct(z, nu)
    # d/dz [z^nu K_nu(z)] = -z^nu K_{nu-1}(z)
    dg = np.zeros_like(z)
    zp = z[1:]
    log_norm = -gammaln(nu) - (nu - 1.0) * math.log(2.0)
    with np.errstate(under="ignore"):
        dg[1:] = -np.exp(log_norm + nu * np.log(zp)) * bessel_k(nu - 1.0, zp)
    return g, dg * TABLE_STEP


def _matern_tabulated(z: np.ndarray, nu: float) -> np.ndarray:
    g, d = _matern_table(nu)
    t = z / TABLE_STEP
    i = np.minimum(t.astype(np.intp), len(g) - 2)
    s = t - i
    s2 = s * s
    s3 = s2 * s
    out = (
        (2 * s3 - 3 * s2 + 1) * g[i]
        + (s3 - 2 * s2 + s) * d[i]
        + (3 * s2 - 2 * s3) * g[i + 1]
        + (s3 - s2) * d[i + 1]
    )
    far = z > TABLE_MAX_Z
    if np.any(far):
        out[far] = _matern_direct(z[far], nu)
    return out


def _matern(r: np.ndarray, nu: float, phi: float, exact: bool = False) -> np.ndarray:
    z = 2.0 * math.sqrt(nu) * phi * np.asarray(r, dtype=float)
    if nu >= TABLE_MIN_NU and not exact:
        return _matern_tabulated(z, float(nu))
    return _matern_direct(z, nu)


def correlation(spec: KernelSpec, h) -> float:
    return float(spec(np.asarray(h, dtype=float).reshape(spec.dim)))


def spectral_density(spec: KernelSpec, omega):
    """Spectral density ``f`` with ``Psi(h) = int exp(i w.h) f(w) dw``.

    Vectorized over leading axes of ``omega`` (last axis has length dim).
    """
    w = np.asarray(omega, dtype=float)
    d = spec.dim
    if spec.scales is not None:
        s = np.asarray(spec.scales)
        w = w / s
        jac = 1.0 / float(np.prod(s))
    else:
        jac = 1.0
    w2 = np.sum(w * w, axis=-1)
    if spec.family == GAUSSIAN:
        th = spec.theta
        val = (4.0 * math.pi * th) ** (-d / 2) * np.exp(-w2 / (4.0 * th))
    else:
        nu, phi = spec.nu, spec.phi
        c2 = 4.0 * nu * phi**2
        log_c = (
            -0.5 * d * math.log(math.pi)
            + gammaln(nu + 0.5 * d)
            - gammaln(nu)
            + nu * math.log(c2)
        )
        val = np.exp(log_c - (nu + 0.5 * d) * np.log(c2 + w2))
    return jac * val


@dataclass(frozen=True)
class NoiseModel:
    """Intrinsic input noise ``eps ~ N(0, sigma_eps_sq I_d)``; kind "none" is
    the degenerate zero-noise law."""

    kind: str = "gaussian"
    sigma_eps_sq: float = 0.0
    dim: int = 1

    def __post_init__(self):
        if self.kind not in ("gaussian", "none"):
            raise UnsupportedNoiseKind(self.kind)
        if self.sigma_eps_sq < 0:
            raise ValueError("sigma_eps_sq must be nonnegative")

    @property
    def variance(self) -> float:
        return 0.0 if self.kind == "none" else self.sigma_eps_sq

    @property
    def sd(self) -> float:
        return math.sqrt(self.variance)

    def density(self, e) -> np.ndarray:
        e = np.asarray(e, dtype=float)
        v = self.variance
        if v == 0:
            raise ValueError("degenerate noise has no density")
        return (2 * math.pi * v) ** (-self.dim / 2) * np.exp(
            -np.sum(e * e, axis=-1) / (2 * v)
        )


def characteristic_function(noise: NoiseModel, t):
    """``b(t) = E exp(i eps.t)``; real because the noise law is symmetric."""
    if noise.kind not in ("gaussian", "none"):
        raise UnsupportedNoiseKind(noise.kind)
    t = np.asarray(t, dtype=float)
    return np.exp(-0.5 * noise.variance * np.sum(t * t, axis=-1))


def sample_noise(noise: NoiseModel, stream: RngStream, count: int) -> np.ndarray:
    z = stream.generator().standard_normal((count, noise.dim))
    return noise.sd * z
