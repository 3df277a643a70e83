"""Noise-integrated covariances for a Gaussian process observed at perturbed
inputs ``y_j = f(x_j + eps_j)``.

* ``r(x, x_j)  = sigma^2 E Psi(x - x_j - eps_j)``          (KALE cross-covariance)
* ``r_N(x, x_j) = sigma^2 E Psi(x + eps - x_j - eps_j)``   (KALEN cross-covariance)
* ``K_jk = r_N(x_j, x_k)`` for j != k and ``sigma^2`` on the diagonal
* ``Psi_S(h) = E Psi(h + eps_1 - eps_2)``

Gaussian correlation with Gaussian noise has closed forms; everything else is
estimated by Monte Carlo over a fixed set of standard-normal draws that are
rescaled by the noise standard deviation, so evaluations are deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .kernels import GAUSSIAN, KernelSpec, NoiseModel
from .numerics import RngStream

__all__ = [
    "CLOSED_FORM",
    "MONTE_CARLO",
    "ModeMismatch",
    "ConvolvedKernel",
    "cov_r",
    "cov_rN",
    "cov_matrix_K",
    "psi_s",
]

CLOSED_FORM = "closed"
MONTE_CARLO = "mc"

DEFAULT_N_K = 900
DEFAULT_N_R = 30

# cap on temporaries of shape (rows, n, draws)
_CHUNK_ELEMS = 4_000_000


class ModeMismatch(ValueError):
    pass


def standard_draws(stream: RngStream, n_r: int, n_k: int, dim: int):
    """Standard-normal draws for the r-integral and for the eps-pair integrals."""
    g = stream.generator()
    z_r = g.standard_normal((n_r, dim))
    z_pairs = g.standard_normal((n_k, 2, dim))
    return z_r, z_pairs


@dataclass(frozen=True)
class ConvolvedKernel:
    kernel: KernelSpec
    noise: NoiseModel
    sigma_sq: float = 1.0
    mode: str = CLOSED_FORM
    n_K: int = DEFAULT_N_K
    n_r: int = DEFAULT_N_R
    stream: RngStream | None = None
    extrinsic_var: float = 0.0
    z_r: np.ndarray | None = field(default=None, repr=False, compare=False)
    z_pairs: np.ndarray | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.sigma_sq <= 0:
            raise ValueError("sigma_sq must be positive")
        if self.noise.dim != self.kernel.dim:
            raise ValueError("kernel and noise dimensions differ")
        if self.mode == CLOSED_FORM:
            if self.kernel.family != GAUSSIAN:
                raise ModeMismatch("closed forms exist only for the Gaussian kernel")
            return
        if self.mode != MONTE_CARLO:
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.z_r is None or self.z_pairs is None:
            stream = self.stream if self.stream is not None else RngStream(0)
            z_r, z_pairs = standard_draws(stream, self.n_r, self.n_K, self.kernel.dim)
            object.__setattr__(self, "z_r", z_r)
            object.__setattr__(self, "z_pairs", z_pairs)
        else:
            object.__setattr__(self, "n_r", len(self.z_r))
            object.__setattr__(self, "n_K", len(self.z_pairs))

    @property
    def dim(self) -> int:
        return self.kernel.dim

    # -- noise draws ---------------------------------------------------------

    @property
    def eps_r(self) -> np.ndarray:
        return self.noise.sd * self.z_r

    @property
    def eps_diff(self) -> np.ndarray:
        """``eps_1 - eps_2`` over the fixed pairs."""
        return self.noise.sd * (self.z_pairs[:, 0, :] - self.z_pairs[:, 1, :])

    # -- closed forms --------------------------------------------------------

    def _closed(self, lag_sq_by_dim: np.ndarray, factor: float) -> np.ndarray:
        """Gaussian closed form with per-dimension smoothing ``1 + factor s^2 lam``."""
        lam = self.kernel.rate_vector
        denom = 1.0 + factor * self.noise.variance * lam
        expo = -np.sum(lag_sq_by_dim * (lam / denom), axis=-1)
        return self.sigma_sq * np.prod(denom ** -0.5) * np.exp(expo)

    # -- Monte Carlo ---------------------------------------------------------

    def _mc_mean(self, lags: np.ndarray, shifts: np.ndarray) -> np.ndarray:
        """``mean_s Psi(lag + s)`` for every lag; lags has shape (..., d)."""
        lead = lags.shape[:-1]
        flat = lags.reshape(-1, self.dim)
        out = np.empty(len(flat))
        step = max(1, _CHUNK_ELEMS // max(1, len(shifts)))
        for i in range(0, len(flat), step):
            block = flat[i : i + step, None, :] + shifts[None, :, :]
            out[i : i + step] = self.kernel(block).mean(axis=1)
        return out.reshape(lead)

    def _mc_samples(self, lag: np.ndarray, shifts: np.ndarray) -> np.ndarray:
        return self.kernel(lag[None, :] + shifts)

    # -- public matrix interface ---------------------------------------------

    def cross_r(self, Xt, X) -> np.ndarray:
        """Matrix ``[r(x_i, x_j)]`` for test rows ``Xt`` and design rows ``X``."""
        lags = _lags(Xt, X)
        if self.mode == CLOSED_FORM:
            return self._closed(lags**2, 2.0)
        # x - (x_j + eps_j)
        return self.sigma_sq * self._mc_mean(lags, -self.eps_r)

    def cross_rN(self, Xt, X) -> np.ndarray:
        lags = _lags(Xt, X)
        if self.mode == CLOSED_FORM:
            return self._closed(lags**2, 4.0)
        return self.sigma_sq * self._mc_mean(lags, self.eps_diff)

    def matrix_K(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        n = len(X)
        K = np.empty((n, n))
        # the MC estimate is not exactly even in the lag, so j < k defines both halves
        iu = np.triu_indices(n, 1)
        lags = X[iu[0]] - X[iu[1]]
        if self.mode == CLOSED_FORM:
            off = self._closed(lags**2, 4.0)
        else:
            off = self.sigma_sq * self._mc_mean(lags, self.eps_diff)
        K[iu] = off
        K[(iu[1], iu[0])] = off
        np.fill_diagonal(K, self.sigma_sq + self.extrinsic_var)
        return K

    def psi_s(self, h) -> np.ndarray:
        h = np.asarray(h, dtype=float)
        if self.mode == CLOSED_FORM:
            return self._closed(h**2, 4.0) / self.sigma_sq
        return self._mc_mean(h, self.eps_diff)

    def with_params(self, **changes) -> "ConvolvedKernel":
        """Copy with new parameters, keeping the same fixed draws."""
        params = {
            "kernel": self.kernel,
            "noise": self.noise,
            "sigma_sq": self.sigma_sq,
            "mode": self.mode,
            "n_K": self.n_K,
            "n_r": self.n_r,
            "stream": self.stream,
            "extrinsic_var": self.extrinsic_var,
            "z_r": self.z_r,
            "z_pairs": self.z_pairs,
        }
        params.update(changes)
        return ConvolvedKernel(**params)


def _lags(A, B) -> np.ndarray:
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    return A[:, None, :] - B[None, :, :]


def _point(ck: ConvolvedKernel, x) -> np.ndarray:
    return np.asarray(x, dtype=float).reshape(ck.dim)


def cov_r(ck: ConvolvedKernel, x, xj, return_stderr: bool = False):
    """``r(x, x_j)``; with ``return_stderr`` also the Monte-Carlo standard error
    (zero in closed-form mode)."""
    x, xj = _point(ck, x), _point(ck, xj)
    if ck.mode == CLOSED_FORM:
        val = float(ck._closed((x - xj) ** 2, 2.0))
        return (val, 0.0) if return_stderr else val
    s = ck.sigma_sq * ck._mc_samples(x - xj, -ck.eps_r)
    val = float(s.mean())
    if return_stderr:
        return val, float(s.std(ddof=1) / np.sqrt(len(s)))
    return val


def cov_rN(ck: ConvolvedKernel, x, xj, return_stderr: bool = False):
    x, xj = _point(ck, x), _point(ck, xj)
    if ck.mode == CLOSED_FORM:
        val = float(ck._closed((x - xj) ** 2, 4.0))
        return (val, 0.0) if return_stderr else val
    s = ck.sigma_sq * ck._mc_samples(x - xj, ck.eps_diff)
    val = float(s.mean())
    if return_stderr:
        return val, float(s.std(ddof=1) / np.sqrt(len(s)))
    return val


def cov_matrix_K(ck: ConvolvedKernel, X) -> np.ndarray:
    return ck.matrix_K(X)


def psi_s(ck: ConvolvedKernel, h) -> float:
    return float(ck.psi_s(_point(ck, h)))
