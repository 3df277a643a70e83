"""KALE, KALEN and stochastic-Kriging predictors.

KALE predicts the noise-free value ``f(x)``; KALEN predicts the response
``y(x) = f(x + eps)`` at a location that itself carries input noise. Both
use the integrated covariance matrix ``K``. Stochastic Kriging (SK) ignores
the input noise and uses ``sigma^2 (Psi(X - X) + mu I)`` instead.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg import solve_triangular

from .convolved import CLOSED_FORM, DEFAULT_N_K, DEFAULT_N_R, ConvolvedKernel
from .kernels import KernelSpec, NoiseModel
from .numerics import (
    DomainError,
    RngStream,
    SpdFactorization,
    cholesky_spd,
    solve_spd,
    std_normal_quantile,
)

__all__ = [
    "KALE",
    "KALEN",
    "SK",
    "MEAN_BASES",
    "SingularMeanBasis",
    "Dataset",
    "FittedModel",
    "PredictionBundle",
    "basis_matrix",
    "build_model",
    "predict",
    "predict_batch",
    "adjusted_sk_mspe",
    "confidence_interval",
]

KALE = "KALE"
KALEN = "KALEN"
SK = "SK"
KINDS = (KALE, KALEN, SK)
MEAN_BASES = ("none", "constant", "linear")

NEGATIVE_MSPE_TOL = 1e-10


class SingularMeanBasis(np.linalg.LinAlgError):
    pass


def basis_matrix(mean_basis: str, X) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    n = len(X)
    if mean_basis == "none":
        return np.zeros((n, 0))
    if mean_basis == "constant":
        return np.ones((n, 1))
    if mean_basis == "linear":
        return np.hstack([np.ones((n, 1)), X])
    raise ValueError(f"unknown mean basis {mean_basis!r}")


@dataclass(frozen=True)
class Dataset:
    X: np.ndarray
    Y: np.ndarray
    mean_basis: str = "none"

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        Y = np.asarray(self.Y, dtype=float).ravel()
        if len(X) != len(Y):
            raise ValueError(f"{len(X)} design rows but {len(Y)} responses")
        if len(X) < 1:
            raise ValueError("empty dataset")
        if self.mean_basis not in MEAN_BASES:
            raise ValueError(f"unknown mean basis {self.mean_basis!r}")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "Y", Y)

    @property
    def n(self) -> int:
        return len(self.Y)

    @property
    def dim(self) -> int:
        return self.X.shape[1]

    @property
    def F(self) -> np.ndarray:
        return basis_matrix(self.mean_basis, self.X)


@dataclass(frozen=True)
class FittedModel:
    kind: str
    kernel: KernelSpec
    sigma_sq: float
    X: np.ndarray
    Y: np.ndarray
    chol: SpdFactorization
    alpha: np.ndarray
    beta: np.ndarray
    mean_basis: str = "none"
    ck: ConvolvedKernel | None = None
    nugget: float | None = None
    noise: NoiseModel | None = None

    @property
    def dim(self) -> int:
        return self.X.shape[1]

    def as_kind(self, kind: str) -> "FittedModel":
        """KALE and KALEN share every fitted quantity; only prediction differs."""
        if {kind, self.kind} <= {KALE, KALEN}:
            return replace(self, kind=kind)
        if kind == self.kind:
            return self
        raise ValueError(f"cannot convert a {self.kind} model to {kind}")


@dataclass
class PredictionBundle:
    mean: float | np.ndarray
    mspe: float | np.ndarray
    ci_low: float | np.ndarray
    ci_high: float | np.ndarray
    ci_level: float = 0.95
    clipped: int = field(default=0)


def build_model(
    kind: str,
    dataset: Dataset,
    *,
    kernel: KernelSpec,
    sigma_sq: float,
    noise: NoiseModel | None = None,
    nugget: float | None = None,
    mode: str = CLOSED_FORM,
    n_K: int = DEFAULT_N_K,
    n_r: int = DEFAULT_N_R,
    stream: RngStream | None = None,
    ck: ConvolvedKernel | None = None,
) -> FittedModel:
    """Factorize the system matrix and profile the mean coefficients by GLS."""
    if kind not in KINDS:
        raise ValueError(f"unknown predictor kind {kind!r}")
    X, Y = dataset.X, dataset.Y
    if kind == SK:
        if nugget is None or not nugget > 0:
            raise ValueError("stochastic Kriging needs a positive nugget")
        system = sigma_sq * (kernel.gram(X) + nugget * np.eye(len(X)))
        ck = None
        noise = None
    else:
        if ck is None:
            if noise is None:
                raise ValueError(f"{kind} needs a noise model")
            ck = ConvolvedKernel(
                kernel, noise, sigma_sq, mode=mode, n_K=n_K, n_r=n_r, stream=stream
            )
        kernel, noise, sigma_sq = ck.kernel, ck.noise, ck.sigma_sq
        system = ck.matrix_K(X)
    chol = cholesky_spd(system)
    beta, alpha = gls(chol, dataset.F, Y)
    return FittedModel(
        kind=kind,
        kernel=kernel,
        sigma_sq=float(sigma_sq),
        X=X,
        Y=Y,
        chol=chol,
        alpha=alpha,
        beta=beta,
        mean_basis=dataset.mean_basis,
        ck=ck,
        nugget=nugget,
        noise=noise,
    )


def gls(chol: SpdFactorization, F: np.ndarray, Y: np.ndarray):
    """Generalized least squares: returns ``beta`` and ``K^{-1}(Y - F beta)``."""
    if F.shape[1] == 0:
        return np.zeros(0), solve_spd(chol, Y)
    KiF = solve_spd(chol, F)
    A = F.T @ KiF
    if np.linalg.matrix_rank(A) < A.shape[0]:
        raise SingularMeanBasis("mean basis is rank-deficient on this design")
    beta = np.linalg.solve(A, KiF.T @ Y)
    return beta, solve_spd(chol, Y - F @ beta)


def _cross_cov(model: FittedModel, Xt: np.ndarray) -> np.ndarray:
    if model.kind == KALE:
        return model.ck.cross_r(Xt, model.X)
    if model.kind == KALEN:
        return model.ck.cross_rN(Xt, model.X)
    return model.sigma_sq * model.kernel.gram(Xt, model.X)


def _clip(var: np.ndarray) -> tuple[np.ndarray, int]:
    bad = var < -NEGATIVE_MSPE_TOL
    n_bad = int(np.count_nonzero(bad))
    if n_bad:
        warnings.warn(
            f"{n_bad} MSPE value(s) below -{NEGATIVE_MSPE_TOL:g} clipped to 0",
            RuntimeWarning,
            stacklevel=3,
        )
    return np.maximum(var, 0.0), n_bad


def predict_batch(model: FittedModel, Xt, level: float = 0.05) -> PredictionBundle:
    """Predict at each row of ``Xt``; ``level`` is beta for the (1-beta) CI."""
    Xt = np.atleast_2d(np.asarray(Xt, dtype=float))
    if Xt.shape[1] != model.dim:
        raise ValueError(f"points have {Xt.shape[1]} columns, model has {model.dim}")
    c = _cross_cov(model, Xt)
    mean = basis_matrix(model.mean_basis, Xt) @ model.beta + c @ model.alpha
    V = solve_triangular(model.chol.lower_triangular_factor, c.T, lower=True)
    var, n_bad = _clip(model.sigma_sq - np.sum(V * V, axis=0))
    low, high = confidence_interval(mean, var, level)
    return PredictionBundle(mean, var, low, high, 1.0 - level, n_bad)


def predict(model: FittedModel, x, level: float = 0.05) -> PredictionBundle:
    x = np.asarray(x, dtype=float).reshape(1, model.dim)
    b = predict_batch(model, x, level)
    return PredictionBundle(
        float(b.mean[0]),
        float(b.mspe[0]),
        float(b.ci_low[0]),
        float(b.ci_high[0]),
        b.ci_level,
        b.clipped,
    )


def adjusted_sk_mspe(model: FittedModel, x, limit: float):
    """SK's model-internal MSPE plus the location-error limit (>= 0).

    ``x`` may be a single point or a matrix of points.
    """
    if model.kind != SK:
        raise ValueError("adjusted MSPE applies to stochastic Kriging models")
    if limit < 0:
        raise ValueError("limit must be nonnegative")
    x = np.asarray(x, dtype=float)
    if x.ndim <= 1:
        return predict(model, x).mspe + limit
    return predict_batch(model, x).mspe + limit


def confidence_interval(mean, mspe, level: float = 0.05):
    """Gaussian-approximation interval ``mean -/+ q sqrt(mspe)`` at level 1 - beta."""
    if not 0.0 < level < 1.0:
        raise DomainError(f"level must lie in (0, 1), got {level}")
    q = std_normal_quantile(1.0 - level / 2.0)
    half = q * np.sqrt(mspe)
    return mean - half, mean + half
