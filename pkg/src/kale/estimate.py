"""Parameter estimation.

KALE/KALEN parameters ``(sigma_sq, rate, sigma_eps_sq)`` maximize the Gaussian
pseudo-likelihood built on the integrated covariance ``K``; stochastic
Kriging parameters ``(sigma_sq, rate, nugget)`` maximize the (misspecified)
likelihood of ``sigma^2 (Psi + mu I)``. ``rate`` is ``theta`` for the
Gaussian family and ``phi`` for Matérn.

Both covariance matrices are ``sigma_sq`` times a matrix free of
``sigma_sq``, so the variance is profiled out in closed form and Nelder-Mead
only searches the remaining log-parameters. Mean coefficients are profiled
by generalized least squares.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from .convolved import CLOSED_FORM, DEFAULT_N_K, DEFAULT_N_R, ConvolvedKernel, standard_draws
from .designs import random_lhd
from .kernels import GAUSSIAN, KernelSpec, NoiseModel
from .numerics import NotPositiveDefinite, RngStream, cholesky_spd, log_det
from .predict import KALE, SK, Dataset, FittedModel, SingularMeanBasis, build_model, gls

__all__ = [
    "PSEUDO",
    "SK_LIKELIHOOD",
    "DEFAULT_BOUNDS",
    "AllStartsFailed",
    "EstimationProblem",
    "EstimationResult",
    "pseudo_loglik",
    "sk_loglik",
    "fit",
    "model_from_fit",
]

PSEUDO = "pseudo"
SK_LIKELIHOOD = "sk"

DEFAULT_BOUNDS = {
    "theta": (1e-3, 1e3),
    "phi": (1e-3, 1e3),
    "sigma_sq": (1e-4, 1e4),
    "sigma_eps_sq": (1e-8, 10.0),
    "nugget": (1e-8, 10.0),
}

_LOG_2PI = math.log(2.0 * math.pi)


class AllStartsFailed(RuntimeError):
    pass


def rate_name(kernel: KernelSpec) -> str:
    return "theta" if kernel.family == GAUSSIAN else "phi"


def _with_rate(kernel: KernelSpec, value: float) -> KernelSpec:
    return kernel.with_params(**{rate_name(kernel): value})


def _corr_matrix(objective, params, dataset, kernel, mode, draws):
    """System matrix divided by ``sigma_sq``."""
    k = _with_rate(kernel, params[rate_name(kernel)])
    if objective == SK_LIKELIHOOD:
        return k.gram(dataset.X) + params["nugget"] * np.eye(dataset.n)
    noise = NoiseModel("gaussian", params["sigma_eps_sq"], kernel.dim)
    z_r, z_pairs = draws if draws is not None else (None, None)
    ck = ConvolvedKernel(k, noise, 1.0, mode=mode, z_r=z_r, z_pairs=z_pairs)
    return ck.matrix_K(dataset.X)


def _gaussian_loglik(C, dataset, sigma_sq=None, sigma_bounds=None):
    """Log-likelihood of ``Y ~ N(F beta, sigma_sq C)`` with beta profiled.

    With ``sigma_sq=None`` the variance is profiled too (clipped into
    ``sigma_bounds``). Returns (loglik, sigma_sq, beta).
    """
    n = dataset.n
    chol = cholesky_spd(C)
    beta, alpha = gls(chol, dataset.F, dataset.Y)
    resid = dataset.Y - dataset.F @ beta
    quad = float(resid @ alpha)
    if sigma_sq is None:
        sigma_sq = quad / n
        if sigma_bounds is not None:
            sigma_sq = min(max(sigma_sq, sigma_bounds[0]), sigma_bounds[1])
        sigma_sq = max(sigma_sq, 1e-300)
    ll = -0.5 * n * (_LOG_2PI + math.log(sigma_sq)) - 0.5 * log_det(chol) - 0.5 * quad / sigma_sq
    return ll, sigma_sq, beta


def pseudo_loglik(
    params: dict,
    dataset: Dataset,
    kernel: KernelSpec,
    *,
    mode: str = CLOSED_FORM,
    draws=None,
) -> float:
    """Gaussian pseudo-log-likelihood built on the integrated covariance.

    ``params`` holds ``sigma_sq``, the rate (``theta`` or ``phi``) and
    ``sigma_eps_sq``. Returns ``-inf`` when ``K`` cannot be factorized.
    """
    try:
        C = _corr_matrix(PSEUDO, params, dataset, kernel, mode, draws)
        return _gaussian_loglik(C, dataset, params["sigma_sq"])[0]
    except (NotPositiveDefinite, SingularMeanBasis, FloatingPointError):
        return -math.inf


def sk_loglik(params: dict, dataset: Dataset, kernel: KernelSpec) -> float:
    """Log-likelihood of ``Y ~ N(F beta, sigma_sq (Psi + nugget I))``."""
    try:
        C = _corr_matrix(SK_LIKELIHOOD, params, dataset, kernel, CLOSED_FORM, None)
        return _gaussian_loglik(C, dataset, params["sigma_sq"])[0]
    except (NotPositiveDefinite, SingularMeanBasis, FloatingPointError):
        return -math.inf


@dataclass
class EstimationProblem:
    dataset: Dataset
    kernel: KernelSpec
    objective: str = PSEUDO
    bounds: dict = field(default_factory=dict)
    starts: int = 5
    mode: str = CLOSED_FORM
    n_K: int = DEFAULT_N_K
    n_r: int = DEFAULT_N_R
    fixed: dict = field(default_factory=dict)
    max_iter: int = 1000
    xatol: float = 1e-4
    fatol: float = 1e-7

    def __post_init__(self):
        if self.objective not in (PSEUDO, SK_LIKELIHOOD):
            raise ValueError(f"unknown objective {self.objective!r}")
        merged = {k: v for k, v in DEFAULT_BOUNDS.items() if k in self.param_names}
        merged.update({k: v for k, v in self.bounds.items() if k in self.param_names})
        for name, (lo, hi) in merged.items():
            if not (0 < lo < hi < math.inf):
                raise ValueError(f"bad bounds for {name}: {(lo, hi)}")
        self.bounds = merged
        unknown = set(self.fixed) - set(self.param_names)
        if unknown:
            raise ValueError(f"cannot fix unknown parameters {sorted(unknown)}")

    @property
    def param_names(self) -> tuple[str, ...]:
        third = "sigma_eps_sq" if self.objective == PSEUDO else "nugget"
        return ("sigma_sq", rate_name(self.kernel), third)

    @property
    def free_names(self) -> tuple[str, ...]:
        """Parameters searched by Nelder-Mead (sigma_sq is always profiled)."""
        return tuple(p for p in self.param_names[1:] if p not in self.fixed)


@dataclass
class EstimationResult:
    parameters: dict
    objective: float
    converged: bool
    best_start: int
    beta: np.ndarray
    terminal_values: list = field(default_factory=list)
    draws: tuple | None = field(default=None, repr=False)
    n_evaluations: int = 0


def _profiled_objective(problem: EstimationProblem, draws):
    names = problem.free_names
    sigma_fixed = problem.fixed.get("sigma_sq")
    counter = [0]

    def unpack(z):
        params = dict(problem.fixed)
        params.update({nm: math.exp(v) for nm, v in zip(names, z)})
        return params

    def value(z):
        counter[0] += 1
        params = unpack(z)
        try:
            C = _corr_matrix(problem.objective, params, problem.dataset, problem.kernel,
                             problem.mode, draws)
            ll, s2, beta = _gaussian_loglik(C, problem.dataset, sigma_fixed,
                                            problem.bounds["sigma_sq"])
        except (NotPositiveDefinite, SingularMeanBasis, FloatingPointError):
            return -math.inf, None, None
        if not math.isfinite(ll):
            return -math.inf, None, None
        params["sigma_sq"] = s2
        return ll, params, beta

    return value, counter


def _start_points(problem: EstimationProblem, stream: RngStream) -> np.ndarray:
    names = problem.free_names
    lo = np.array([math.log(problem.bounds[n][0]) for n in names])
    hi = np.array([math.log(problem.bounds[n][1]) for n in names])
    u = random_lhd(problem.starts, len(names), stream.generator())
    return lo + u * (hi - lo)


def _simplex(x0, lo, hi, frac=0.1):
    step = frac * (hi - lo)
    pts = [x0]
    for k in range(len(x0)):
        v = x0.copy()
        v[k] = v[k] + step[k] if v[k] + step[k] <= hi[k] else v[k] - step[k]
        pts.append(v)
    return np.array(pts)


def fit(problem: EstimationProblem, stream: RngStream) -> EstimationResult:
    """Multi-start Nelder-Mead on the log-parameter box; deterministic given
    the stream. Ties between starts go to the lowest start index."""
    draws = None
    if problem.objective == PSEUDO and problem.mode != CLOSED_FORM:
        draws = standard_draws(stream.child(0), problem.n_r, problem.n_K, problem.kernel.dim)
    value, counter = _profiled_objective(problem, draws)
    names = problem.free_names

    if not names:
        ll, params, beta = value(np.zeros(0))
        if params is None:
            raise AllStartsFailed("objective undefined at the fixed parameters")
        return EstimationResult(params, ll, True, 0, beta, [ll], draws, counter[0])

    lo = np.array([math.log(problem.bounds[n][0]) for n in names])
    hi = np.array([math.log(problem.bounds[n][1]) for n in names])

    def negll(z):
        ll = value(np.clip(z, lo, hi))[0]
        return -ll if math.isfinite(ll) else math.inf

    best = None
    terminal = []
    for s, x0 in enumerate(_start_points(problem, stream.child(1))):
        # rejected points are +inf, so the simplex spread can be inf - inf
        with np.errstate(invalid="ignore"):
            res = minimize(
                negll,
                x0,
                method="Nelder-Mead",
                bounds=list(zip(lo, hi)),
                options={
                    "initial_simplex": _simplex(x0, lo, hi),
                    "maxiter": problem.max_iter,
                    "maxfev": 4 * problem.max_iter,
                    "xatol": problem.xatol,
                    "fatol": problem.fatol,
                },
            )
        ll = -res.fun if math.isfinite(res.fun) else -math.inf
        terminal.append(float(ll))
        if math.isfinite(ll) and (best is None or ll > best[0]):
            best = (ll, s, np.clip(res.x, lo, hi), bool(res.success))
    if best is None:
        raise AllStartsFailed("every start ended at an undefined objective")
    ll, s, z, ok = best
    ll, params, beta = value(z)
    return EstimationResult(params, ll, ok, s, beta, terminal, draws, counter[0])


def model_from_fit(problem: EstimationProblem, result: EstimationResult, kind: str = None) -> FittedModel:
    """Build the predictor matching the fitted objective."""
    p = result.parameters
    kernel = _with_rate(problem.kernel, p[rate_name(problem.kernel)])
    if problem.objective == SK_LIKELIHOOD:
        return build_model(SK, problem.dataset, kernel=kernel, sigma_sq=p["sigma_sq"],
                           nugget=p["nugget"])
    kind = kind or KALE
    noise = NoiseModel("gaussian", p["sigma_eps_sq"], kernel.dim)
    z_r, z_pairs = result.draws if result.draws is not None else (None, None)
    ck = ConvolvedKernel(kernel, noise, p["sigma_sq"], mode=problem.mode,
                         n_K=problem.n_K, n_r=problem.n_r, z_r=z_r, z_pairs=z_pairs)
    return build_model(kind, problem.dataset, kernel=kernel, sigma_sq=p["sigma_sq"], ck=ck)
