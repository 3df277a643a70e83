"""Asymptotic MSPE quantities under input location error.

``kalen_limit`` is the large-sample MSPE of KALEN (and of stochastic Kriging
when the target carries noise): ``sigma^2 (1 - Psi_S(0))``.

``no_noise_upper_bound`` is the asymptotic bound on the MSPE of stochastic
Kriging (hence also KALE) for a noise-free target,

    C sigma^2 * int (1 - |b(t)|)^2 f_Psi(t) dt,

with ``b`` the noise characteristic function, ``f_Psi`` the spectral density
normalized so that ``int f_Psi = 1`` and ``C = 1.04`` by default.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln, ndtri

from .convolved import CLOSED_FORM, MONTE_CARLO, ConvolvedKernel
from .designs import grid_design
from .kernels import GAUSSIAN, KernelSpec, NoiseModel, characteristic_function, spectral_density
from .numerics import cholesky_spd, legendre_rule, solve_spd

__all__ = [
    "BOUND_CONSTANT",
    "UnsupportedDimension",
    "BoundReport",
    "kalen_limit",
    "kalen_limit_closed_form",
    "no_noise_upper_bound",
    "bound_report",
    "figure2_curves",
    "sk_mspe_convergence_probe",
    "kalen_mspe",
    "sk_true_mspe",
]

BOUND_CONSTANT = 1.04
TAIL_MASS = 1e-12
QUAD_NODES = 200


class UnsupportedDimension(ValueError):
    pass


@dataclass(frozen=True)
class BoundReport:
    limit_kalen: float
    upper_bound_no_noise: float
    method: str
    quadrature_error_estimate: float = 0.0


def kalen_limit_closed_form(theta: float, sigma_sq: float, d: int, sigma_eps_sq: float) -> float:
    s = (1.0 + 4.0 * sigma_eps_sq * theta) ** (d / 2)
    return sigma_sq * (s - 1.0) / s


def kalen_limit(ck: ConvolvedKernel) -> float:
    """``sigma^2 (Psi(0) - Psi_S(0))``."""
    if ck.mode == CLOSED_FORM and ck.kernel.scales is None:
        return kalen_limit_closed_form(
            ck.kernel.theta, ck.sigma_sq, ck.dim, ck.noise.variance
        )
    return ck.sigma_sq * (1.0 - float(ck.psi_s(np.zeros(ck.dim))))


def _bound_closed_form(theta, sigma_sq, d, sigma_eps_sq, constant=BOUND_CONSTANT):
    a2 = (1.0 + 2.0 * sigma_eps_sq * theta) ** (d / 2)
    a4 = (1.0 + 4.0 * sigma_eps_sq * theta) ** (d / 2)
    return constant * sigma_sq * (1.0 + 1.0 / a4 - 2.0 / a2)


def _truncation(kernel: KernelSpec) -> tuple[float, float]:
    """Half-width T of the integration box and the spectral mass outside it."""
    d = kernel.dim
    if kernel.family == GAUSSIAN:
        # each coordinate of f_Psi is N(0, 2 theta)
        sd = math.sqrt(2.0 * kernel.theta)
        z = float(ndtri(1.0 - TAIL_MASS / (2.0 * d)))
        return sd * z, TAIL_MASS
    # radial tail of the Matérn density beyond radius R is at most
    # S_{d-1} c R^{-2 nu} / (2 nu), with c the density prefactor
    nu, phi = kernel.nu, kernel.phi
    c2 = 4.0 * nu * phi**2
    log_c = (
        -0.5 * d * math.log(math.pi) + gammaln(nu + 0.5 * d) - gammaln(nu) + nu * math.log(c2)
    )
    log_sphere = math.log(2.0) + 0.5 * d * math.log(math.pi) - gammaln(0.5 * d)
    target = 1e-10
    log_R = (log_sphere + log_c - math.log(2.0 * nu) - math.log(target)) / (2.0 * nu)
    R = max(math.exp(log_R), 10.0 * math.sqrt(c2))
    tail = math.exp(log_sphere + log_c - 2.0 * nu * math.log(R)) / (2.0 * nu)
    return R, tail


def _weighted_spectral_integrals(kernel, noise, t):
    """Integrands ``(1 - |b|)^2 f`` and ``|b|^2 f`` at nodes ``t``."""
    b = np.abs(characteristic_function(noise, t))
    f = spectral_density(kernel, t)
    return np.stack([(1.0 - b) ** 2 * f, b * b * f])


def _quadrature_integrals(kernel, noise, nodes=QUAD_NODES):
    """Return ``int (1-|b|)^2 f``, ``int |b|^2 f`` and the truncated spectral mass."""
    d = kernel.dim
    T, tail = _truncation(kernel)
    if kernel.scales is not None:
        T *= max(kernel.scales)
    rule = legendre_rule(nodes, -T, T)
    if d == 1:
        vals = _weighted_spectral_integrals(kernel, noise, rule.nodes[:, None]) @ rule.weights
        return float(vals[0]), float(vals[1]), tail
    if d <= 3:
        # tensor rule, accumulated one slab of the first axis at a time
        total = np.zeros(2)
        idx = np.indices((nodes,) * (d - 1)).reshape(d - 1, -1).T
        w_rest = np.prod(rule.weights[idx], axis=1)
        pts_rest = rule.nodes[idx]
        for i in range(nodes):
            pts = np.hstack([np.full((len(idx), 1), rule.nodes[i]), pts_rest])
            total += rule.weights[i] * (_weighted_spectral_integrals(kernel, noise, pts) @ w_rest)
        return float(total[0]), float(total[1]), tail
    if kernel.family != GAUSSIAN:
        raise UnsupportedDimension("quadrature bound for Matérn is limited to d <= 3")
    # (1 - b)^2 f = f - 2 b f + b^2 f, and each term factorizes over coordinates
    lam = kernel.rate_vector
    v = noise.variance
    moments = {}
    for power in (1, 2):
        prod = 1.0
        for k in range(d):
            f1 = (4.0 * math.pi * lam[k]) ** -0.5 * np.exp(-rule.nodes**2 / (4.0 * lam[k]))
            prod *= float(np.dot(rule.weights, f1 * np.exp(-0.5 * power * v * rule.nodes**2)))
        moments[power] = prod
    return 1.0 - 2.0 * moments[1] + moments[2], moments[2], d * tail


def no_noise_upper_bound(
    kernel: KernelSpec,
    noise: NoiseModel,
    sigma_sq: float,
    *,
    method: str = "auto",
    constant: float = BOUND_CONSTANT,
) -> float:
    """Asymptotic upper bound on the MSPE for a noise-free target.

    ``method`` is "closed" (Gaussian kernel and noise only), "quadrature", or
    "auto" (closed form whenever it applies).
    """
    return bound_report(kernel, noise, sigma_sq, method=method, constant=constant).upper_bound_no_noise


def bound_report(
    kernel: KernelSpec,
    noise: NoiseModel,
    sigma_sq: float,
    *,
    method: str = "auto",
    constant: float = BOUND_CONSTANT,
) -> BoundReport:
    closed_ok = kernel.family == GAUSSIAN and kernel.scales is None
    if method == "auto":
        method = "closed" if closed_ok else "quadrature"
    if method == "closed":
        if not closed_ok:
            raise ValueError("closed-form bound needs an isotropic Gaussian kernel")
        v = noise.variance
        return BoundReport(
            kalen_limit_closed_form(kernel.theta, sigma_sq, kernel.dim, v),
            _bound_closed_form(kernel.theta, sigma_sq, kernel.dim, v, constant),
            "closed",
        )
    if method != "quadrature":
        raise ValueError(f"unknown method {method!r}")
    if noise.variance == 0:
        return BoundReport(0.0, 0.0, "quadrature", 0.0)
    gap, psi_s0, tail = _quadrature_integrals(kernel, noise)
    return BoundReport(
        max(sigma_sq * (1.0 - psi_s0), 0.0),
        max(constant * sigma_sq * gap, 0.0),
        "quadrature",
        constant * sigma_sq * tail,
    )


def figure2_curves(theta: float, sigma_sq: float, d: int, sigma_eps_grid) -> list[tuple[float, float, float]]:
    """Rows ``(sigma_eps_sq, limit, bound)`` for the Gaussian/Gaussian case."""
    grid = list(sigma_eps_grid)
    if not grid:
        raise ValueError("empty noise grid")
    return [
        (
            float(v),
            kalen_limit_closed_form(theta, sigma_sq, d, v),
            _bound_closed_form(theta, sigma_sq, d, v),
        )
        for v in grid
    ]


# ---------------------------------------------------------------------------
# finite-n MSPE under the true (integrated) model
# ---------------------------------------------------------------------------


def kalen_mspe(ck: ConvolvedKernel, X, x) -> float:
    """Exact MSPE of KALEN at ``x``: ``sigma^2 - r_N' K^{-1} r_N``."""
    X = np.atleast_2d(X)
    rN = ck.cross_rN(np.atleast_2d(x), X)[0]
    F = cholesky_spd(ck.matrix_K(X))
    return float(ck.sigma_sq - rN @ solve_spd(F, rN))


def sk_true_mspe(ck: ConvolvedKernel, mu: float, X, x, target_noise: bool = True) -> float:
    """True MSPE of the SK predictor ``u'Y`` under the integrated model.

    ``u = (Psi(X-X) + mu I)^{-1} Psi(X - x)``; the target is ``y(x)`` when
    ``target_noise`` and ``f(x)`` otherwise.
    """
    X = np.atleast_2d(X)
    x = np.atleast_2d(x)
    kernel = ck.kernel
    F = cholesky_spd(kernel.gram(X) + mu * np.eye(len(X)))
    u = solve_spd(F, kernel.gram(X, x)[:, 0])
    c = ck.cross_rN(x, X)[0] if target_noise else ck.cross_r(x, X)[0]
    return float(ck.sigma_sq - 2.0 * u @ c + u @ ck.matrix_K(X) @ u)


def sk_mspe_convergence_probe(
    kernel: KernelSpec,
    noise: NoiseModel,
    sigma_sq: float,
    mu: float,
    grid_sizes,
    *,
    x=None,
    lower: float = 0.0,
    upper: float = 1.0,
) -> list[dict]:
    """Finite-n MSPE of SK and KALEN on grids over ``[lower, upper]^d``.

    For d = 2 each grid size is the number of points per axis. ``x`` defaults
    to a fixed interior point at 0.37 of the box in every coordinate.
    """
    d = kernel.dim
    if d not in (1, 2):
        raise ValueError("convergence probe supports d = 1 or 2")
    if x is None:
        x = np.full(d, lower + 0.37 * (upper - lower))
    mode = CLOSED_FORM if kernel.family == GAUSSIAN else MONTE_CARLO
    ck = ConvolvedKernel(kernel, noise, sigma_sq, mode=mode)
    limit = kalen_limit(ck)
    rows = []
    for m in grid_sizes:
        g = grid_design(m, lower, upper).points[:, 0]
        if d == 1:
            X = g[:, None]
        else:
            X = np.array(list(itertools.product(g, g)))
        rows.append(
            {
                "n": len(X),
                "mspe_sk": sk_true_mspe(ck, mu, X, x),
                "mspe_kalen": kalen_mspe(ck, X, x),
                "limit": limit,
            }
        )
    return rows
