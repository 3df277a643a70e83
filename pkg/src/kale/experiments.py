"""Simulation studies: the 1-d Gaussian-kernel study, the 2-d Matérn study
and the asymptotic limit/bound tables.

Replicate ``r`` draws everything from ``RngStream(seed, r)``, so results do
not depend on how replicates are scheduled across workers.
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .asymptotics import (
    bound_report,
    figure2_curves,
    kalen_limit_closed_form,
    sk_mspe_convergence_probe,
)
from .convolved import CLOSED_FORM, MONTE_CARLO, ConvolvedKernel
from .designs import grid_design, halton, maximin_lhd, test_function_1d, test_function_2d
from .estimate import PSEUDO, SK_LIKELIHOOD, AllStartsFailed, EstimationProblem, fit, model_from_fit
from .kernels import GAUSSIAN, KernelSpec, NoiseModel
from .numerics import RngStream
from .predict import KALEN, Dataset, adjusted_sk_mspe, confidence_interval, predict_batch
from .serialization import ExperimentConfig, write_csv

__all__ = [
    "ExperimentFailed",
    "ReplicateOutcome",
    "example1_replicate",
    "example2_replicate",
    "run_example1",
    "run_example2",
    "run_bounds",
    "rmspe_summary",
    "mean_summary",
]

# fixed stream id for the shared Example-2 design (replicates use 0, 1, ...)
DESIGN_STREAM_ID = 2**63

RECOVERABLE = (np.linalg.LinAlgError, AllStartsFailed, FloatingPointError, ValueError)


class ExperimentFailed(RuntimeError):
    pass


@dataclass
class ReplicateOutcome:
    level: float
    replicate: int
    values: dict | None
    error: str | None = None


# ---------------------------------------------------------------------------
# summaries
# ---------------------------------------------------------------------------


def mean_summary(samples) -> tuple[float, float]:
    """Mean and its Monte-Carlo standard error."""
    x = np.asarray(samples, dtype=float)
    if len(x) == 0:
        return math.nan, math.nan
    se = float(x.std(ddof=1) / math.sqrt(len(x))) if len(x) > 1 else math.nan
    return float(x.mean()), se


def rmspe_summary(sq_errors) -> tuple[float, float]:
    """``sqrt`` of the replicate-averaged squared error, with a delta-method
    standard error."""
    m, se = mean_summary(sq_errors)
    r = math.sqrt(m)
    return r, (se / (2.0 * r) if r > 0 else math.nan)


def _paired_difference(a, b) -> tuple[float, float]:
    """``rmspe(b) - rmspe(a)`` with a paired delta-method standard error."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    ra, rb = math.sqrt(a.mean()), math.sqrt(b.mean())
    if len(a) < 2:
        return rb - ra, math.nan
    # gradient of sqrt(mean b) - sqrt(mean a) applied to the per-replicate pairs
    g = b / (2.0 * rb) - a / (2.0 * ra)
    return rb - ra, float(g.std(ddof=1) / math.sqrt(len(g)))


def _map(fn, tasks, threads: int):
    if threads <= 1:
        return [fn(*t) for t in tasks]
    with ProcessPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, *zip(*tasks)))


def _check_skips(outcomes, level, total, max_fraction):
    skipped = [o for o in outcomes if o.values is None]
    if len(skipped) > max_fraction * total:
        raise ExperimentFailed(
            f"{len(skipped)} of {total} replicates failed at noise variance {level}: "
            f"{skipped[0].error}"
        )
    return len(skipped)


# ---------------------------------------------------------------------------
# Example 1: 1-d, Gaussian kernel, closed-form convolutions
# ---------------------------------------------------------------------------


def example1_replicate(config: ExperimentConfig, level_index: int, replicate: int) -> ReplicateOutcome:
    v = float(config.noise_grid[level_index])
    a, b = config.domain
    stream = RngStream(config.seed, replicate).child(level_index)
    X = grid_design(config.n_design, a, b).points
    xt = grid_design(config.n_test, a, b).points
    g_train = stream.child(0).generator()
    g_test = stream.child(1).generator()
    sd = math.sqrt(v)
    Y = test_function_1d(X[:, 0] + sd * g_train.standard_normal(len(X)))
    f_true = test_function_1d(xt[:, 0])
    y_true = test_function_1d(xt[:, 0] + sd * g_test.standard_normal(len(xt)))
    ds = Dataset(X, Y, config.mean_basis)
    kernel = KernelSpec(GAUSSIAN, dim=1)
    weight = (b - a) / len(xt)
    try:
        p_kale = EstimationProblem(ds, kernel, PSEUDO, starts=config.starts)
        r_kale = fit(p_kale, stream.child(2))
        p_sk = EstimationProblem(ds, kernel, SK_LIKELIHOOD, starts=config.starts)
        r_sk = fit(p_sk, stream.child(3))
        kale = model_from_fit(p_kale, r_kale)
        sk = model_from_fit(p_sk, r_sk)
        pk = predict_batch(kale, xt, config.level)
        pn = predict_batch(kale.as_kind(KALEN), xt, config.level)
        ps = predict_batch(sk, xt, config.level)
    except RECOVERABLE as exc:
        return ReplicateOutcome(v, replicate, None, f"{type(exc).__name__}: {exc}")
    par = r_kale.parameters
    limit = kalen_limit_closed_form(par["theta"], par["sigma_sq"], 1, par["sigma_eps_sq"])
    adj_low, adj_high = confidence_interval(ps.mean, adjusted_sk_mspe(sk, xt, limit), config.level)

    def covered(low, high, target):
        return float(np.mean((low <= target) & (target <= high)))

    values = {
        "sq_kale": weight * float(np.sum((f_true - pk.mean) ** 2)),
        "sq_sk_f": weight * float(np.sum((f_true - ps.mean) ** 2)),
        "sq_kalen": weight * float(np.sum((y_true - pn.mean) ** 2)),
        "sq_sk_y": weight * float(np.sum((y_true - ps.mean) ** 2)),
        "cov_kale": covered(pk.ci_low, pk.ci_high, f_true),
        "cov_sk1": covered(ps.ci_low, ps.ci_high, f_true),
        "cov_adj_sk1": covered(adj_low, adj_high, f_true),
        "cov_kalen": covered(pn.ci_low, pn.ci_high, y_true),
        "cov_sk2": covered(ps.ci_low, ps.ci_high, y_true),
        "cov_adj_sk2": covered(adj_low, adj_high, y_true),
        "limit": limit,
        "kale_sigma_sq": par["sigma_sq"],
        "kale_theta": par["theta"],
        "kale_sigma_eps_sq": par["sigma_eps_sq"],
        "sk_sigma_sq": r_sk.parameters["sigma_sq"],
        "sk_theta": r_sk.parameters["theta"],
        "sk_nugget": r_sk.parameters["nugget"],
        "clipped": pk.clipped + pn.clipped + ps.clipped,
    }
    return ReplicateOutcome(v, replicate, values)


EX1_REPLICATE_COLUMNS = (
    "sq_kale", "sq_sk_f", "sq_kalen", "sq_sk_y",
    "cov_kale", "cov_sk1", "cov_adj_sk1", "cov_kalen", "cov_sk2", "cov_adj_sk2",
    "limit", "kale_sigma_sq", "kale_theta", "kale_sigma_eps_sq",
    "sk_sigma_sq", "sk_theta", "sk_nugget", "clipped",
)
COVERAGE_COLUMNS = ("cov_kale", "cov_sk1", "cov_adj_sk1", "cov_kalen", "cov_sk2", "cov_adj_sk2")


def run_example1(config: ExperimentConfig, out_dir=None) -> dict:
    """Run the 1-d study and write ``table1.csv``, ``table2.csv``,
    ``table3.csv`` and ``example1_replicates.csv``. Returns the summary rows."""
    out = Path(out_dir or config.out)
    out.mkdir(parents=True, exist_ok=True)
    tasks = [(config, i, r) for i in range(len(config.noise_grid)) for r in range(config.replicates)]
    outcomes = _map(example1_replicate, tasks, config.threads)

    t1, t2, t3, reps = [], [], [], []
    for i, v in enumerate(config.noise_grid):
        level = [o for o, t in zip(outcomes, tasks) if t[1] == i]
        skipped = _check_skips(level, v, config.replicates, config.max_skip_fraction)
        ok = [o.values for o in level if o.values is not None]
        col = {k: np.array([d[k] for d in ok]) for k in EX1_REPLICATE_COLUMNS}
        kale, kale_se = rmspe_summary(col["sq_kale"])
        skf, skf_se = rmspe_summary(col["sq_sk_f"])
        diff1, diff1_se = _paired_difference(col["sq_kale"], col["sq_sk_f"])
        t1.append((v, kale, kale_se, skf, skf_se, diff1, diff1_se, len(ok), skipped))
        kalen, kalen_se = rmspe_summary(col["sq_kalen"])
        sky, sky_se = rmspe_summary(col["sq_sk_y"])
        diff2, diff2_se = _paired_difference(col["sq_kalen"], col["sq_sk_y"])
        t2.append((v, kalen, kalen_se, sky, sky_se, diff2, diff2_se, len(ok), skipped))
        row = [v]
        for c in COVERAGE_COLUMNS:
            row.extend(mean_summary(col[c]))
        t3.append(tuple(row) + (len(ok), skipped))
        for o in level:
            if o.values is None:
                reps.append((v, o.replicate, "skipped", *([math.nan] * len(EX1_REPLICATE_COLUMNS)), o.error))
            else:
                reps.append((v, o.replicate, "ok", *(o.values[k] for k in EX1_REPLICATE_COLUMNS), ""))

    h_counts = ("n_replicates", "n_skipped")
    h1 = ("sigma_eps_sq", "rmspe_kale", "se_kale", "rmspe_sk", "se_sk", "difference", "se_difference") + h_counts
    h2 = ("sigma_eps_sq", "rmspe_kalen", "se_kalen", "rmspe_sk", "se_sk", "difference", "se_difference") + h_counts
    h3 = ("sigma_eps_sq",) + tuple(
        x for c in COVERAGE_COLUMNS for x in ("coverage_" + c[4:], "se_" + c[4:])
    ) + h_counts
    write_csv(out / "table1.csv", h1, t1)
    write_csv(out / "table2.csv", h2, t2)
    write_csv(out / "table3.csv", h3, t3)
    write_csv(out / "example1_replicates.csv",
              ("sigma_eps_sq", "replicate", "status") + EX1_REPLICATE_COLUMNS + ("error",), reps)
    return {
        "table1": [dict(zip(h1, r)) for r in t1],
        "table2": [dict(zip(h2, r)) for r in t2],
        "table3": [dict(zip(h3, r)) for r in t3],
    }


# ---------------------------------------------------------------------------
# Example 2: 2-d, Matérn kernel, Monte-Carlo convolutions
# ---------------------------------------------------------------------------


def example2_design(config: ExperimentConfig):
    stream = RngStream(config.seed, DESIGN_STREAM_ID)
    return maximin_lhd(config.n_design, 2, stream, config.lhd_restarts).points


def example2_replicate(config: ExperimentConfig, level_index: int, replicate: int,
                       X: np.ndarray, run_kale: bool, run_sk: bool) -> ReplicateOutcome:
    v = float(config.noise_grid[level_index])
    stream = RngStream(config.seed, replicate).child(level_index)
    xt = halton(config.n_test, 2).points
    eps = math.sqrt(v) * stream.child(0).generator().standard_normal(X.shape)
    Y = test_function_2d(X + eps)
    f_true = test_function_2d(xt)
    ds = Dataset(X, Y, config.mean_basis)
    kernel = KernelSpec(config.family, nu=config.nu, dim=2)
    values = {}
    try:
        if run_kale:
            t0 = time.perf_counter()
            mode = CLOSED_FORM if config.family == GAUSSIAN else MONTE_CARLO
            p = EstimationProblem(ds, kernel, PSEUDO, starts=config.starts, mode=mode,
                                  n_K=config.n_K, n_r=config.n_r)
            res = fit(p, stream.child(2))
            mean = predict_batch(model_from_fit(p, res), xt).mean
            values["time_kale"] = time.perf_counter() - t0
            values["sq_kale"] = float(np.mean((f_true - mean) ** 2))
        if run_sk:
            t0 = time.perf_counter()
            p = EstimationProblem(ds, kernel, SK_LIKELIHOOD, starts=config.starts)
            res = fit(p, stream.child(3))
            mean = predict_batch(model_from_fit(p, res), xt).mean
            values["time_sk"] = time.perf_counter() - t0
            values["sq_sk"] = float(np.mean((f_true - mean) ** 2))
    except RECOVERABLE as exc:
        return ReplicateOutcome(v, replicate, None, f"{type(exc).__name__}: {exc}")
    return ReplicateOutcome(v, replicate, values)


def run_example2(config: ExperimentConfig, out_dir=None) -> dict:
    """Run the 2-d study and write ``table4.csv``, ``example2_replicates.csv``
    and ``example2_design.csv``."""
    out = Path(out_dir or config.out)
    out.mkdir(parents=True, exist_ok=True)
    X = example2_design(config)
    n_rep = max(config.replicates, config.sk_count)
    tasks = [
        (config, i, r, X, r < config.replicates, r < config.sk_count)
        for i in range(len(config.noise_grid))
        for r in range(n_rep)
    ]
    outcomes = _map(example2_replicate, tasks, config.threads)

    rows, reps = [], []
    header = ("sigma_eps_sq", "rmspe_kale", "se_kale", "time_kale", "se_time_kale",
              "rmspe_sk", "se_sk", "time_sk", "se_time_sk", "difference", "se_difference",
              "n_kale", "n_sk", "n_skipped")
    for i, v in enumerate(config.noise_grid):
        level = [o for o, t in zip(outcomes, tasks) if t[1] == i]
        skipped = _check_skips(level, v, n_rep, config.max_skip_fraction)
        ok = [o.values for o in level if o.values is not None]
        sq_k = [d["sq_kale"] for d in ok if "sq_kale" in d]
        sq_s = [d["sq_sk"] for d in ok if "sq_sk" in d]
        rk, rk_se = rmspe_summary(sq_k)
        rs, rs_se = rmspe_summary(sq_s)
        tk = mean_summary([d["time_kale"] for d in ok if "time_kale" in d])
        ts = mean_summary([d["time_sk"] for d in ok if "time_sk" in d])
        # independent-sample standard error; the paired subset is not balanced
        diff_se = math.hypot(rk_se, rs_se)
        rows.append((v, rk, rk_se, *tk, rs, rs_se, *ts, rs - rk, diff_se, len(sq_k), len(sq_s), skipped))
        for o in level:
            d = o.values or {}
            reps.append((v, o.replicate, "ok" if o.values is not None else "skipped",
                         d.get("sq_kale", math.nan), d.get("time_kale", math.nan),
                         d.get("sq_sk", math.nan), d.get("time_sk", math.nan), o.error or ""))
    write_csv(out / "table4.csv", header, rows)
    write_csv(out / "example2_replicates.csv",
              ("sigma_eps_sq", "replicate", "status", "sq_kale", "time_kale", "sq_sk", "time_sk", "error"),
              reps)
    write_csv(out / "example2_design.csv", ("x1", "x2"), X)
    return {"table4": [dict(zip(header, r)) for r in rows]}


# ---------------------------------------------------------------------------
# asymptotic tables
# ---------------------------------------------------------------------------


def run_bounds(config: ExperimentConfig, out_dir=None) -> dict:
    """Limit/bound curves over the noise grid for each dimension, the
    shrinking-noise sweep and finite-n convergence probes. Deterministic, so
    every standard-error column is zero."""
    out = Path(out_dir or config.out)
    out.mkdir(parents=True, exist_ok=True)
    th, s2 = config.theta, config.sigma_sq

    curves = []
    for d in config.dims:
        for v, lim, bnd in figure2_curves(th, s2, int(d), config.noise_grid):
            curves.append((int(d), v, lim, 0.0, bnd, 0.0))
    h_curves = ("d", "sigma_eps_sq", "limit", "se_limit", "bound", "se_bound")
    write_csv(out / "figure2.csv", h_curves, curves)

    shrink = []
    k1 = KernelSpec(GAUSSIAN, theta=th, dim=1)
    for k in range(11):
        v = 0.1 / 2**k
        rep = bound_report(k1, NoiseModel("gaussian", v, 1), s2)
        shrink.append((k, v, rep.upper_bound_no_noise, 0.0))
    h_shrink = ("k", "sigma_eps_sq", "bound", "se_bound")
    write_csv(out / "bound_shrinkage.csv", h_shrink, shrink)

    probe = []
    for v, mu in ((0.1, None), (0.0, 0.5)):
        noise = NoiseModel("gaussian", v, 1)
        if mu is None:
            ck = ConvolvedKernel(k1, noise, s2)
            mu = 1.0 - float(ck.psi_s(np.zeros(1)))
        sizes = list(config.probe_sizes) if v > 0 else list(config.probe_sizes) + [2 * config.probe_sizes[-1]]
        for row in sk_mspe_convergence_probe(k1, noise, s2, mu, sizes):
            probe.append((v, mu, row["n"], row["mspe_kalen"], row["mspe_sk"], row["limit"], 0.0))
    h_probe = ("sigma_eps_sq", "nugget", "n", "mspe_kalen", "mspe_sk", "limit", "se")
    write_csv(out / "convergence.csv", h_probe, probe)
    return {
        "figure2": [dict(zip(h_curves, r)) for r in curves],
        "bound_shrinkage": [dict(zip(h_shrink, r)) for r in shrink],
        "convergence": [dict(zip(h_probe, r)) for r in probe],
    }
