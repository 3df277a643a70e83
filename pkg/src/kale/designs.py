"""Experimental designs and the two benchmark test functions."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import pdist

from .numerics import DomainError, RngStream

__all__ = [
    "Design",
    "grid_design",
    "halton",
    "maximin_lhd",
    "random_lhd",
    "fill_distance",
    "separation",
    "min_distance",
    "test_function_1d",
    "test_function_2d",
    "write_design_csv",
]

HALTON_BASES = (2, 3, 5, 7, 11, 13)


@dataclass(frozen=True)
class Design:
    points: np.ndarray
    kind: str
    seed: int | None = None

    @property
    def n(self) -> int:
        return len(self.points)

    @property
    def dim(self) -> int:
        return self.points.shape[1]


def grid_design(n: int, a: float = 0.0, b: float = 1.0) -> Design:
    """``n`` evenly spaced points on ``[a, b]`` with both endpoints included."""
    if n < 2:
        raise DomainError("grid needs at least 2 points")
    if not b > a:
        raise DomainError("grid needs a < b")
    step = (b - a) / (n - 1)
    pts = a + step * np.arange(n, dtype=float)
    pts[-1] = b
    return Design(pts[:, None], "grid")


def _radical_inverse(i: int, base: int) -> float:
    inv, f = 0.0, 1.0 / base
    while i > 0:
        i, digit = divmod(i, base)
        inv += digit * f
        f /= base
    return inv


def halton(n: int, d: int) -> Design:
    """First ``n`` points of the unscrambled Halton sequence, from index 1."""
    if not 1 <= d <= len(HALTON_BASES):
        raise DomainError(f"Halton dimension must be in 1..{len(HALTON_BASES)}")
    if n < 1:
        raise DomainError("n must be positive")
    pts = np.array(
        [[_radical_inverse(i, HALTON_BASES[k]) for k in range(d)] for i in range(1, n + 1)]
    )
    return Design(pts, "halton")


def random_lhd(n: int, d: int, rng: np.random.Generator) -> np.ndarray:
    """Latin hypercube with points at stratum midpoints."""
    return np.column_stack([(rng.permutation(n) + 0.5) / n for _ in range(d)])


def min_distance(points) -> float:
    points = np.asarray(points, dtype=float)
    if len(points) < 2:
        return math.inf
    return float(pdist(points).min())


def _improve(P: np.ndarray) -> np.ndarray:
    """Swap single coordinates between points while the minimum distance grows.

    A swap can only raise the minimum if it moves an endpoint of every
    closest pair, so candidate swaps involve an endpoint of one closest pair.
    """
    n, d = P.shape
    if n < 3:
        return P
    P = P.copy()
    idx = np.arange(n)
    while True:
        D = np.sqrt(np.sum((P[:, None, :] - P[None, :, :]) ** 2, axis=-1))
        np.fill_diagonal(D, np.inf)
        current = D.min()
        a, b = np.unravel_index(np.argmin(D), D.shape)
        best_val, best_swap = current, None
        for i in (a, b):
            others = idx != i
            for k in range(d):
                # candidate partner j for each row; new positions of i and j
                Pi = np.repeat(P[i][None, :], n, axis=0)
                Pi[:, k] = P[:, k]
                Pj = P.copy()
                Pj[:, k] = P[i, k]
                di = np.sqrt(np.sum((Pi[:, None, :] - P[None, :, :]) ** 2, axis=-1))
                dj = np.sqrt(np.sum((Pj[:, None, :] - P[None, :, :]) ** 2, axis=-1))
                # exclude self and partner columns; d(i', j') equals d(i, j)
                mask = (idx[None, :] == i) | (idx[None, :] == idx[:, None])
                di[mask] = np.inf
                dj[mask] = np.inf
                # pairs not touching i or j keep their distances
                keep = np.where(others[:, None] & others[None, :], D, np.inf)
                p, q = np.unravel_index(np.argmin(keep), keep.shape)
                rest = np.full(n, keep[p, q])
                for j in (p, q):
                    sub = keep.copy()
                    sub[j, :] = np.inf
                    sub[:, j] = np.inf
                    rest[j] = sub.min()
                rest = np.minimum(rest, D[i])
                val = np.minimum(np.minimum(di.min(axis=1), dj.min(axis=1)), rest)
                val[i] = -np.inf
                j = int(np.argmax(val))
                if val[j] > best_val + 1e-12:
                    best_val, best_swap = val[j], (i, j, k)
        if best_swap is None:
            return P
        i, j, k = best_swap
        P[i, k], P[j, k] = P[j, k], P[i, k]


def maximin_lhd(n: int, d: int, stream: RngStream, restarts: int = 50) -> Design:
    """Best of ``restarts`` swap-optimized midpoint Latin hypercubes."""
    if n < 1 or d < 1:
        raise DomainError("n and d must be positive")
    rng = stream.generator()
    best, best_val = None, -math.inf
    for _ in range(max(1, restarts)):
        P = _improve(random_lhd(n, d, rng))
        val = min_distance(P)
        if val > best_val:
            best, best_val = P, val
    return Design(best, "maximin_lhd", stream.seed)


def fill_distance(design, lower=0.0, upper=1.0, resolution: int = 201) -> float:
    """Max over a probe grid on the box of the distance to the nearest point.

    Exact for one-dimensional designs, where the supremum is attained at a
    box end or at a midpoint between neighbours.
    """
    P = design.points if isinstance(design, Design) else np.atleast_2d(design)
    d = P.shape[1]
    lower = np.broadcast_to(np.asarray(lower, dtype=float), (d,))
    upper = np.broadcast_to(np.asarray(upper, dtype=float), (d,))
    if d == 1:
        xs = np.unique(P[:, 0])
        cands = np.concatenate([[lower[0], upper[0]], 0.5 * (xs[1:] + xs[:-1])])
        probe = cands[:, None]
    else:
        axes = [np.linspace(lower[k], upper[k], resolution) for k in range(d)]
        probe = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, d)
    best = 0.0
    for i in range(0, len(probe), 20000):
        block = probe[i : i + 20000]
        dist = np.sqrt(np.sum((block[:, None, :] - P[None, :, :]) ** 2, axis=-1)).min(axis=1)
        best = max(best, float(dist.max()))
    return best


def separation(design) -> float:
    """Half the minimum distance among distinct design points."""
    P = design.points if isinstance(design, Design) else np.atleast_2d(design)
    distinct = np.unique(P, axis=0)
    return 0.5 * min_distance(distinct)


def test_function_1d(x):
    x = np.asarray(x, dtype=float)
    return np.sin(2 * np.pi * x / 10) + 0.2 * np.sin(2 * np.pi * x / 2.5)


def test_function_2d(x1, x2=None):
    """Accepts ``(x1, x2)`` or a single ``(..., 2)`` array."""
    if x2 is None:
        x = np.asarray(x1, dtype=float)
        x1, x2 = x[..., 0], x[..., 1]
    x1 = np.asarray(x1, dtype=float)
    x2 = np.asarray(x2, dtype=float)
    return ((30 + 5 * x1 * np.sin(5 * x1)) * (4 + np.exp(-5 * x2)) - 100) / 6


# keep pytest from collecting the benchmark functions
test_function_1d.__test__ = False
test_function_2d.__test__ = False


def write_design_csv(design, path) -> None:
    P = design.points if isinstance(design, Design) else np.atleast_2d(design)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow([f"x{k + 1}" for k in range(P.shape[1])])
        for row in P:
            w.writerow([f"{v:.17g}" for v in row])
