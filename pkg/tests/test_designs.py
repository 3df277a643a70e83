import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kale.designs import (
    fill_distance,
    grid_design,
    halton,
    maximin_lhd,
    min_distance,
    random_lhd,
    separation,
    test_function_1d as f1,
    test_function_2d as f2,
    write_design_csv,
)
from kale.numerics import DomainError, RngStream


def test_grid_examples():
    assert np.array_equal(grid_design(3, 0, 8).points[:, 0], [0.0, 4.0, 8.0])
    g = grid_design(161, 0, 8).points[:, 0]
    assert np.allclose(np.diff(g), 0.05, atol=1e-14, rtol=0)
    assert g[0] == 0.0 and g[-1] == 8.0
    with pytest.raises(DomainError):
        grid_design(1)
    with pytest.raises(DomainError):
        grid_design(3, 1.0, 1.0)


def test_halton_examples():
    assert np.allclose(halton(3, 1).points[:, 0], [0.5, 0.25, 0.75])
    assert np.allclose(halton(2, 2).points, [[0.5, 1 / 3], [0.25, 2 / 3]])
    with pytest.raises(DomainError):
        halton(5, 7)


def test_halton_interior_and_distinct():
    P = halton(10_000, 6).points
    assert np.all(P > 0) and np.all(P < 1)
    assert len(np.unique(P, axis=0)) == len(P)
    assert np.array_equal(P, halton(10_000, 6).points)


def test_lhd_small_and_strata():
    assert np.allclose(np.sort(maximin_lhd(2, 1, RngStream(0)).points[:, 0]), [0.25, 0.75])
    P = maximin_lhd(20, 3, RngStream(4), restarts=5).points
    mids = (np.arange(20) + 0.5) / 20
    for k in range(3):
        assert np.allclose(np.sort(P[:, k]), mids)


@settings(max_examples=25, deadline=None)
@given(n=st.integers(1, 30), d=st.integers(1, 4), seed=st.integers(0, 2**31))
def test_random_lhd_is_latin(n, d, seed):
    P = random_lhd(n, d, np.random.default_rng(seed))
    strata = np.floor(P * n).astype(int)
    for k in range(d):
        assert sorted(strata[:, k]) == list(range(n))


def test_maximin_beats_random_lhd():
    wins = 0
    for trial in range(100):
        s = RngStream(1000 + trial)
        opt = min_distance(maximin_lhd(20, 2, s, restarts=50).points)
        raw = min_distance(random_lhd(20, 2, s.generator()))
        wins += opt >= raw
    assert wins >= 95


def test_fill_distance_and_separation():
    g = grid_design(161, 0, 8)
    assert math.isclose(fill_distance(g, 0, 8), 0.025, rel_tol=1e-12)
    assert math.isclose(separation(g), 0.025, rel_tol=1e-12)
    assert fill_distance(np.array([[0.5]]), 0, 1) == 0.5
    replicated = np.array([[0.0], [0.0], [1.0], [1.0]])
    assert separation(replicated) == 0.5


@pytest.mark.parametrize("n", [2, 5, 33, 161])
def test_grid_assumption_ratio(n):
    g = grid_design(n, 0, 8)
    assert fill_distance(g, 0, 8) <= 2 * separation(g) + 1e-15


def test_fill_distance_two_dimensional():
    # 3x3 grid on the unit square: farthest probe is a cell centre
    a = np.linspace(0, 1, 3)
    P = np.array([(x, y) for x in a for y in a])
    assert math.isclose(fill_distance(P, 0, 1, resolution=201), math.hypot(0.25, 0.25), rel_tol=1e-12)


def test_benchmark_functions():
    assert f1(0.0) == 0.0
    assert abs(f1(2.5) - 1.0) < 1e-15
    assert math.isclose(f2(0.0, 0.0), 25 / 3, rel_tol=1e-15)
    x = np.array([[0.3, 0.7], [0.9, 0.1]])
    assert np.allclose(f2(x), f2(x[:, 0], x[:, 1]))


def test_write_design_csv(tmp_path):
    path = tmp_path / "d.csv"
    write_design_csv(halton(4, 2), path)
    lines = path.read_text().splitlines()
    assert lines[0] == "x1,x2"
    assert np.allclose([float(v) for v in lines[1].split(",")], [0.5, 1 / 3], rtol=0, atol=0)
