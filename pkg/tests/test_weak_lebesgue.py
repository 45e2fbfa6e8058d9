import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from anisoflow.fixtures import inverse_sqrt, unit_interval_grid
from anisoflow.grid import Grid, GridFunction, lebesgue_norm, sample
from anisoflow.weak_lebesgue import (equi_split, interpolation_bound,
                                     verify_interpolation, weak_norm,
                                     weak_norm_samples)


def random_piecewise(seed, points=256):
    rng = np.random.default_rng(seed)
    g = unit_interval_grid(points)
    levels = rng.uniform(0, 5, size=8)
    edges = np.sort(rng.uniform(0, 1, size=7))

    def expr(x):
        idx = np.searchsorted(edges, x)
        return levels[idx]

    return sample(expr, g)


def test_weak_norm_indicator_exact():
    g = Grid(1, 0, (2.0,), (512,))
    rng = np.random.default_rng(3)
    for _ in range(20):
        cells = rng.random(g.shape) < 0.3
        u = GridFunction(g, cells.astype(float))
        m = cells.sum() * g.cell_measure
        if m == 0:
            continue
        for p in (1.0, 2.0):
            assert weak_norm(u, p).value == pytest.approx(m ** (1 / p), abs=1e-12)
        assert weak_norm(u, np.inf).value == pytest.approx(1.0, abs=1e-12)


def test_weak_norm_zero():
    u = GridFunction(Grid(1, 0, (1.0,), (32,)), np.zeros(32))
    assert weak_norm(u, 1.0).value == 0.0


def test_weak_norm_inverse_sqrt():
    u = inverse_sqrt(4096)
    # analytic distribution min(lambda^-2, 1) gives sup = 1 for p = 1 and 2
    assert weak_norm(u, 1.0).value == pytest.approx(1.0, rel=0.02)
    assert weak_norm(u, 2.0).value == pytest.approx(1.0, rel=0.02)


def test_weak_norm_distribution_monotone():
    u = random_piecewise(11)
    rep = weak_norm(u, 2.0)
    lams = [s[0] for s in rep.distribution_samples]
    meas = [s[1] for s in rep.distribution_samples]
    assert all(a <= b for a, b in zip(lams, lams[1:]))
    assert all(a >= b for a, b in zip(meas, meas[1:]))


@given(st.floats(min_value=0.01, max_value=50))
@settings(max_examples=25, deadline=None)
def test_weak_norm_homogeneous(c):
    u = random_piecewise(5)
    base = weak_norm(u, 1.0).value
    assert weak_norm(c * u, 1.0).value == pytest.approx(c * base, rel=1e-12)


@given(st.integers(min_value=0, max_value=10_000))
@settings(max_examples=40, deadline=None)
def test_chebyshev(seed):
    u = random_piecewise(seed)
    assert weak_norm(u, 1.0).value <= lebesgue_norm(u, 1) + 1e-12


def test_interpolation_bound_values():
    assert interpolation_bound(1.0, 1.0, 2.0, 1.0).value == pytest.approx(2.0)
    assert interpolation_bound(1.0, np.e, np.inf, 1.0).value == pytest.approx(2.0)
    clamped = interpolation_bound(1.0, 0.1, 2.0, 1.0)
    assert clamped.log_clamped and clamped.value == pytest.approx(2.0)
    with pytest.raises(ValueError):
        interpolation_bound(0.0, 1.0, 2.0, 1.0)
    assert interpolation_bound(0.0, 0.0, 2.0, 1.0).value == 0.0


def test_interpolation_bound_monotone():
    base = interpolation_bound(1.0, 2.0, 2.0, 1.0).value
    assert interpolation_bound(1.0, 3.0, 2.0, 1.0).value >= base
    assert interpolation_bound(1.0, 2.0, 2.0, 2.0).value >= base


def test_verify_interpolation_zero():
    u = GridFunction(Grid(1, 0, (1.0,), (32,)), np.zeros(32))
    chk = verify_interpolation(u, 2.0)
    assert chk.holds and chk.lhs == 0.0


def test_verify_interpolation_equality_case():
    u = inverse_sqrt(4096)
    chk = verify_interpolation(u, 2.0)
    assert chk.holds
    assert chk.lhs == pytest.approx(2.0, rel=0.02)
    assert chk.rhs == pytest.approx(2.0, rel=0.02)


@given(st.integers(min_value=0, max_value=10_000))
@settings(max_examples=100, deadline=None)
def test_verify_interpolation_random(seed):
    assert verify_interpolation(random_piecewise(seed), 2.0).holds


def test_equi_split_invariants():
    u = inverse_sqrt(1024)
    es = equi_split(u, 0.4, 2.0)
    assert np.array_equal(es.u1.values + es.u2.values, u.values)
    assert lebesgue_norm(es.u1, 1) <= 0.4 + 1e-12
    outside = ~es.support_region.indicator(u.grid)
    assert np.all(es.u2.values[outside] == 0.0)
    assert lebesgue_norm(es.u2, 2) <= es.C_epsilon + 1e-12
    assert not es.degenerate


def test_equi_split_thresholds_oracle():
    # independent scan: smallest value cut with exceedance mass <= eps/2 and
    # smallest centered ball capturing all but eps/2 of the mass
    u = inverse_sqrt(1024)
    eps = 0.4
    g = u.grid
    mag = np.where(u.mask, 0.0, np.abs(u.values))
    cm = g.cell_measure
    order = np.argsort(mag)[::-1]
    masses = mag[order] * cm
    tail = np.cumsum(masses)
    k = np.searchsorted(tail, eps / 2, side="right")
    expected_cut = mag[order][k - 1] if k > 0 else mag.max()
    dist = np.abs(g.axis_coords(0) - 0.5)
    dorder = np.argsort(dist)[::-1]
    dtail = np.cumsum(mag[dorder] * cm)
    kd = np.searchsorted(dtail, eps / 2, side="right")
    expected_radius = dist[dorder][kd - 1] if kd > 0 else dist.max()

    es = equi_split(u, eps, 2.0)
    assert es.value_cut == pytest.approx(expected_cut)
    assert es.support_region.radius == pytest.approx(expected_radius)


def test_equi_split_degenerate():
    u = inverse_sqrt(256)
    es = equi_split(u, 100.0, 2.0)
    assert es.degenerate
    assert np.array_equal(es.u1.values, u.values)
    assert np.all(es.u2.values == 0.0)


def test_equi_split_zero():
    u = GridFunction(Grid(1, 0, (1.0,), (32,)), np.zeros(32))
    es = equi_split(u, 0.1, 2.0)
    assert np.all(es.u1.values == 0.0) and np.all(es.u2.values == 0.0)


def test_equi_split_bounded_truncates_by_value_only():
    g = Grid(1, 0, (2.0,), (256,))
    u = sample(lambda x: np.where(np.abs(x) <= 1, 2.0, 0.0), g)
    es = equi_split(u, 0.25, 2.0)
    assert lebesgue_norm(es.u1, 1) <= 0.25 + 1e-12


def test_weak_norm_samples_matches_grid_scan():
    u = random_piecewise(17)
    grid_val = weak_norm(u, 2.0).value
    sample_val = weak_norm_samples(u.values, np.full(u.values.size, u.grid.cell_measure), 2.0)
    assert sample_val == pytest.approx(grid_val, rel=1e-12)
