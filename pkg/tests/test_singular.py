import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from anisoflow.fixtures import interval_indicator
from anisoflow.grid import Grid, GridFunction, lebesgue_norm, sample
from anisoflow.singular import (FundamentalKernel, KernelError, apply,
                                apply_to_measure, get_kernel, hilbert_kernel,
                                identity_kernel, kernel_from_table,
                                measure_cz_bounds, measure_from_atoms,
                                measure_from_density, rescale_kernel,
                                riesz2d_kernel, scale_kernel, validate_kernel)
from anisoflow.weak_lebesgue import weak_norm


def test_validate_hilbert():
    rep = validate_kernel(hilbert_kernel(), 400)
    assert rep.valid
    assert rep.c0_measured == pytest.approx(1 / np.pi, rel=1e-6)
    assert rep.c1_measured == pytest.approx(1 / np.pi, rel=1e-4)
    assert rep.a1_measured == pytest.approx(0.0, abs=1e-9)
    assert rep.multiplier_sup_measured == pytest.approx(1.0)


def test_validate_zero_kernel():
    zero = FundamentalKernel(
        "null", 1, lambda x: np.zeros(np.asarray(x).shape[:-1]),
        lambda xi: np.zeros(np.asarray(xi).shape[:-1], dtype=complex),
        0.0, 0.0, 0.0, 0.0)
    rep = validate_kernel(zero, 100)
    assert rep.valid
    assert rep.c0_measured == 0.0 and rep.c1_measured == 0.0
    assert rep.a1_measured == 0.0


def test_validate_riesz():
    rep = validate_kernel(riesz2d_kernel(0, 0), 400)
    assert rep.valid
    assert np.isfinite(rep.c0_measured) and np.isfinite(rep.c1_measured)
    assert rep.a1_measured == pytest.approx(0.0, abs=1e-8)   # mean zero on rings
    rep12 = validate_kernel(riesz2d_kernel(0, 1), 400)
    assert rep12.valid


def test_apply_spectral_identity():
    g = Grid(1, 0, (np.pi,), (256,))
    s = sample(np.sin, g)
    out = apply(hilbert_kernel(), s)
    assert np.max(np.abs(out.values + np.cos(g.axis_coords(0)))) < 1e-10
    c = sample(np.cos, g)
    assert np.max(np.abs(apply(hilbert_kernel(), c).values - np.sin(g.axis_coords(0)))) < 1e-10


def test_apply_zero():
    g = Grid(1, 0, (np.pi,), (64,))
    z = GridFunction(g, np.zeros(g.shape))
    assert np.all(apply(hilbert_kernel(), z).values == 0.0)


def test_apply_indicator_periodic_oracle():
    # on the box [-4, 4) the discrete operator is the circle convolution with
    # the cotangent kernel: H u(x) = (1/pi) log |sin(pi(x+1)/L) / sin(pi(x-1)/L)|
    from anisoflow.fixtures import band_limited_indicator
    u = band_limited_indicator(4096, half_width=4.0)
    g = u.grid
    out = apply(hilbert_kernel(), u)
    x = g.axis_coords(0)
    L = 8.0
    with np.errstate(divide="ignore"):
        oracle = (1 / np.pi) * np.log(np.abs(np.sin(np.pi * (x + 1) / L)
                                             / np.sin(np.pi * (x - 1) / L)))
    far = (np.abs(np.abs(x) - 1.0) >= 2 * g.spacing[0])
    assert np.max(np.abs(out.values[far] - oracle[far])) < 1e-2
    at2 = np.argmin(np.abs(x - 2.0))
    assert out.values[at2] == pytest.approx(
        np.log(np.sin(3 * np.pi / 8) / np.sin(np.pi / 8)) / np.pi, abs=1e-2)


def test_apply_indicator_line_oracle_large_box():
    # widening the box drives the periodic result to the real-line formula
    from anisoflow.fixtures import band_limited_indicator
    u = band_limited_indicator(4096, half_width=128.0)
    g = u.grid
    out = apply(hilbert_kernel(), u)
    x = g.axis_coords(0)
    with np.errstate(divide="ignore"):
        oracle = (1 / np.pi) * np.log(np.abs((x + 1) / (x - 1)))
    far = np.abs(np.abs(x) - 1.0) >= 2 * g.spacing[0]
    assert np.max(np.abs(out.values[far] - oracle[far])) < 1e-2


@given(st.floats(-3, 3), st.floats(-3, 3))
@settings(max_examples=20, deadline=None)
def test_apply_linear(a, b):
    g = Grid(1, 0, (np.pi,), (64,))
    u = sample(np.sin, g)
    v = sample(lambda x: np.cos(2 * x), g)
    H = hilbert_kernel()
    combo = apply(H, GridFunction(g, a * u.values + b * v.values))
    split = a * apply(H, u).values + b * apply(H, v).values
    assert np.allclose(combo.values, split, atol=1e-10)


def test_parseval_contraction():
    g = Grid(1, 0, (2.0,), (128,))
    rng = np.random.default_rng(0)
    H = hilbert_kernel()
    for _ in range(10):
        u = GridFunction(g, rng.standard_normal(g.shape))
        assert lebesgue_norm(apply(H, u), 2) <= H.multiplier_sup * lebesgue_norm(u, 2) + 1e-12


def test_apply_to_measure_delta():
    g = Grid(1, 0, (np.pi,), (128,))
    mu = measure_from_atoms(g, [[0.0]], [1.0])
    out = apply_to_measure(hilbert_kernel(), mu)
    x = g.axis_coords(0)
    far = np.abs(x) >= g.spacing[0]
    assert np.allclose(out.values[far], 1 / (np.pi * x[far]))
    assert out.mask is not None and out.mask.any()


def test_apply_to_measure_zero_and_dipole():
    g = Grid(1, 0, (4.0,), (256,))
    zero = measure_from_atoms(g, np.zeros((0, 1)), np.zeros(0))
    assert np.all(apply_to_measure(hilbert_kernel(), zero).values == 0.0)
    dip = measure_from_atoms(g, [[0.0], [1.0]], [1.0, -1.0])
    out = apply_to_measure(hilbert_kernel(), dip)
    x = g.axis_coords(0)
    far = (np.abs(x) > 3 * g.spacing[0]) & (np.abs(x - 1) > 3 * g.spacing[0])
    with np.errstate(divide="ignore"):
        oracle = 1 / (np.pi * x) - 1 / (np.pi * (x - 1))
    assert np.allclose(out.values[far], oracle[far])


def test_apply_to_measure_density_matches_apply():
    g = Grid(1, 0, (np.pi,), (128,))
    dens = sample(lambda x: np.exp(-x**2), g)
    mu = measure_from_density(dens)
    a = apply_to_measure(hilbert_kernel(), mu)
    b = apply(hilbert_kernel(), dens)
    assert np.allclose(a.values, b.values)


def test_rescale_homogeneous_identity():
    rng = np.random.default_rng(1)
    H = hilbert_kernel()
    pts = rng.uniform(-5, 5, size=(1000, 1))
    pts = pts[np.abs(pts[:, 0]) > 1e-3]
    for d in (0.3, 2.0, 17.0):
        r = rescale_kernel(H, d)
        assert np.max(np.abs(r.evaluate(pts) - H.evaluate(pts))) < 1e-12
    K = riesz2d_kernel(0, 0)
    pts2 = rng.uniform(-3, 3, size=(1000, 2))
    pts2 = pts2[np.linalg.norm(pts2, axis=1) > 1e-2]
    r2 = rescale_kernel(K, 2.0)
    assert np.max(np.abs(r2.evaluate(pts2) - K.evaluate(pts2))) < 1e-12


def test_rescale_unit_is_same_object():
    H = hilbert_kernel()
    assert rescale_kernel(H, 1.0) is H


def test_rescale_composition():
    K = riesz2d_kernel(1, 0)
    rng = np.random.default_rng(2)
    pts = rng.uniform(-2, 2, size=(200, 2))
    pts = pts[np.linalg.norm(pts, axis=1) > 1e-2]
    ab = rescale_kernel(rescale_kernel(K, 0.5), 3.0)
    direct = rescale_kernel(K, 1.5)
    assert np.allclose(ab.evaluate(pts), direct.evaluate(pts), atol=1e-13)
    freqs = rng.uniform(-4, 4, size=(200, 2))
    assert np.allclose(ab.multiplier(freqs), direct.multiplier(freqs), atol=1e-13)


def test_rescale_rejects_nonpositive():
    with pytest.raises(KernelError):
        rescale_kernel(hilbert_kernel(), 0.0)


def test_cz_identity_kernel():
    rep = measure_cz_bounds(identity_kernel(1), [interval_indicator(512)])
    assert rep.finite
    assert rep.weak_1_constant == pytest.approx(1.0, abs=1e-12)
    for v in rep.strong_p_constants.values():
        assert v == pytest.approx(1.0, abs=1e-12)


def test_cz_hilbert_indicator_parseval_oracle():
    u = interval_indicator(1024)
    g = u.grid
    # independent Parseval arithmetic: the transform keeps every mode except
    # the zero and Nyquist modes, where the sign multiplier vanishes
    hat = np.fft.fft(u.values)
    kept = np.abs(hat) ** 2
    kept[0] = 0.0
    kept[g.points[0] // 2] = 0.0
    expected = np.sqrt(kept.sum() / (np.abs(hat) ** 2).sum())
    rep = measure_cz_bounds(hilbert_kernel(), [u])
    assert rep.strong_p_constants[2.0] == pytest.approx(expected, abs=1e-6)
    assert rep.strong_p_constants[2.0] <= 1.0 + 1e-12


def test_cz_hilbert_random_bumps_weak_constant():
    g = Grid(1, 0, (4.0,), (4096,))
    rng = np.random.default_rng(9)
    fam = []
    for _ in range(20):
        c = rng.uniform(-2, 2)
        w = rng.uniform(0.1, 1.0)
        u = sample(lambda x: np.exp(-((x - c) / w) ** 2), g)
        fam.append(u * (1.0 / lebesgue_norm(u, 1)))
    rep = measure_cz_bounds(hilbert_kernel(), fam)
    assert rep.finite
    assert rep.weak_1_constant < 2.0


def test_cz_empty_family_rejected():
    with pytest.raises(KernelError):
        measure_cz_bounds(hilbert_kernel(), [])


def test_scale_kernel():
    K = scale_kernel(hilbert_kernel(), -2.0)
    pts = np.array([[0.5], [1.0]])
    assert np.allclose(K.evaluate(pts), -2.0 / (np.pi * pts[:, 0]))
    assert K.multiplier_sup == pytest.approx(2.0)


def test_kernel_from_table(tmp_path):
    path = tmp_path / "mult.csv"
    freqs = np.linspace(-10, 10, 21)
    np.savetxt(path, np.column_stack([freqs, np.tanh(freqs), 0 * freqs]), delimiter=",")
    K = kernel_from_table(path)
    assert K.multiplier(np.array([[2.0]]))[0] == pytest.approx(np.tanh(2.0))
    g = Grid(1, 0, (2.0,), (32,))
    out = apply(K, sample(np.cos, g))
    assert np.all(np.isfinite(out.values))


def test_registry_lookup():
    assert get_kernel("hilbert").name == "hilbert"
    assert get_kernel("identity", dim=2).dim == 2
    with pytest.raises(KernelError):
        get_kernel("nope")
