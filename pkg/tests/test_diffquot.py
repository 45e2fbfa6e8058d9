import numpy as np
import pytest

from anisoflow.diffquot import (AnisotropyMatrix, DerivativeStructure, DiffQuotError,
                                StructureTerm, UField, big_u, big_v,
                                build_upsilon_family, identity_matrix,
                                operator_bounds, verify_bv_quotient,
                                verify_difference_quotient)
from anisoflow.flow import sincos_scalar
from anisoflow.grid import (Grid, GridFunction, product_ball, product_grid, sample)
from anisoflow.maximal import std_bump_profile, tensor_maximal
from anisoflow.singular import (SignedMeasure, get_kernel, hilbert_kernel,
                                identity_kernel, measure_from_atoms,
                                measure_from_density, rescale_kernel)
from anisoflow.weak_lebesgue import weak_norm


def split_grid(points=64, w=np.pi):
    return product_grid(Grid(1, 0, (w,), (points,)), Grid(1, 0, (w,), (points,)))


def const_gamma(g2, v=1.0):
    return GridFunction(g2, np.full(g2.shape, v))


def ones_density(g1):
    return measure_from_density(GridFunction(g1, np.ones(g1.shape)))


def test_upsilon_formula():
    fam1, fam2 = build_upsilon_family(1, 1, 0, direction_samples=4)
    # direction cloud starts with the signed axes; xi = e1 gives
    # member1(w) = h(1/2 - w) * w with integral exactly 1/2
    h = std_bump_profile(1, 0.5)
    w = np.array([[0.3], [0.5], [-0.1]])
    got = fam1.members[0](w)
    assert np.allclose(got, h(0.5 - w)[..., 0] * w[:, 0] if h(0.5 - w).ndim > 1
                       else h(0.5 - w) * w[:, 0])
    assert fam1.integrals[0] == pytest.approx(0.5)
    assert fam2.integrals[0] == pytest.approx(1.0)
    # xi with vanishing first block: unshifted bump
    fam1b, _ = build_upsilon_family(1, 1, 1, direction_samples=4)
    assert fam1b.integrals[0] == pytest.approx(1.0)


def test_upsilon_q1_uniform():
    fam1, fam2 = build_upsilon_family(1, 1, 0, direction_samples=64)
    xs = np.linspace(-1, 1, 2001)[:, None]
    dx = xs[1, 0] - xs[0, 0]
    for member in fam1.members[:16]:
        l1 = np.sum(np.abs(member(xs))) * dx
        assert l1 <= fam1.l1_bound + 1e-6
    for member in fam2.members[:16]:
        l1 = np.sum(np.abs(member(xs))) * dx
        assert l1 <= fam2.l1_bound + 1e-6


def test_upsilon_axis_out_of_range():
    with pytest.raises(DiffQuotError):
        build_upsilon_family(1, 1, 2)


def test_big_v_zero_structure():
    g = split_grid(32)
    ds = DerivativeStructure(g, (StructureTerm(
        0, 0, 0, identity_kernel(1), const_gamma(g.block2(), 0.0), 2.0,
        measure_from_density(GridFunction(g.block1(), np.zeros(32)))),))
    out = big_v(ds, 8)
    assert np.all(out.values == 0.0)


def test_big_v_single_bump_term_matches_tensor_maximal():
    g = split_grid(64, w=2.0)
    g1, g2 = g.block1(), g.block2()
    prof = std_bump_profile(1, 0.7)
    bump = sample(lambda x: prof(x[..., None]), g1)
    ds = DerivativeStructure(g, (StructureTerm(
        0, 0, 0, identity_kernel(1), const_gamma(g2), 2.0,
        measure_from_density(bump)),))
    v = big_v(ds, direction_samples=16)
    fam1, fam2 = build_upsilon_family(1, 1, 0, 16)
    field = GridFunction(g, np.broadcast_to(bump.values[:, None], g.shape).copy())
    oracle = tensor_maximal(fam1, fam2, field, paired=True)
    assert np.allclose(v.values, oracle.values, rtol=1e-10, atol=1e-12)
    # and V dominates half the field on its support (vanishing-scale limit)
    assert np.all(v.values >= 0.5 * np.abs(field.values) - 1e-12)


def test_big_u_identity_matches_big_v():
    g = split_grid(48)
    _, ds = sincos_scalar(g)
    v = big_v(ds, 16)
    u = big_u(ds, identity_matrix(1, 1), 16)
    assert np.array_equal(v.values, u.values.values)


def test_big_u_kernel_rescale_path_invariant():
    # homogeneous kernels are fixed points of the rescale, so pre-rescaled
    # structures give the identical field
    g = split_grid(48)
    f, ds = sincos_scalar(g)
    A = AnisotropyMatrix(0.25, 1.0, 1, 1)
    base = big_u(ds, A, 16).values.values
    rescaled_terms = tuple(
        StructureTerm(t.i, t.j, t.k, rescale_kernel(t.kernel, 0.25), t.gamma,
                      t.gamma_q, t.datum) for t in ds.terms)
    again = big_u(DerivativeStructure(g, rescaled_terms), A, 16).values.values
    assert np.max(np.abs(base - again)) < 1e-12


def test_big_u_block2_scaling_exact():
    # with the x1 scale frozen below the mesh, doubling delta2 doubles every
    # block-2 term exactly (atom data, homogeneous kernel)
    g = split_grid(48)
    g1, g2 = g.block1(), g.block2()
    gamma = sample(lambda x: np.exp(-x**2), g2)
    dens = measure_from_density(sample(lambda x: np.exp(-2 * x**2), g1))
    ds = DerivativeStructure(g, (StructureTerm(1, 1, 0, hilbert_kernel(), gamma,
                                               2.0, dens),))
    u1 = big_u(ds, AnisotropyMatrix(1e-5, 0.25, 1, 1), 16).values.values
    u2 = big_u(ds, AnisotropyMatrix(1e-5, 0.5, 1, 1), 16).values.values
    assert np.allclose(u2, 2.0 * u1, rtol=1e-12)


def test_subadditivity_is_equality():
    g = split_grid(48)
    _, ds = sincos_scalar(g)
    A = AnisotropyMatrix(0.5, 1.0, 1, 1)
    whole = big_u(ds, A, 16).values.values
    parts = sum(big_u(ds.filter(k), A, 16).values.values for k in ("p", "q"))
    assert np.allclose(whole, parts, atol=1e-12)


def test_datum_homogeneity():
    g = split_grid(48)
    g1, g2 = g.block1(), g.block2()
    gamma = sample(lambda x: np.cos(x), g2)
    base_density = sample(lambda x: np.sin(2 * x), g1)
    A = identity_matrix(1, 1)

    def field_for(c):
        ds = DerivativeStructure(g, (StructureTerm(
            0, 0, 0, hilbert_kernel(), gamma, 2.0,
            measure_from_density(c * base_density)),))
        return big_u(ds, A, 16).values.values

    assert np.allclose(field_for(3.0), 3.0 * field_for(1.0), rtol=1e-12)


def test_verify_constant_field():
    g = split_grid(32)
    _, ds = sincos_scalar(g)
    U = big_u(ds, identity_matrix(1, 1), 8)
    f = GridFunction(g, np.full(g.shape, 2.0))
    rep = verify_difference_quotient(f, U, 500, seed=1)
    assert rep.pass_rate == 1.0


def test_verify_linear_field():
    # f = c x1 through the identity kernel: U >= |c|/2 everywhere via the
    # vanishing-scale limit, and the mid-scale rungs recover the slope
    g = split_grid(64, w=2.0)
    g1, g2 = g.block1(), g.block2()
    c = 1.7
    f = sample(lambda x1, x2: c * x1 + 0.0 * x2, g)
    ds = DerivativeStructure(g, (StructureTerm(
        0, 0, 0, identity_kernel(1), const_gamma(g2), 2.0,
        measure_from_density(GridFunction(g1, np.full(g1.shape, c)))),))
    U = big_u(ds, identity_matrix(1, 1), 16)
    rep = verify_difference_quotient(f, U, 4000, seed=3)
    assert rep.pass_rate >= 0.99


def test_verify_sincos_iso_and_aniso():
    g = split_grid(128)
    f, ds = sincos_scalar(g)
    for d1, d2 in ((1.0, 1.0), (0.1, 1.0)):
        U = big_u(ds, AnisotropyMatrix(d1, d2, 1, 1), 64)
        rep = verify_difference_quotient(f, U, 10_000, seed=5)
        assert rep.pass_rate >= 0.99


def test_verify_rejects_fully_masked():
    g = split_grid(16)
    _, ds = sincos_scalar(g)
    U = big_u(ds, identity_matrix(1, 1), 8)
    f = GridFunction(g, np.zeros(g.shape), mask=np.ones(g.shape, dtype=bool))
    with pytest.raises(DiffQuotError):
        verify_difference_quotient(f, U, 100)


def test_bv_oracle_step_and_smooth():
    g = Grid(1, 0, (2.0,), (512,))
    x = g.axis_coords(0)
    # BV function: unit jump at 0 plus a smooth ramp
    f = GridFunction(g, (x > 0).astype(float) + 0.5 * np.tanh(2 * x))
    dens = GridFunction(g, 0.5 * 2.0 / np.cosh(2 * x) ** 2)
    var = SignedMeasure(g, np.array([[0.0]]), np.array([1.0]), dens)
    rep = verify_bv_quotient(f, var, 5000, seed=2)
    assert rep.pass_rate >= 0.99


def test_operator_bounds_zero_and_atom():
    g = split_grid(48)
    g1, g2 = g.block1(), g.block2()
    region = product_ball(2.0)
    zero_ds = DerivativeStructure(g, (StructureTerm(
        1, 0, 0, hilbert_kernel(), const_gamma(g2, 0.0), 2.0,
        measure_from_density(GridFunction(g1, np.zeros(g1.shape)))),))
    rep0 = operator_bounds(zero_ds, AnisotropyMatrix(0.5, 1.0, 1, 1), region, 2.0, 8)
    assert rep0.m1_measured == 0.0 and rep0.m1_bound == 0.0

    # normalized single (2,1) atom term: the structural bound equals delta1
    gamma = const_gamma(g2, 1.0)
    gnorm = float(np.sum(np.abs(gamma.values) ** 2) * g2.cell_measure) ** 0.5
    gamma = GridFunction(g2, gamma.values / gnorm)
    atom_ds = DerivativeStructure(g, (StructureTerm(
        1, 0, 0, hilbert_kernel(), gamma, 2.0,
        measure_from_atoms(g1, [[0.2]], [1.0])),))
    A = AnisotropyMatrix(0.25, 1.0, 1, 1)
    rep = operator_bounds(atom_ds, A, region, 2.0, 8)
    assert rep.m1_bound == pytest.approx(0.25, rel=1e-12)
    assert rep.ratio_stable
    ratios = [pt.m1_measured for pt in rep.sweep]
    assert ratios[0] / ratios[1] == pytest.approx(2.0, rel=0.1)


def test_operator_bounds_rejects():
    g = split_grid(32)
    _, ds = sincos_scalar(g)
    A = identity_matrix(1, 1)
    with pytest.raises(DiffQuotError):
        operator_bounds(ds, A, product_ball(1.0), 1.0)
    from anisoflow.grid import ball
    with pytest.raises(DiffQuotError):
        operator_bounds(ds, A, ball(1.0), 2.0)


def test_atoms_rejected_outside_measure_block():
    g = split_grid(32)
    g1, g2 = g.block1(), g.block2()
    with pytest.raises(DiffQuotError):
        DerivativeStructure(g, (StructureTerm(
            0, 0, 0, hilbert_kernel(), const_gamma(g2), 2.0,
            measure_from_atoms(g1, [[0.0]], [1.0])),))


def test_u_field_masked_near_atoms():
    g = split_grid(48)
    g1, g2 = g.block1(), g.block2()
    ds = DerivativeStructure(g, (StructureTerm(
        1, 0, 0, hilbert_kernel(), const_gamma(g2), 2.0,
        measure_from_atoms(g1, [[0.1]], [1.0])),))
    U = big_u(ds, AnisotropyMatrix(0.5, 1.0, 1, 1), 8)
    assert U.values.mask is not None and U.values.mask.any()
    assert np.all(U.values.values >= 0.0)
