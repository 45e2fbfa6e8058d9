"""Anisotropic difference-quotient operators built from tensor maximal functions.

Central objects: directional bump families (one odd-weighted block per axis),
the nonnegative field ``V`` controlling ``|f(x) - f(y)| <= |x - y| (V(x) + V(y))``
for split-regular ``f``, and its anisotropic variant ``U`` with the weighted
distance ``|A^{-1}[x - y]|``.

The anisotropic field is evaluated on the original grid through the exact
rescaling identity

    (Upsilon_eps * R^{d1} g^)(x1 / d1) = (Upsilon_{d1 eps} * R g)(x1),

i.e. the shared dilation parameter acts at scale ``delta_i * eps`` on block
``i``.  Rungs whose block scale drops below one grid spacing switch that
block's factor to its zero-dilation limit (member integral times the
pointwise field), so the discrete supremum stays meaningful for arbitrarily
small anisotropy ratios at fixed resolution.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy import stats

from .grid import FULL, Grid, GridFunction, GridError, Region, lebesgue_norm, product_grid
from .maximal import (BumpFamily, LADDER_RATIO, indicator_ball_family, maximal_function,
                      smooth_maximal, std_bump_profile)
from .singular import FundamentalKernel, SignedMeasure, apply_to_measure
from .weak_lebesgue import weak_norm


class DiffQuotError(ValueError):
    pass


@dataclass(frozen=True)
class AnisotropyMatrix:
    """Diagonal dilation Diag(d1,...,d1,d2,...,d2) acting blockwise.

    The stability machinery requires d1 <= d2; the raw operator computations
    accept any positive pair, so the constraint is enforced by the parameter
    selector rather than here.
    """

    delta1: float
    delta2: float
    n1: int
    n2: int

    def __post_init__(self):
        if self.delta1 <= 0 or self.delta2 <= 0:
            raise DiffQuotError("anisotropy factors must be positive")

    @property
    def diagonal(self) -> np.ndarray:
        return np.array([self.delta1] * self.n1 + [self.delta2] * self.n2)

    def inverse_norm(self, vectors: np.ndarray) -> np.ndarray:
        """|A^{-1} v| for an (…, N) array of displacement vectors."""
        v = np.asarray(vectors, dtype=float)
        return np.sqrt(np.sum((v / self.diagonal) ** 2, axis=-1))


def identity_matrix(n1: int, n2: int) -> AnisotropyMatrix:
    return AnisotropyMatrix(1.0, 1.0, n1, n2)


# -- directional bump families ----------------------------------------------------

def sphere_cloud(ndim: int, count: int, seed: int = 0) -> np.ndarray:
    """Low-discrepancy directions on the unit sphere, always including the
    signed coordinate axes (so axis-aligned suprema are exact)."""
    axes = np.concatenate([np.eye(ndim), -np.eye(ndim)])
    if count <= 2 * ndim:
        return axes
    extra = count - 2 * ndim
    if ndim == 1:
        return axes
    if ndim == 2:
        theta = 2.0 * np.pi * (np.arange(extra) + 0.5) / extra
        pts = np.stack([np.cos(theta), np.sin(theta)], axis=-1)
    else:
        sob = stats.qmc.Sobol(d=ndim, scramble=True, seed=seed)
        raw = sob.random(extra)
        pts = stats.norm.ppf(np.clip(raw, 1e-12, 1.0 - 1e-12))
        norms = np.linalg.norm(pts, axis=-1, keepdims=True)
        pts = pts / np.where(norms < 1e-12, 1.0, norms)
    return np.concatenate([axes, pts])


def build_upsilon_family(n1: int, n2: int, j: int, direction_samples: int = 64,
                         seed: int = 0) -> tuple[BumpFamily, BumpFamily]:
    """Directional tensor families for derivative axis ``j`` (0-based, global).

    Each direction xi on the unit sphere of R^(n1+n2) contributes the pair

        member1(w1) = h1(xi_1/2 - w1) * {w1}^j,
        member2(w2) = h2(xi_2/2 - w2) * {w2}^j,

    where h_i is a mean-one smooth bump supported in the half ball (so the
    members stay supported in the unit ball) and the coordinate weight
    ``{w}^j`` multiplies the block that owns axis j (the other block's member
    carries weight 1).  Member integrals are ``(xi/2)_j`` on the weighted
    block and 1 on the other, exactly.
    """
    ndim = n1 + n2
    if not 0 <= j < ndim:
        raise DiffQuotError(f"axis index {j} outside 0..{ndim - 1}")
    cloud = sphere_cloud(ndim, direction_samples, seed)
    h1 = std_bump_profile(n1, 0.5)
    h2 = std_bump_profile(n2, 0.5) if n2 else None

    def member1(xi1, weight_axis):
        def f(w):
            w = np.asarray(w)
            vals = h1(xi1 / 2.0 - w)
            if weight_axis is not None:
                vals = vals * w[..., weight_axis]
            return vals
        return f

    def member2(xi2, weight_axis):
        def f(w):
            w = np.asarray(w)
            vals = h2(xi2 / 2.0 - w)
            if weight_axis is not None:
                vals = vals * w[..., weight_axis]
            return vals
        return f

    members1, members2, ints1, ints2 = [], [], [], []
    for xi in cloud:
        xi1, xi2 = xi[:n1], xi[n1:]
        if j < n1:
            members1.append(member1(xi1, j))
            ints1.append(float(xi1[j]) / 2.0)
            if n2:
                members2.append(member2(xi2, None))
                ints2.append(1.0)
        else:
            members1.append(member1(xi1, None))
            ints1.append(1.0)
            members2.append(member2(xi2, j - n1))
            ints2.append(float(xi2[j - n1]) / 2.0)

    fam1 = BumpFamily(f"upsilon_axis{j}", n1, tuple(members1), 1.0, None, True,
                      tuple(ints1))
    fam2 = BumpFamily(f"upsilon_bar_axis{j}", n2, tuple(members2), 1.0, None, True,
                      tuple(ints2)) if n2 else BumpFamily(
                          "upsilon_bar_empty", 0, (), 1.0, None, True, ())
    return fam1, fam2


# -- derivative structures ---------------------------------------------------------

@dataclass(frozen=True)
class StructureTerm:
    """One summand ``gamma(x2) * (S datum)(x1)`` of a partial derivative.

    ``i`` is the component axis the derivative belongs to and ``j`` the
    differentiation axis, both 0-based over all of R^N; ``k`` enumerates the
    summands of one entry.  Atoms in the datum are only admissible in the
    (2,1) block (x1-derivatives of the x2-block components).
    """

    i: int
    j: int
    k: int
    kernel: FundamentalKernel
    gamma: GridFunction
    gamma_q: float
    datum: SignedMeasure

    def block(self, n1: int) -> tuple[int, int]:
        return (1 if self.i < n1 else 2, 1 if self.j < n1 else 2)


_BLOCK_KIND = {(1, 1): "p", (1, 2): "q", (2, 1): "m", (2, 2): "r"}


@dataclass(frozen=True)
class DerivativeStructure:
    """Collection of structure terms over a shared split grid."""

    grid: Grid
    terms: tuple[StructureTerm, ...]

    def __post_init__(self):
        g1, g2 = self.grid.block1(), self.grid.block2()
        for t in self.terms:
            if t.datum.grid != g1:
                raise DiffQuotError("datum grids must match the x1 block")
            if t.gamma.grid != g2:
                raise DiffQuotError("gamma grids must match the x2 block")
            if t.gamma_q <= 1:
                raise DiffQuotError("gamma integrability exponent must exceed 1")
            if t.datum.atom_weights.size and t.block(self.grid.n1) != (2, 1):
                raise DiffQuotError("atomic data are only allowed in the (2,1) block")

    def kind_of(self, term: StructureTerm) -> str:
        return _BLOCK_KIND[term.block(self.grid.n1)]

    def filter(self, kinds: str) -> "DerivativeStructure":
        """Sub-structure with only the given datum classes (subset of 'pqmr')."""
        keep = tuple(t for t in self.terms if self.kind_of(t) in kinds)
        return DerivativeStructure(self.grid, keep)

    def with_data(self, new_data: dict) -> "DerivativeStructure":
        """Replace datum measures by term index (used by equi-split pipelines)."""
        terms = list(self.terms)
        for idx, datum in new_data.items():
            t = terms[idx]
            terms[idx] = StructureTerm(t.i, t.j, t.k, t.kernel, t.gamma, t.gamma_q, datum)
        return DerivativeStructure(self.grid, tuple(terms))

    def structural_sums(self, p: float, use_lp_data: bool = False) -> tuple[float, float]:
        """Blockwise sums ``sum ||gamma||_p * ||g||`` entering the operator bounds.

        Returns (block-1-axis sum, block-2-axis sum); datum norms are total
        variation by default, or L^p of the density when ``use_lp_data`` is
        set (undefined for atomic data -> inf).
        """
        s1 = s2 = 0.0
        for t in self.terms:
            gnorm = lebesgue_norm(t.gamma, p)
            if use_lp_data:
                if t.datum.atom_weights.size:
                    dnorm = math.inf
                else:
                    dnorm = lebesgue_norm(t.datum.density, p) if t.datum.density else 0.0
            else:
                dnorm = t.datum.total_variation
            if t.j < self.grid.n1:
                s1 += gnorm * dnorm
            else:
                s2 += gnorm * dnorm
        return s1, s2


@dataclass(frozen=True)
class UField:
    """Nonnegative difference-quotient control field on the full grid.

    Satisfies (up to the verified tolerance) ``|f(x) - f(y)| <=
    |A^{-1}[x-y]| (U(x) + U(y))`` away from the masked nodes; the mask covers
    one-spacing neighbourhoods of atoms in the measure data.
    """

    values: GridFunction
    matrix: AnisotropyMatrix
    provenance: tuple


def _shared_ladder(grid: Grid, A: AnisotropyMatrix, ratio: float) -> np.ndarray:
    g1, g2 = grid.block1(), grid.block2()
    lo = min(min(g1.spacing) / A.delta1, min(g2.spacing) / A.delta2)
    hi = min(min(g1.half_widths) / A.delta1, min(g2.half_widths) / A.delta2)
    if hi <= lo:
        return np.array([hi])
    count = int(math.floor(math.log(hi / lo) / math.log(ratio) + 1e-9)) + 1
    return lo * ratio ** np.arange(count)


def _block_factors(fam: BumpFamily, block_grid: Grid, data_hat: np.ndarray,
                   limit_field: np.ndarray, scale: float) -> np.ndarray:
    """|member_scale * field| for all members, or the zero-dilation limit when
    the block scale is not resolvable on the mesh."""
    if scale >= min(block_grid.spacing):
        kern = fam.sampled(block_grid, scale)
        axes = tuple(range(1, block_grid.ndim + 1))
        conv = np.fft.ifftn(np.fft.fftn(kern, axes=axes) * data_hat, axes=axes)
        return np.abs(conv.real)
    ints = np.abs(np.asarray(fam.integrals))
    return ints.reshape((-1,) + (1,) * block_grid.ndim) * np.abs(limit_field)


def big_u(ds: DerivativeStructure, A: AnisotropyMatrix, direction_samples: int = 64,
          ratio: float = LADDER_RATIO, seed: int = 0) -> UField:
    """Anisotropic difference-quotient field of a derivative structure.

    Per term the shared dilation eps runs over a geometric ladder (plus the
    eps -> 0 limit); block i convolves at scale ``delta_i * eps`` against the
    kernel-transformed datum (block 1) or the gamma factor (block 2), the
    direction supremum couples the two blocks, and the result is weighted by
    the diagonal entry ``A_jj`` of the term's derivative axis.
    """
    grid = ds.grid
    if grid.n2 == 0:
        raise DiffQuotError("difference-quotient operators need a split grid (n2 >= 1)")
    if A.n1 != grid.n1 or A.n2 != grid.n2:
        raise DiffQuotError("anisotropy matrix block sizes do not match the grid")
    g1, g2 = grid.block1(), grid.block2()
    ladder = _shared_ladder(grid, A, ratio)
    shape1 = g1.shape + (1,) * g2.ndim
    shape2 = (1,) * g1.ndim + g2.shape

    total = np.zeros(grid.shape)
    mask = np.zeros(grid.shape, dtype=bool)
    fam_cache: dict[int, tuple[BumpFamily, BumpFamily]] = {}
    provenance = []

    for term in ds.terms:
        fam1, fam2 = fam_cache.setdefault(
            term.j, build_upsilon_family(grid.n1, grid.n2, term.j, direction_samples, seed))
        ajj = A.delta1 if term.j < grid.n1 else A.delta2
        d1_hat = term.kernel.multiplier_mesh(g1) * term.datum.fourier_phases(g1) / g1.cell_measure
        d2_hat = np.fft.fftn(term.gamma.values)
        limit1_gf = apply_to_measure(term.kernel, term.datum)
        limit1 = limit1_gf.values
        limit2 = term.gamma.values

        ints = np.abs(np.asarray(fam1.integrals)) * np.abs(np.asarray(fam2.integrals))
        term_max = (float(np.max(ints)) * np.abs(limit1).reshape(shape1)
                    * np.abs(limit2).reshape(shape2))
        n_members = len(fam1.members)
        chunk = max(1, min(n_members, int(3e7 // max(grid.size, 1))))
        for eps in ladder:
            c1 = _block_factors(fam1, g1, d1_hat, limit1, A.delta1 * eps)
            c2 = _block_factors(fam2, g2, d2_hat, limit2, A.delta2 * eps)
            for lo_m in range(0, n_members, chunk):
                sl = slice(lo_m, lo_m + chunk)
                prod = (c1[sl].reshape((-1,) + shape1)
                        * c2[sl].reshape((-1,) + shape2)).max(axis=0)
                np.maximum(term_max, prod, out=term_max)
        total += ajj * term_max
        if limit1_gf.mask is not None:
            mask |= np.broadcast_to(limit1_gf.mask.reshape(shape1), grid.shape)
        provenance.append((term.kernel.name, term.block(grid.n1), term.i, term.j, term.k))

    field = GridFunction(grid, total, mask if mask.any() else None)
    return UField(field, A, tuple(provenance))


def big_v(ds: DerivativeStructure, direction_samples: int = 64,
          ratio: float = LADDER_RATIO, seed: int = 0) -> GridFunction:
    """Isotropic difference-quotient field (the unit-anisotropy case of big_u)."""
    A = identity_matrix(ds.grid.n1, ds.grid.n2)
    return big_u(ds, A, direction_samples, ratio, seed).values


# -- verification -------------------------------------------------------------------

@dataclass(frozen=True)
class QuotientReport:
    pass_rate: float
    worst_ratio: float
    pair_count: int
    tolerance: float


def verify_difference_quotient(f: GridFunction, U: UField, pair_count: int = 10_000,
                               min_separation: float | None = None,
                               tolerance: float = 0.05,
                               seed: int = 0) -> QuotientReport:
    """Sample node pairs and test ``|f(x)-f(y)| <= |A^{-1}[x-y]| (U(x)+U(y))``.

    Pairs closer than the minimum separation (default two spacings) are
    excluded — at grid scale the discretization error dominates — as are
    masked nodes, which stand in for the negligible set of the estimate.
    """
    grid = f.grid
    if U.values.grid != grid:
        raise DiffQuotError("field and U live on different grids")
    min_separation = (2.0 * max(grid.spacing) if min_separation is None
                      else min_separation)
    valid = np.ones(grid.shape, dtype=bool)
    for m in (f.mask, U.values.mask):
        if m is not None:
            valid &= ~m
    flat_valid = np.flatnonzero(valid.ravel())
    if flat_valid.size == 0:
        raise DiffQuotError("all nodes masked; nothing to verify")

    nodes = grid.nodes().reshape(-1, grid.ndim)
    fv = f.values.ravel()
    uv = U.values.values.ravel()
    rng = np.random.default_rng(seed)

    got_lhs, got_rhs = [], []
    attempts = 0
    need = pair_count
    while need > 0 and attempts < 50:
        a = flat_valid[rng.integers(0, flat_valid.size, size=2 * need)]
        b = flat_valid[rng.integers(0, flat_valid.size, size=2 * need)]
        sep = np.linalg.norm(nodes[a] - nodes[b], axis=-1)
        keep = sep >= min_separation
        a, b = a[keep][:need], b[keep][:need]
        got_lhs.append(np.abs(fv[a] - fv[b]))
        rz = U.matrix.inverse_norm(nodes[a] - nodes[b])
        got_rhs.append(rz * (uv[a] + uv[b]))
        need -= a.size
        attempts += 1
    lhs = np.concatenate(got_lhs)
    rhs = np.concatenate(got_rhs)
    ok = lhs <= rhs * (1.0 + tolerance) + 1e-12
    ratios = lhs / np.maximum(rhs, 1e-300)
    return QuotientReport(float(np.mean(ok)), float(np.max(ratios)), lhs.size, tolerance)


def verify_bv_quotient(f: GridFunction, variation: SignedMeasure,
                       pair_count: int = 10_000, min_separation: float | None = None,
                       constant: float = 1.0, tolerance: float = 0.05,
                       seed: int = 0) -> QuotientReport:
    """Classical one-dimensional cross-check ``|f(x)-f(y)| <= C |x-y| (M|Df|(x)+M|Df|(y))``.

    ``variation`` is the total-variation measure |Df| (atoms at jumps plus a
    density for the absolutely continuous part); its maximal function comes
    from ball averages, i.e. the indicator family.
    """
    grid = f.grid
    abs_var = SignedMeasure(variation.grid, variation.atom_locations,
                            np.abs(variation.atom_weights),
                            None if variation.density is None else
                            GridFunction(variation.grid, np.abs(variation.density.values)))
    fam = indicator_ball_family(grid.ndim)
    mdf = smooth_maximal(fam, abs_var)
    min_separation = (2.0 * max(grid.spacing) if min_separation is None
                      else min_separation)
    nodes = grid.nodes().reshape(-1, grid.ndim)
    fv = f.values.ravel()
    mv = mdf.values.ravel()
    rng = np.random.default_rng(seed)
    a = rng.integers(0, nodes.shape[0], size=4 * pair_count)
    b = rng.integers(0, nodes.shape[0], size=4 * pair_count)
    sep = np.linalg.norm(nodes[a] - nodes[b], axis=-1)
    keep = sep >= min_separation
    a, b, sep = a[keep][:pair_count], b[keep][:pair_count], sep[keep][:pair_count]
    lhs = np.abs(fv[a] - fv[b])
    rhs = constant * sep * (mv[a] + mv[b])
    ok = lhs <= rhs * (1.0 + tolerance) + 1e-12
    return QuotientReport(float(np.mean(ok)), float(np.max(lhs / np.maximum(rhs, 1e-300))),
                          lhs.size, tolerance)


# -- operator bounds ----------------------------------------------------------------

@dataclass(frozen=True)
class SweepPoint:
    delta1: float
    delta2: float
    m1_measured: float
    m1_bound: float

    @property
    def ratio(self) -> float:
        return self.m1_measured / self.m1_bound if self.m1_bound > 0 else math.nan


@dataclass(frozen=True)
class OperatorBoundsReport:
    m1_measured: float
    m1_bound: float
    lp_measured: float
    lp_bound: float
    sweep: tuple[SweepPoint, ...]
    ratio_stable: bool


def operator_bounds(ds: DerivativeStructure, A: AnisotropyMatrix, region: Region,
                    p: float, direction_samples: int = 32,
                    sweep_factors=(1.0, 0.5, 0.25, 0.125),
                    seed: int = 0) -> OperatorBoundsReport:
    """Measured weak-L1 and L^p size of U against the structural scaling bound.

    The bound is the bracketed sum ``d1 * sum_(j in block 1) ||gamma||_p ||g||
    + d2 * sum_(j in block 2) ...`` with the unknown prefactor left symbolic;
    the report therefore tracks the measured/bound ratio over a joint
    four-point dilation sweep and flags it stable when it stays within a
    factor 3 (±50% around its geometric middle).
    """
    if p <= 1:
        raise DiffQuotError("operator bounds need p > 1")
    if region.kind != "product_ball":
        raise DiffQuotError("operator bounds are stated on product regions")
    s1, s2 = ds.structural_sums(p)
    s1_lp, s2_lp = ds.structural_sums(p, use_lp_data=True)

    def measure_at(a: AnisotropyMatrix):
        u = big_u(ds, a, direction_samples, seed=seed)
        m1 = weak_norm(u.values, 1, region).value
        lp = lebesgue_norm(u.values, p, region)
        return m1, lp

    points = []
    for fac in sweep_factors:
        a = AnisotropyMatrix(A.delta1 * fac, A.delta2 * fac, A.n1, A.n2)
        m1, _ = measure_at(a)
        points.append(SweepPoint(a.delta1, a.delta2, m1, a.delta1 * s1 + a.delta2 * s2))
    m1_measured, lp_measured = measure_at(A)
    m1_bound = A.delta1 * s1 + A.delta2 * s2
    lp_bound = A.delta1 * s1_lp + A.delta2 * s2_lp
    ratios = [pt.ratio for pt in points if np.isfinite(pt.ratio) and pt.ratio > 0]
    stable = bool(ratios) and max(ratios) <= 3.0 * min(ratios)
    return OperatorBoundsReport(m1_measured, m1_bound, lp_measured, lp_bound,
                                tuple(points), stable)
