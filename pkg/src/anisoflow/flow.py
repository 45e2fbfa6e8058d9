"""Vector fields with split growth/derivative structure and particle flow integration.

Fields are stored as time slices of sampled vector grid functions together
with a growth split ``b/(1+|x|) = b1 + b2`` (integrable plus bounded part)
and, when available, a derivative structure whose entries are
``gamma(x2) * (S datum)(x1)`` terms.  Trajectories are classical RK4 with
multilinear interpolation in space and linear interpolation in time;
particles that leave the box are frozen and excluded from sublevel sets.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .grid import (FULL, Grid, GridFunction, GridError, Region, ball,
                   interpolate, lebesgue_norm, product_grid, sample)
from .diffquot import DerivativeStructure, StructureTerm
from .maximal import std_bump_profile
from .singular import (SignedMeasure, apply, get_kernel, identity_kernel,
                       measure_from_atoms, measure_from_density, riesz2d_kernel,
                       scale_kernel, apply_to_measure)


class FlowError(ValueError):
    pass


@dataclass(frozen=True)
class SplitVectorField:
    """Time-sliced vector field with growth split and optional derivative structure.

    ``evaluator``, when set, must agree with multilinear interpolation of the
    slices; product-structured fields (phase-space fields whose components
    depend on one block each) use it to avoid materializing fine product
    grids — interpolation of such fields factorizes exactly.
    """

    grid: Grid
    times: np.ndarray
    slices: tuple[GridFunction, ...]
    growth1: tuple[GridFunction, ...]
    growth2: tuple[GridFunction, ...]
    structure: DerivativeStructure | None
    p_exponent: float
    p_norm: float
    name: str = "field"
    evaluator: object = None

    def __post_init__(self):
        if len(self.slices) != len(self.times) or not self.slices:
            raise FlowError("need one field slice per time stamp")
        n = self.grid.ndim
        for s in self.slices:
            if s.grid != self.grid or s.ncomp != n:
                raise FlowError("slices must be N-component fields on the field grid")
        coords = self.grid.coords()
        scale = 1.0 + np.sqrt(sum(np.broadcast_arrays(*(c**2 for c in coords))))
        for b, g1, g2 in zip(self.slices, self.growth1, self.growth2):
            recon = (g1.values + g2.values) * scale
            if np.max(np.abs(recon - b.values)) > 1e-10 * (1.0 + np.max(np.abs(b.values))):
                raise FlowError("growth split does not reconstruct the field")

    @property
    def growth1_norms(self) -> np.ndarray:
        return np.array([lebesgue_norm(g, 1) for g in self.growth1])

    @property
    def growth2_norms(self) -> np.ndarray:
        return np.array([lebesgue_norm(g, np.inf) for g in self.growth2])

    def max_speed(self) -> float:
        return max(float(np.max(s.magnitude())) for s in self.slices)

    def evaluate(self, positions: np.ndarray, t: float) -> np.ndarray:
        """Field values at arbitrary positions: multilinear in space, linear in time."""
        if self.evaluator is not None:
            return np.atleast_2d(self.evaluator(np.atleast_2d(positions), t))
        ts = self.times
        if len(ts) == 1 or t <= ts[0]:
            return np.atleast_2d(interpolate(self.slices[0], positions))
        if t >= ts[-1]:
            return np.atleast_2d(interpolate(self.slices[-1], positions))
        k = int(np.searchsorted(ts, t, side="right") - 1)
        w = (t - ts[k]) / (ts[k + 1] - ts[k])
        lo = np.atleast_2d(interpolate(self.slices[k], positions))
        hi = np.atleast_2d(interpolate(self.slices[k + 1], positions))
        return (1.0 - w) * lo + w * hi

    def l1_distance(self, other: "SplitVectorField", lam: float,
                    t: float, T: float) -> float:
        """``||b - b~||_{L1((t,T) x B_lambda)}`` via per-slice quadrature and a
        trapezoid rule over the union of slice times."""
        if other.grid != self.grid:
            raise FlowError("fields live on different grids")
        stamps = np.union1d(self.times, other.times)
        stamps = np.unique(np.concatenate([[t], stamps[(stamps > t) & (stamps < T)], [T]]))
        region = ball(lam)
        vals = []
        for s in stamps:
            diff_vals = (self._slice_at(s).values - other._slice_at(s).values)
            diff = GridFunction(self.grid, diff_vals)
            vals.append(lebesgue_norm(diff, 1, region))
        return float(np.trapezoid(vals, stamps))

    def _slice_at(self, t: float) -> GridFunction:
        ts = self.times
        if len(ts) == 1 or t <= ts[0]:
            return self.slices[0]
        if t >= ts[-1]:
            return self.slices[-1]
        k = int(np.searchsorted(ts, t, side="right") - 1)
        w = (t - ts[k]) / (ts[k + 1] - ts[k])
        vals = (1.0 - w) * self.slices[k].values + w * self.slices[k + 1].values
        return GridFunction(self.grid, vals)


def make_split_field(grid: Grid, slices, times=None, structure=None,
                     p_exponent: float = 2.0, name: str = "field",
                     growth1=None, evaluator=None) -> SplitVectorField:
    """Assemble a field from slices; the growth split defaults to the bounded
    branch ``b2 = b/(1+|x|)``, ``b1 = 0`` (appropriate for bounded fields)."""
    slices = tuple(slices)
    times = np.zeros(1) if times is None else np.asarray(times, dtype=float)
    coords = grid.coords()
    scale = 1.0 + np.sqrt(sum(np.broadcast_arrays(*(c**2 for c in coords))))
    zeros = np.broadcast_to(np.zeros(1), slices[0].values.shape)
    g1s, g2s = [], []
    for idx, b in enumerate(slices):
        over = b.values / scale
        if growth1 is not None:
            g1 = growth1[idx]
            g1s.append(g1)
            g2s.append(GridFunction(grid, over - g1.values))
        else:
            g1s.append(GridFunction(grid, zeros))
            g2s.append(GridFunction(grid, over))
    lam = min(grid.half_widths)
    p_norm = _space_time_lp(slices, times, p_exponent, ball(lam))
    return SplitVectorField(grid, times, slices, tuple(g1s), tuple(g2s),
                            structure, p_exponent, p_norm, name, evaluator)


def _space_time_lp(slices, times, p, region) -> float:
    per = [lebesgue_norm(s, p, region) ** p for s in slices]
    if len(per) == 1:
        horizon = max(float(times[-1]), 1.0)
        return (horizon * per[0]) ** (1.0 / p)
    return float(np.trapezoid(per, times)) ** (1.0 / p)


@dataclass(frozen=True)
class FlowMap:
    """Recorded particle trajectories of one field."""

    seeds: np.ndarray            # (m, N)
    times: np.ndarray            # (k,) recorded times, times[0] == start
    trajectories: np.ndarray     # (k, m, N)
    escaped: np.ndarray          # (m,) particles frozen at the box edge
    cell_measure: float
    start_time: float
    field_name: str = "field"

    @property
    def seed_count(self) -> int:
        return self.seeds.shape[0]

    def positions(self, k: int) -> np.ndarray:
        return self.trajectories[k]

    def save_csv(self, path) -> None:
        with open(path, "w") as fh:
            ndim = self.seeds.shape[1]
            cols = ",".join(f"x{a + 1}" for a in range(ndim))
            fh.write(f"seed_id,time,{cols}\n")
            for k, t in enumerate(self.times):
                for sid in range(self.seed_count):
                    pos = ",".join(repr(float(v)) for v in self.trajectories[k, sid])
                    fh.write(f"{sid},{float(t)!r},{pos}\n")


def seed_lattice(grid: Grid, region: Region, density: int) -> tuple[np.ndarray, float]:
    """Cell-center lattice tiling the region, with its per-seed cell measure."""
    if region.kind == "ball":
        c = np.asarray(region.center if region.center is not None else grid.centers)
        extents = np.full(grid.ndim, region.radius)
    elif region.kind == "box":
        c = np.asarray(region.center if region.center is not None else grid.centers)
        extents = np.asarray(region.extents)
    elif region.kind == "all":
        c = np.asarray(grid.centers)
        extents = np.asarray(grid.half_widths)
    else:
        c = np.asarray(region.center if region.center is not None else grid.centers)
        extents = np.full(grid.ndim, region.radius)
    axes = [c[a] - extents[a] + (2.0 * extents[a] / density) * (np.arange(density) + 0.5)
            for a in range(grid.ndim)]
    pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, grid.ndim)
    keep = region.contains_points(grid, pts)
    cell = float(np.prod(2.0 * extents / density))
    seeds = pts[keep]
    if seeds.size == 0:
        raise FlowError("seed region contains no lattice cells")
    return seeds, cell


def integrate_flow(field: SplitVectorField, seed_region: Region, seed_density: int,
                   t: float, T: float, dt: float,
                   record_times=None) -> FlowMap:
    """Classical RK4 particle integration of ``dX/ds = b(s, X)``.

    ``dt`` must respect the interpolation cap ``spacing / (2 max|b|)``.
    Trajectories are recorded at ``record_times`` (default: 33 uniform
    stamps); particles leaving the box are frozen where they exited.
    """
    if T <= t:
        raise FlowError("need T > t")
    max_speed = field.max_speed()
    if max_speed > 0:
        cap = min(field.grid.spacing) / (2.0 * max_speed)
        if dt > cap * (1.0 + 1e-12):
            raise FlowError(f"dt={dt:g} exceeds the interpolation cap {cap:g}")
    if record_times is None:
        record_times = np.linspace(t, T, 33)
    record_times = np.asarray(record_times, dtype=float)
    if record_times[0] != t:
        record_times = np.concatenate([[t], record_times])

    seeds, cell = seed_lattice(field.grid, seed_region, seed_density)
    m = seeds.shape[0]
    pos = seeds.copy()
    alive = np.ones(m, dtype=bool)
    out = np.empty((record_times.size, m, field.grid.ndim))
    out[0] = pos
    next_rec = 1

    s = t
    while s < T - 1e-14:
        step = min(dt, T - s)
        new_pos = pos.copy()
        if np.any(alive):
            p = pos[alive]
            k1 = field.evaluate(p, s)
            k2 = field.evaluate(p + 0.5 * step * k1, s + 0.5 * step)
            k3 = field.evaluate(p + 0.5 * step * k2, s + 0.5 * step)
            k4 = field.evaluate(p + step * k3, s + step)
            moved = p + (step / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            inside = field.grid.contains(moved)
            upd = np.where(inside[:, None], moved, p)
            new_pos[alive] = upd
            alive_idx = np.flatnonzero(alive)
            alive[alive_idx[~inside]] = False
        pos = new_pos
        s += step
        while next_rec < record_times.size and record_times[next_rec] <= s + 1e-12:
            out[next_rec] = pos
            next_rec += 1
    while next_rec < record_times.size:
        out[next_rec] = pos
        next_rec += 1
    return FlowMap(seeds, record_times, out, ~alive, cell, t, field.name)


def compressibility(fm: FlowMap, bins_exponent: int | None = None) -> float:
    """Histogram estimate of the flow's compressibility constant.

    At each recorded time the live particles are binned on a dyadic partition
    of their bounding box; the estimate is the largest pushforward density
    ``(count * seed cell measure) / bin volume`` seen.  Interior bins of a
    measure-preserving flow sit at 1 up to lattice quantization.
    """
    if fm.seed_count == 0:
        raise FlowError("empty seed set")
    ndim = fm.seeds.shape[1]
    live = ~fm.escaped
    if not np.any(live):
        raise FlowError("all particles escaped; compressibility undefined")
    per_axis_density = max(2, int(round(fm.seed_count ** (1.0 / ndim))))
    if bins_exponent is None:
        bins_exponent = max(1, int(math.floor(math.log2(max(per_axis_density / 16, 1)))) + 1)
    bins = 2 ** bins_exponent
    worst = 0.0
    for k in range(fm.times.size):
        pts = fm.trajectories[k][live]
        lo = pts.min(axis=0)
        hi = pts.max(axis=0)
        span = np.maximum(hi - lo, 1e-12)
        lo = lo - 1e-9 * span
        hi = hi + 1e-9 * span
        hist, edges = np.histogramdd(pts, bins=bins, range=list(zip(lo, hi)))
        vol = np.prod([(e[1] - e[0]) for e in edges])
        worst = max(worst, float(np.max(hist)) * fm.cell_measure / vol)
    return worst


def sublevel(fm: FlowMap, lam: float) -> np.ndarray:
    """Seeds whose whole recorded trajectory stays inside the ball of radius lam."""
    if lam <= 0:
        raise FlowError("sublevel threshold must be positive")
    radii = np.linalg.norm(fm.trajectories, axis=-1)
    return (~fm.escaped) & np.all(radii <= lam, axis=0)


@dataclass(frozen=True)
class DecayCurve:
    lambdas: np.ndarray
    measures: np.ndarray
    monotone: bool

    def tail(self, lam: float) -> float:
        """Superlevel measure at the largest tabulated threshold <= lam."""
        k = int(np.searchsorted(self.lambdas, lam, side="right") - 1)
        if k < 0:
            return float(self.measures[0])
        return float(self.measures[k])

    def first_below(self, target: float) -> float | None:
        hits = np.flatnonzero(self.measures <= target)
        return float(self.lambdas[hits[0]]) if hits.size else None


def decay_curve_from_flow(fm: FlowMap, r: float, lambda_ladder) -> DecayCurve:
    """Measured curve ``lambda -> measure(B_r seeds leaving B_lambda)``."""
    lams = np.asarray(lambda_ladder, dtype=float)
    if np.any(np.diff(lams) <= 0):
        raise FlowError("lambda ladder must be increasing")
    in_ball = np.linalg.norm(fm.seeds, axis=-1) <= r
    meas = []
    for lam in lams:
        good = sublevel(fm, lam)
        meas.append(float(np.count_nonzero(in_ball & ~good)) * fm.cell_measure)
    meas = np.array(meas)
    return DecayCurve(lams, meas, bool(np.all(np.diff(meas) <= 1e-12)))


def superlevel_decay(field: SplitVectorField, r: float, lambda_ladder,
                     seed_region: Region, seed_density: int,
                     t: float, T: float, dt: float) -> DecayCurve:
    fm = integrate_flow(field, seed_region, seed_density, t, T, dt)
    return decay_curve_from_flow(fm, r, lambda_ladder)


# -- built-in fields -----------------------------------------------------------------

def _ones_density(grid: Grid) -> SignedMeasure:
    return measure_from_density(sample(lambda *cs: np.ones(np.broadcast_shapes(
        *(np.shape(c) for c in cs))), grid))


def _const_gamma(grid: Grid, value: float = 1.0) -> GridFunction:
    return GridFunction(grid, np.full(grid.shape, value))


def builtin_field(kind: str, grid: Grid, **params) -> SplitVectorField:
    """Construct a named analytic field with its exact derivative structure.

    Kinds: zero, rotation, dilation (rate c), shear, drift (constant vector),
    sincos.  All are autonomous; rotation/shear/sincos need N = 2.
    """
    n = grid.ndim
    g1, g2 = grid.block1(), grid.block2()
    ident1 = identity_kernel(g1.ndim)

    def vec(expr):
        return sample(expr, grid, ncomp=n)

    terms: tuple[StructureTerm, ...] = ()
    if kind == "zero":
        b = vec(lambda *cs: [np.zeros(np.broadcast_shapes(*(np.shape(c) for c in cs)))] * n)
    elif kind == "rotation":
        _need_2d(grid, kind)
        b = vec(lambda x1, x2: (-(x2 + 0.0 * x1), x1 + 0.0 * x2))
        terms = (
            StructureTerm(0, 1, 0, scale_kernel(ident1, -1.0), _const_gamma(g2), 2.0,
                          _ones_density(g1)),
            StructureTerm(1, 0, 0, ident1, _const_gamma(g2), 2.0, _ones_density(g1)),
        )
    elif kind == "dilation":
        rate = params.get("rate", 1.0)
        b = vec(lambda *cs: [rate * np.broadcast_to(c, np.broadcast_shapes(
            *(np.shape(cc) for cc in cs))) for c in cs])
        terms = tuple(
            StructureTerm(i, i, 0, scale_kernel(ident1, rate) if i < grid.n1 else
                          scale_kernel(ident1, rate), _const_gamma(g2), 2.0,
                          _ones_density(g1))
            for i in range(n))
    elif kind == "shear":
        _need_2d(grid, kind)
        b = vec(lambda x1, x2: (x2 + 0.0 * x1, 0.0 * x1 + 0.0 * x2))
        terms = (StructureTerm(0, 1, 0, ident1, _const_gamma(g2), 2.0,
                               _ones_density(g1)),)
    elif kind == "drift":
        c = np.asarray(params.get("velocity", np.ones(n)), dtype=float)
        b = vec(lambda *cs: [np.full(np.broadcast_shapes(*(np.shape(cc) for cc in cs)), c[i])
                             for i in range(n)])
    elif kind == "sincos":
        _need_2d(grid, kind)
        b = vec(lambda x1, x2: (np.sin(x1) * np.cos(x2), np.cos(x1) * np.sin(x2)))
        terms = sincos_structure(grid).terms
    else:
        raise FlowError(f"unknown builtin field {kind!r}")
    structure = DerivativeStructure(grid, terms) if terms else None
    return make_split_field(grid, [b], structure=structure, name=kind)


def _need_2d(grid: Grid, kind: str):
    if grid.ndim != 2 or grid.n1 != 1:
        raise FlowError(f"builtin {kind!r} needs a 1+1 split grid")


def sincos_structure(grid: Grid) -> DerivativeStructure:
    """Exact structure of b = (sin x1 cos x2, cos x1 sin x2) through the
    conjugate-function kernel: every entry is gamma(x2) * (H datum)(x1)."""
    g1, g2 = grid.block1(), grid.block2()
    H = get_kernel("hilbert")
    m_sin = measure_from_density(sample(lambda x: -np.sin(x), g1))
    cosd = measure_from_density(sample(lambda x: np.cos(x), g1))
    cos_g = sample(lambda x: np.cos(x), g2)
    msin_g = sample(lambda x: -np.sin(x), g2)
    return DerivativeStructure(grid, (
        StructureTerm(0, 0, 0, H, cos_g, 2.0, m_sin),    # d1 b1 = cos cos
        StructureTerm(0, 1, 0, H, msin_g, 2.0, cosd),    # d2 b1 = -sin sin
        StructureTerm(1, 0, 0, H, msin_g, 2.0, cosd),    # d1 b2 = -sin sin
        StructureTerm(1, 1, 0, H, cos_g, 2.0, m_sin),    # d2 b2 = cos cos
    ))


def sincos_scalar(grid: Grid) -> tuple[GridFunction, DerivativeStructure]:
    """Scalar fixture f = sin x1 cos x2 with its two-term structure."""
    g1, g2 = grid.block1(), grid.block2()
    H = get_kernel("hilbert")
    f = sample(lambda x1, x2: np.sin(x1) * np.cos(x2), grid)
    ds = DerivativeStructure(grid, (
        StructureTerm(0, 0, 0, H, sample(lambda x: np.cos(x), g2), 2.0,
                      measure_from_density(sample(lambda x: -np.sin(x), g1))),
        StructureTerm(0, 1, 0, H, sample(lambda x: -np.sin(x), g2), 2.0,
                      measure_from_density(sample(lambda x: np.cos(x), g1))),
    ))
    return f, ds


# -- Vlasov-type phase-space fields ---------------------------------------------------

def poisson_field_free_space(rho: SignedMeasure, coupling: float) -> GridFunction:
    """Free-space force field of a charge measure (direct kernel superposition
    for atoms, spectral gradient solve for the density part)."""
    grid = rho.grid
    n = grid.ndim
    values = np.zeros((n, *grid.shape))
    mask = np.zeros(grid.shape, dtype=bool)
    if rho.atom_weights.size:
        nodes = grid.nodes().reshape(-1, n)
        clamp = min(grid.spacing)
        for loc, w in zip(rho.atom_locations, rho.atom_weights):
            d = nodes - loc
            dist = np.sqrt(np.sum(d**2, axis=-1))
            close = dist < clamp
            if np.any(close):
                sd = np.where(dist[close] == 0, 1.0, dist[close])
                d[close] *= (clamp / sd)[:, None]
                mask.ravel()[close] = True
                dist[close] = clamp
            if n == 1:
                contrib = coupling * w * 0.5 * np.sign(d[:, 0])[None]
            else:
                contrib = coupling * w * d.T / (2.0 * np.pi * dist**2)
            values += contrib.reshape((n, *grid.shape))
    if rho.density is not None:
        values += _spectral_field(rho.density, coupling)
    return GridFunction(grid, values, mask if mask.any() else None)


def _spectral_field(density: GridFunction, coupling: float) -> np.ndarray:
    grid = density.grid
    freqs = grid.frequencies()
    k2 = sum(np.broadcast_arrays(*(f**2 for f in freqs)))
    k2 = np.where(k2 == 0, 1.0, k2)
    rho_hat = np.fft.fftn(density.values)
    comps = []
    for a in range(grid.ndim):
        mult = -1j * freqs[a] / k2
        mult = np.broadcast_to(mult, grid.shape).copy()
        mult[(0,) * grid.ndim] = 0.0
        comps.append(coupling * np.fft.ifftn(rho_hat * mult).real)
    return np.stack(comps)


def mollify_measure(rho: SignedMeasure, eta: float) -> SignedMeasure:
    """Mollified charge: atoms become sampled bumps at scale eta; a density is
    smoothed spectrally with the same profile.

    Sampled atom bumps are renormalized to carry exactly their weight, so the
    total variation is preserved uniformly in eta even when the bump is only
    marginally resolved on the mesh.
    """
    grid = rho.grid
    prof = std_bump_profile(grid.ndim, eta)
    values = np.zeros(grid.shape)
    if rho.atom_weights.size:
        nodes = grid.nodes()
        cm = grid.cell_measure
        for loc, w in zip(rho.atom_locations, rho.atom_weights):
            bump = prof(nodes - loc)
            mass = float(np.sum(bump)) * cm
            if mass <= 0:
                raise FlowError("mollification scale below mesh resolution")
            values += (w / mass) * bump
    if rho.density is not None:
        disp = np.stack(np.broadcast_arrays(*grid.displacement_coords()), axis=-1)
        kern = prof(disp) * grid.cell_measure
        values += np.fft.ifftn(np.fft.fftn(rho.density.values) * np.fft.fftn(kern)).real
    return measure_from_density(GridFunction(grid, values))


def vlasov_structure(charge: SignedMeasure, coupling: float, vg: Grid,
                     grid: Grid) -> DerivativeStructure:
    """Derivative structure of ``b = (v, E(x))``: ``D_v(v) = Id`` through the
    identity kernel and ``D_x E`` through the second derivatives of the
    potential kernel acting on the charge."""
    n = charge.grid.ndim
    gamma1 = GridFunction(vg, np.ones(vg.shape))
    identx = identity_kernel(n)
    terms = []
    ones_x = _ones_density(charge.grid)
    for a in range(n):
        terms.append(StructureTerm(a, n + a, 0, identx, gamma1, 2.0, ones_x))
    if n == 1:
        terms.append(StructureTerm(1, 0, 0, scale_kernel(identx, coupling),
                                   gamma1, 2.0, charge))
    else:
        for i in range(2):
            for j in range(2):
                terms.append(StructureTerm(n + i, j, 0,
                                           scale_kernel(riesz2d_kernel(i, j), -coupling),
                                           gamma1, 2.0, charge))
                if i == j:
                    terms.append(StructureTerm(n + i, j, 1,
                                               scale_kernel(identx, 0.5 * coupling),
                                               gamma1, 2.0, charge))
    return DerivativeStructure(grid, tuple(terms))


def vlasov_field(rho: SignedMeasure, coupling: float, eta: float,
                 v_half_width: float, v_points: int,
                 name: str | None = None) -> SplitVectorField:
    """Phase-space field ``b(x, v) = (v, E(x))`` of a charge measure.

    The force is the gradient-of-potential convolution ``E = coupling *
    grad_kernel * rho``; with ``eta > 0`` the charge is mollified first and E
    solved spectrally, otherwise atoms superpose the free-space kernel
    directly.  The returned structure encodes ``D_x E`` as singular kernels
    acting on the (possibly mollified) charge and ``D_v(v) = Id`` through the
    identity kernel, so the x-block carries the measure-regularity entries.

    Both components depend on a single block, so the phase-space values are
    broadcast views of the x-grid force field and the velocity coordinates,
    and trajectory evaluation interpolates the force on the x grid alone
    (identical to multilinear interpolation of the product field).
    """
    xg = rho.grid
    n = xg.ndim
    if n not in (1, 2):
        raise FlowError("vlasov fields support position dimension 1 or 2")
    vg = Grid(n, 0, (v_half_width,) * n, (v_points,) * n)
    grid = product_grid(xg, vg)

    charge = mollify_measure(rho, eta) if eta > 0 else rho
    if eta > 0:
        e_field = GridFunction(xg, _spectral_field(charge.density, coupling))
    else:
        e_field = poisson_field_free_space(charge, coupling)

    coords = grid.coords()
    comps = []
    for a in range(n):
        comps.append(np.broadcast_to(coords[n + a], grid.shape))     # b_x = v
    for a in range(n):
        shape = xg.shape + (1,) * n
        e_a = e_field.values[a] if e_field.ncomp > 1 else e_field.values
        comps.append(np.broadcast_to(e_a.reshape(shape), grid.shape))
    b = GridFunction(grid, np.stack(comps))

    structure = vlasov_structure(charge, coupling, vg, grid)
    label = name or f"vlasov(eta={eta:g})"

    e_gf = (e_field if e_field.ncomp > 1
            else GridFunction(xg, e_field.values[None] if e_field.values.ndim == xg.ndim
                              else e_field.values, e_field.mask))

    def evaluator(positions, t):
        out = np.empty_like(positions)
        out[:, :n] = positions[:, n:]
        ex = interpolate(e_gf, positions[:, :n])
        out[:, n:] = ex if ex.ndim == 2 else ex[:, None]
        return out

    return make_split_field(grid, [b], structure=structure, name=label,
                            evaluator=evaluator)


def structure_consistency(field: SplitVectorField, margin: int = 2,
                          exclude_x1: np.ndarray | None = None) -> float:
    """Max deviation between central differences of the field and the structure's
    reconstructed derivative, away from box edges and measure supports.

    ``exclude_x1``: optional boolean node mask on the x1 block marking data
    supports (e.g. a neighbourhood of mollified atoms) to skip — finite
    differences cannot resolve the field there.
    """
    if field.structure is None:
        raise FlowError("field carries no derivative structure")
    grid = field.grid
    b = field.slices[0]
    worst = 0.0
    recon: dict[tuple[int, int], np.ndarray] = {}
    excluded = np.zeros(grid.shape, dtype=bool)
    if exclude_x1 is not None:
        excluded |= np.broadcast_to(
            exclude_x1.reshape(exclude_x1.shape + (1,) * grid.n2), grid.shape)
    for t in field.structure.terms:
        f1 = apply_to_measure(t.kernel, t.datum)
        shape1 = f1.grid.shape + (1,) * grid.n2
        shape2 = (1,) * grid.n1 + t.gamma.grid.shape
        entry = f1.values.reshape(shape1) * t.gamma.values.reshape(shape2)
        key = (t.i, t.j)
        recon[key] = recon.get(key, 0.0) + entry
        if f1.mask is not None:
            excluded |= np.broadcast_to(f1.mask.reshape(shape1), grid.shape)
    interior = np.ones(grid.shape, dtype=bool)
    for a in range(grid.ndim):
        sl = [slice(None)] * grid.ndim
        sl[a] = slice(margin, -margin)
        keep = np.zeros(grid.shape, dtype=bool)
        keep[tuple(sl)] = True
        interior &= keep
    interior &= ~excluded
    for (i, j), entry in recon.items():
        fd = np.gradient(b.values[i], grid.axis_coords(j), axis=j, edge_order=2)
        worst = max(worst, float(np.max(np.abs((fd - entry)[interior]))))
    return worst


FIELD_REGISTRY = ("zero", "rotation", "dilation", "shear", "drift", "sincos", "vlasov")
