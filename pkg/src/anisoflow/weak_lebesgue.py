"""Weak Lebesgue quasinorms, the M^1/M^p interpolation bound, and equi-integrable splits.

The weak quasinorm is ``|||u|||_{M^p} = (sup_l l^p * measure{|u| > l})^(1/p)``.
On a grid function the supremum is attained at a jump of the empirical
distribution function, so scanning the distinct node values computes it
exactly; no lambda resolution parameter is involved.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .grid import FULL, GridFunction, Region, ball, lebesgue_norm


@dataclass(frozen=True)
class WeakNormReport:
    """Result of a weak-norm scan: the quasinorm, a maximizing threshold, and
    samples of the (non-increasing) distribution function."""

    p: float
    value: float
    argmax_lambda: float
    distribution_samples: tuple[tuple[float, float], ...]

    def csv_row(self) -> str:
        return f"{self.p!r},{self.value!r},{self.argmax_lambda!r}"


def weak_norm(u: GridFunction, p: float, region: Region = FULL,
              max_samples: int = 64) -> WeakNormReport:
    """Exact weak-L^p quasinorm of a grid function over a region.

    For p = inf this is the L^inf norm.  The scan evaluates
    ``v * measure{|u| >= v}^(1/p)`` at every distinct node value ``v``, which
    realizes the supremum over all thresholds for a piecewise-constant field.
    """
    if p < 1:
        raise ValueError(f"weak norm exponent must satisfy p >= 1, got {p}")
    ind = region.indicator(u.grid)
    if u.mask is not None:
        ind = ind & ~u.mask
    if not np.any(ind):
        raise ValueError("weak_norm over an empty region")
    vals = u.magnitude()[ind]
    if np.isinf(p):
        v = float(np.max(vals))
        return WeakNormReport(p, v, v, ((v, 0.0),))

    cm = u.grid.cell_measure
    order = np.argsort(vals)[::-1]
    sorted_vals = vals[order]
    if sorted_vals[0] == 0.0:
        return WeakNormReport(p, 0.0, 0.0, ((0.0, 0.0),))
    # cumulative measure{|u| >= v} at the last occurrence of each distinct value
    csum = cm * np.arange(1, sorted_vals.size + 1)
    keep = np.ones(sorted_vals.size, dtype=bool)
    keep[:-1] = sorted_vals[:-1] != sorted_vals[1:]
    distinct = sorted_vals[keep]
    meas_ge = csum[keep]
    pos = distinct > 0
    distinct, meas_ge = distinct[pos], meas_ge[pos]

    scores = distinct * meas_ge ** (1.0 / p)
    best = int(np.argmax(scores))
    # report rows carry the strict-superlevel distribution measure{|u| > v_k},
    # which for descending distinct values is the >=-measure of the next larger one
    meas_gt = np.concatenate([[0.0], meas_ge[:-1]])

    step = max(1, distinct.size // max_samples)
    samples = tuple((float(v), float(m)) for v, m in
                    zip(distinct[::step][::-1], meas_gt[::step][::-1]))
    return WeakNormReport(p, float(scores[best]), float(distinct[best]), samples)


def weak_norm_samples(values: np.ndarray, weights: np.ndarray, p: float) -> float:
    """Weak quasinorm of a weighted sample set (values with attached measures).

    Same distribution-function scan as :func:`weak_norm`, for data that do
    not live on a grid (e.g. seed-and-time samples along trajectories).
    """
    if p < 1:
        raise ValueError(f"weak norm exponent must satisfy p >= 1, got {p}")
    vals = np.abs(np.asarray(values, dtype=float)).ravel()
    wts = np.asarray(weights, dtype=float).ravel()
    if np.isinf(p):
        return float(np.max(vals)) if vals.size else 0.0
    order = np.argsort(vals)[::-1]
    sv, sw = vals[order], wts[order]
    if sv.size == 0 or sv[0] == 0.0:
        return 0.0
    csum = np.cumsum(sw)
    keep = np.ones(sv.size, dtype=bool)
    keep[:-1] = sv[:-1] != sv[1:]
    distinct, meas_ge = sv[keep], csum[keep]
    pos = distinct > 0
    return float(np.max(distinct[pos] * meas_ge[pos] ** (1.0 / p)))


@dataclass(frozen=True)
class InterpolationBound:
    value: float
    log_clamped: bool

    def __float__(self) -> float:
        return self.value


def interpolation_bound(m1: float, mp: float, p: float,
                        region_measure: float) -> InterpolationBound:
    """L^1 bound from the M^1 and M^p quasinorms on a finite-measure region.

    Returns ``p/(p-1) * m1 * [1 + log(mp * measure^(1-1/p) / m1)]`` for finite
    p and ``m1 * [1 + log(mp * measure / m1)]`` for p = inf.  A log argument
    below 1 is clamped to 0 (the bracket stays >= 1) and flagged: the bound
    remains valid, only less sharp, in that regime.
    """
    if p <= 1:
        raise ValueError(f"interpolation needs p > 1, got {p}")
    if region_measure <= 0:
        raise ValueError("region measure must be positive")
    if m1 <= 0:
        if mp > 0:
            raise ValueError("interpolation bound undefined for m1 <= 0 with mp > 0")
        return InterpolationBound(0.0, False)
    if np.isinf(p):
        lead, arg = m1, mp * region_measure / m1
    else:
        lead = p / (p - 1.0) * m1
        arg = mp * region_measure ** (1.0 - 1.0 / p) / m1
    clamped = arg < 1.0
    return InterpolationBound(lead * (1.0 + max(0.0, math.log(arg))), clamped)


@dataclass(frozen=True)
class InterpolationCheck:
    lhs: float
    rhs: float
    holds: bool
    log_clamped: bool
    tolerance: float


def verify_interpolation(u: GridFunction, p: float,
                         region: Region = FULL) -> InterpolationCheck:
    """Check ``||u||_L1 <= (M^1/M^p interpolation bound)`` on a grid function.

    Both sides are computed from the same node set (quadrature L^1 vs the
    distribution-function scan), so the inequality is exact for the sampled
    step function; the tolerance of three spacing widths only absorbs float
    round-off and keeps the check meaningful under refinement.
    """
    lhs = lebesgue_norm(u, 1, region)
    m1 = weak_norm(u, 1, region).value
    mp = (lebesgue_norm(u, np.inf, region) if np.isinf(p)
          else weak_norm(u, p, region).value)
    ind = region.indicator(u.grid)
    if u.mask is not None:
        ind = ind & ~u.mask
    measure = float(np.count_nonzero(ind)) * u.grid.cell_measure
    if m1 == 0.0:
        return InterpolationCheck(lhs, 0.0, lhs <= 1e-300, False, 0.0)
    bound = interpolation_bound(m1, mp, p, measure)
    tol = 3.0 * max(u.grid.spacing)
    holds = lhs <= bound.value * (1.0 + tol) + 1e-12
    return InterpolationCheck(lhs, bound.value, bool(holds), bound.log_clamped, tol)


@dataclass(frozen=True)
class EquiSplit:
    """Decomposition u = u1 + u2 with small-L^1 part u1 and a bounded,
    compactly supported part u2 (support inside ``support_region``,
    ``|u2| <= value_cut`` and ``||u2||_p <= C_epsilon``)."""

    u1: GridFunction
    u2: GridFunction
    support_region: Region
    epsilon: float
    C_epsilon: float
    value_cut: float
    degenerate: bool


def equi_split(u: GridFunction, epsilon: float, p: float) -> EquiSplit:
    """Split off an epsilon-small L^1 part by truncating far mass and tall values.

    ``u2 = u * 1_A * 1_{|u| <= M}`` with A the smallest centered ball whose
    exterior carries at most epsilon/2 of the L^1 mass and M the smallest node
    value whose exceedance mass is at most epsilon/2; then ``||u1||_1 <=
    epsilon``.  If epsilon already exceeds ``||u||_1`` the split degenerates to
    u1 = u, u2 = 0 (flagged).
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    if p <= 1:
        raise ValueError("equi_split needs p > 1")
    grid = u.grid
    cm = grid.cell_measure
    mag = u.magnitude()
    if u.mask is not None:
        mag = np.where(u.mask, 0.0, mag)
    total = float(np.sum(mag)) * cm
    max_radius = float(np.sqrt(sum(w**2 for w in grid.half_widths)))

    if epsilon >= total:
        zero = GridFunction(grid, np.zeros_like(u.values), u.mask)
        return EquiSplit(u, zero, ball(max_radius), epsilon, 0.0,
                         float(np.max(mag)), True)

    half = 0.5 * epsilon
    coords = grid.coords()
    dist = np.sqrt(sum((x - c) ** 2 for x, c in zip(coords, grid.centers)))
    dist = np.broadcast_to(dist, grid.shape)

    flat_mass = (mag * cm).ravel()
    order = np.argsort(dist.ravel())[::-1]      # far nodes first
    tail = np.cumsum(flat_mass[order])
    cut = int(np.searchsorted(tail, half, side="right"))
    radius = max_radius if cut == 0 else float(dist.ravel()[order[cut - 1]])
    radius = max(radius, min(grid.spacing))

    vorder = np.argsort(mag.ravel())[::-1]      # tall values first
    vtail = np.cumsum(flat_mass[vorder])
    vcut = int(np.searchsorted(vtail, half, side="right"))
    value_cut = float(np.max(mag)) if vcut == 0 else float(mag.ravel()[vorder[vcut - 1]])

    region = ball(radius)
    keep = (dist <= radius) & (mag <= value_cut)
    if u.ncomp > 1:
        keep_v = np.broadcast_to(keep, u.values.shape)
    else:
        keep_v = keep
    u2 = GridFunction(grid, np.where(keep_v, u.values, 0.0), u.mask)
    u1 = GridFunction(grid, u.values - u2.values, u.mask)
    c_eps = lebesgue_norm(u2, p)
    return EquiSplit(u1, u2, region, epsilon, c_eps, value_cut, False)
