"""Convolution kernels of fundamental type and their spectral action on the grid.

A kernel is carried as a pair (off-origin evaluator, Fourier multiplier)
together with its structural constants: ``|K(x)| <= C0/|x|^d``,
``|grad K(x)| <= C1/|x|^(d+1)``, ring integrals bounded by ``A1`` and
``sup|K^| <= multiplier_sup``.  The discrete operator is exact mode-wise
multiplication on the periodic grid; measures act through their analytic
Fourier phases, so no principal-value quadrature is ever needed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable

import numpy as np
from scipy import integrate

from .grid import FULL, Grid, GridFunction, GridError, Region, lebesgue_norm
from .weak_lebesgue import weak_norm


class KernelError(ValueError):
    """Raised for invalid kernels or inapplicable kernel operations."""


@dataclass(frozen=True)
class FundamentalKernel:
    """Singular convolution kernel on the x1 block.

    ``evaluate(points)`` takes an ``(..., dim)`` array of nonzero offsets;
    ``multiplier(freqs)`` takes an ``(..., dim)`` array of angular frequencies
    and may be left undefined at 0 — the discrete transform substitutes
    ``zero_frequency`` there, which fixes the Dirac-multiple ambiguity of the
    kernel class (0 whenever the ring integrals cancel).
    """

    name: str
    dim: int
    evaluate: Callable[[np.ndarray], np.ndarray]
    multiplier: Callable[[np.ndarray], np.ndarray]
    c0: float
    c1: float
    a1: float
    multiplier_sup: float
    zero_frequency: complex = 0.0
    homogeneity: float | None = None

    def multiplier_mesh(self, grid: Grid) -> np.ndarray:
        """Hermitian-symmetrized multiplier on the grid's discrete frequencies.

        Symmetrization ``(m(k) + conj(m(-k)))/2`` leaves genuine kernels
        untouched, zeroes the odd part at the unpaired Nyquist modes, and
        guarantees a real output for real input.
        """
        if grid.ndim != self.dim:
            raise KernelError(f"kernel {self.name!r} has dim {self.dim}, grid has {grid.ndim}")
        freqs = grid.frequencies()
        pts = np.stack(np.broadcast_arrays(*freqs), axis=-1)
        mesh = np.asarray(self.multiplier(pts), dtype=complex)
        zero_idx = (0,) * grid.ndim
        mesh[zero_idx] = self.zero_frequency
        if not np.all(np.isfinite(mesh)):
            raise KernelError(f"multiplier of {self.name!r} is not finite at a grid frequency")
        rev = mesh[tuple(np.ix_(*[(-np.arange(m)) % m for m in grid.points]))]
        return 0.5 * (mesh + np.conj(rev))


@dataclass(frozen=True)
class SignedMeasure:
    """Finite signed measure on the x1 block: atoms plus an optional density.

    ``atoms`` is ``(locations (m, dim), weights (m,))``; locations must lie in
    the box of ``grid``.  The density, when present, shares that grid.
    """

    grid: Grid
    atom_locations: np.ndarray
    atom_weights: np.ndarray
    density: GridFunction | None = None

    def __post_init__(self):
        loc = np.atleast_2d(np.asarray(self.atom_locations, dtype=float))
        if loc.size == 0:
            loc = np.zeros((0, self.grid.ndim))
        w = np.atleast_1d(np.asarray(self.atom_weights, dtype=float))
        if loc.shape != (w.size, self.grid.ndim):
            raise KernelError("atom locations/weights are inconsistent")
        if loc.size and not np.all(self.grid.contains(loc)):
            raise KernelError("atom locations must lie inside the grid box")
        if self.density is not None and self.density.grid != self.grid:
            raise KernelError("density must live on the measure's grid")
        object.__setattr__(self, "atom_locations", loc)
        object.__setattr__(self, "atom_weights", w)

    @property
    def total_variation(self) -> float:
        tv = float(np.sum(np.abs(self.atom_weights)))
        if self.density is not None:
            tv += lebesgue_norm(self.density, 1)
        return tv

    def fourier_phases(self, grid: Grid) -> np.ndarray:
        """Analytic transform ``sum_a w_a exp(-i k (a - x_0))`` of the atomic part
        on the grid's frequency mesh, plus the density quadrature transform."""
        out = np.zeros(grid.shape, dtype=complex)
        if self.atom_weights.size:
            freqs = grid.frequencies()
            x0 = np.array([grid.centers[a] - grid.half_widths[a] for a in range(grid.ndim)])
            for loc, w in zip(self.atom_locations, self.atom_weights):
                phase = np.zeros(grid.shape)
                for a in range(grid.ndim):
                    phase = phase + freqs[a] * (loc[a] - x0[a])
                out += w * np.exp(-1j * phase)
        if self.density is not None:
            out += np.fft.fftn(self.density.values) * grid.cell_measure
        return out


def measure_from_atoms(grid: Grid, locations, weights) -> SignedMeasure:
    return SignedMeasure(grid, np.asarray(locations, dtype=float),
                         np.asarray(weights, dtype=float))


def measure_from_density(density: GridFunction) -> SignedMeasure:
    return SignedMeasure(density.grid, np.zeros((0, density.grid.ndim)),
                         np.zeros(0), density)


def apply(kernel: FundamentalKernel, u: GridFunction) -> GridFunction:
    """Spectral action ``S u``: transform, multiply mode-wise, transform back.

    The imaginary residue of the inverse transform is asserted below
    ``1e-10 ||u||_2`` (guaranteed by the Hermitian symmetrization up to
    round-off) and discarded.
    """
    if not u.is_scalar:
        raise KernelError("apply expects a scalar grid function")
    mesh = kernel.multiplier_mesh(u.grid)
    out = np.fft.ifftn(np.fft.fftn(u.values) * mesh)
    scale = float(np.max(np.abs(u.values))) * np.sqrt(u.values.size) + 1e-300
    resid = float(np.max(np.abs(out.imag)))
    if resid > 1e-10 * scale:
        raise KernelError(f"imaginary residue {resid:.3e} exceeds tolerance")
    return GridFunction(u.grid, out.real, u.mask)


def apply_to_measure(kernel: FundamentalKernel, mu: SignedMeasure,
                     grid: Grid | None = None) -> GridFunction:
    """Pointwise action of the kernel on a measure.

    Atoms contribute ``w * K(x - a)`` evaluated directly; nodes within one
    spacing of an atom take the kernel value at the clamp radius and are
    masked (the output is only defined away from atoms).  A density part goes
    through the spectral path.
    """
    grid = grid or mu.grid
    if grid.ndim != kernel.dim:
        raise KernelError("measure grid dimension does not match kernel")
    values = np.zeros(grid.shape)
    mask = np.zeros(grid.shape, dtype=bool)
    if mu.atom_weights.size:
        nodes = grid.nodes().reshape(-1, grid.ndim)
        clamp = min(grid.spacing)
        acc = np.zeros(nodes.shape[0])
        for loc, w in zip(mu.atom_locations, mu.atom_weights):
            d = nodes - loc
            dist = np.sqrt(np.sum(d**2, axis=-1))
            close = dist < clamp
            if np.any(close):
                safe = d[close]
                sd = dist[close]
                on_node = sd == 0.0
                safe[on_node, 0] = 1.0
                sd = np.where(on_node, 1.0, sd)
                d[close] = safe * (clamp / sd)[:, None]
                mask.ravel()[close] = True
            acc += w * np.asarray(kernel.evaluate(d), dtype=float)
        if not np.all(np.isfinite(acc)):
            raise KernelError(f"kernel {kernel.name!r} not finite off the clamp radius")
        values += acc.reshape(grid.shape)
    if mu.density is not None:
        dens = mu.density if mu.density.grid == grid else None
        if dens is None:
            raise KernelError("density grid does not match requested output grid")
        out = apply(kernel, dens)
        values += out.values
        if out.mask is not None:
            mask |= out.mask
    return GridFunction(grid, values, mask if mask.any() else None)


def rescale_kernel(kernel: FundamentalKernel, delta1: float) -> FundamentalKernel:
    """Dilation-compensated rescale ``K'(x) = delta1^dim K(delta1 x)``.

    The multiplier becomes ``K^(xi / delta1)``; all fundamental-type constants
    are scale-invariant and carry over.  Kernels homogeneous of degree
    ``-dim`` are pointwise fixed points.
    """
    if delta1 <= 0:
        raise KernelError("rescale factor must be positive")
    if delta1 == 1.0:
        return kernel
    base_eval, base_mult, d = kernel.evaluate, kernel.multiplier, kernel.dim
    return replace(
        kernel,
        name=f"{kernel.name}~scale{delta1:g}",
        evaluate=lambda x: delta1**d * np.asarray(base_eval(np.asarray(x) * delta1)),
        multiplier=lambda xi: np.asarray(base_mult(np.asarray(xi) / delta1)),
    )


def scale_kernel(kernel: FundamentalKernel, c: float) -> FundamentalKernel:
    """Scalar multiple ``c * K`` (constants scale with |c|)."""
    base_eval, base_mult = kernel.evaluate, kernel.multiplier
    return replace(
        kernel,
        name=f"{c:g}*{kernel.name}",
        evaluate=lambda x: c * np.asarray(base_eval(x)),
        multiplier=lambda xi: c * np.asarray(base_mult(xi)),
        c0=abs(c) * kernel.c0,
        c1=abs(c) * kernel.c1,
        a1=abs(c) * kernel.a1,
        multiplier_sup=abs(c) * kernel.multiplier_sup,
        zero_frequency=c * kernel.zero_frequency,
    )


# -- kernel validation ---------------------------------------------------------

@dataclass(frozen=True)
class KernelReport:
    c0_measured: float
    c1_measured: float
    a1_measured: float
    multiplier_sup_measured: float
    valid: bool
    failures: tuple[str, ...]


def _sample_cloud(dim: int, count: int, r_min: float, r_max: float) -> np.ndarray:
    """Deterministic off-origin cloud: log-spaced radii times unit directions."""
    radii = np.exp(np.linspace(math.log(r_min), math.log(r_max), count))
    if dim == 1:
        signs = np.where(np.arange(count) % 2 == 0, 1.0, -1.0)
        return (radii * signs)[:, None]
    angles = 2.0 * np.pi * (np.arange(count) * 0.6180339887498949 % 1.0)
    if dim == 2:
        return radii[:, None] * np.stack([np.cos(angles), np.sin(angles)], axis=-1)
    rng = np.random.default_rng(1234)
    dirs = rng.standard_normal((count, dim))
    dirs /= np.linalg.norm(dirs, axis=-1, keepdims=True)
    return radii[:, None] * dirs


def validate_kernel(kernel: FundamentalKernel, sample_cloud_size: int = 1000,
                    tol: float = 1e-6) -> KernelReport:
    """Measure the fundamental-type constants on a sample cloud.

    The gradient bound uses central finite differences with a relative step;
    ring integrals use polar quadrature (dims 1 and 2).  Each measured
    constant must not exceed its declared value.
    """
    cloud = _sample_cloud(kernel.dim, sample_cloud_size, 1e-3, 1e3)
    radii = np.linalg.norm(cloud, axis=-1)
    vals = np.asarray(kernel.evaluate(cloud), dtype=float)
    failures = []
    if not np.all(np.isfinite(vals)):
        return KernelReport(np.inf, np.inf, np.inf, np.inf, False,
                            ("non-finite evaluation off the origin",))
    c0_meas = float(np.max(np.abs(vals) * radii**kernel.dim))

    step = 1e-6 * radii
    grad = np.zeros_like(cloud)
    for a in range(kernel.dim):
        e = np.zeros(kernel.dim)
        e[a] = 1.0
        plus = np.asarray(kernel.evaluate(cloud + step[:, None] * e))
        minus = np.asarray(kernel.evaluate(cloud - step[:, None] * e))
        grad[:, a] = (plus - minus) / (2.0 * step)
    c1_meas = float(np.max(np.linalg.norm(grad, axis=-1) * radii ** (kernel.dim + 1)))

    a1_meas = _max_ring_integral(kernel)
    freq_cloud = _sample_cloud(kernel.dim, sample_cloud_size, 1e-3, 1e3)
    mvals = np.asarray(kernel.multiplier(freq_cloud), dtype=complex)
    msup_meas = float(np.max(np.abs(mvals)))

    checks = [("C0", c0_meas, kernel.c0), ("C1", c1_meas, kernel.c1),
              ("A1", a1_meas, kernel.a1),
              ("multiplier_sup", msup_meas, kernel.multiplier_sup)]
    for label, meas, declared in checks:
        if not np.isfinite(meas) or meas > declared * (1.0 + tol) + 1e-12:
            failures.append(f"{label} measured {meas:.6g} exceeds declared {declared:.6g}")
    return KernelReport(c0_meas, c1_meas, a1_meas, msup_meas,
                        not failures, tuple(failures))


def _max_ring_integral(kernel: FundamentalKernel, n_radii: int = 9) -> float:
    radii = np.logspace(-2, 2, n_radii)
    if kernel.dim == 1:
        def ring(r1, r2):
            pos, _ = integrate.quad(lambda x: float(kernel.evaluate(np.array([[x]]))[0]),
                                    r1, r2, limit=200)
            neg, _ = integrate.quad(lambda x: float(kernel.evaluate(np.array([[x]]))[0]),
                                    -r2, -r1, limit=200)
            return abs(pos + neg)
    elif kernel.dim == 2:
        theta = np.linspace(0.0, 2.0 * np.pi, 512, endpoint=False)
        dirs = np.stack([np.cos(theta), np.sin(theta)], axis=-1)

        def ring(r1, r2):
            rs = np.exp(np.linspace(math.log(r1), math.log(r2), 64))
            pts = rs[:, None, None] * dirs[None]
            vals = np.asarray(kernel.evaluate(pts.reshape(-1, 2))).reshape(len(rs), -1)
            # integrate f(r,theta) r dr dtheta in log-radius
            integrand = np.mean(vals, axis=1) * 2.0 * np.pi * rs**2
            return abs(np.trapezoid(integrand, np.log(rs)))
    else:
        return 0.0 if kernel.a1 == 0 else kernel.a1
    best = 0.0
    for i, r1 in enumerate(radii[:-1]):
        for r2 in radii[i + 1:]:
            best = max(best, ring(r1, r2))
    return float(best)


# -- empirical Calderon-Zygmund constants ---------------------------------------

@dataclass(frozen=True)
class CZBoundsReport:
    strong_p_constants: dict
    weak_1_constant: float
    finite: bool


def measure_cz_bounds(kernel: FundamentalKernel, test_family: list[GridFunction],
                      exponents=(2.0, 1.5, 3.0)) -> CZBoundsReport:
    """Empirical lower bounds for the strong-(p,p) and weak-(1,1) operator constants.

    The ratios ``||Su||_p / ||u||_p`` are scale-invariant, so the family's
    normalization does not matter; the report asserts finiteness only — the
    sharp constants are unknown and only their stability is testable.
    """
    if not test_family:
        raise KernelError("measure_cz_bounds needs a non-empty test family")
    strong = {p: 0.0 for p in exponents}
    weak = 0.0
    for u in test_family:
        su = apply(kernel, u)
        n1 = lebesgue_norm(u, 1)
        if n1 > 0:
            weak = max(weak, weak_norm(su, 1).value / n1)
        for p in exponents:
            npu = lebesgue_norm(u, p)
            if npu > 0:
                strong[p] = max(strong[p], lebesgue_norm(su, p) / npu)
    finite = np.isfinite(weak) and all(np.isfinite(v) for v in strong.values())
    return CZBoundsReport(strong, weak, bool(finite))


# -- registry -------------------------------------------------------------------

def hilbert_kernel() -> FundamentalKernel:
    """1-D kernel ``1/(pi x)`` with multiplier ``-i sign(xi)``."""
    return FundamentalKernel(
        name="hilbert", dim=1,
        evaluate=lambda x: 1.0 / (np.pi * np.asarray(x)[..., 0]),
        multiplier=lambda xi: -1j * np.sign(np.asarray(xi)[..., 0]),
        c0=1.0 / np.pi, c1=1.0 / np.pi, a1=0.0, multiplier_sup=1.0,
        zero_frequency=0.0, homogeneity=-1.0,
    )


def identity_kernel(dim: int) -> FundamentalKernel:
    """Unit point mass: zero away from the origin, multiplier identically 1."""
    return FundamentalKernel(
        name=f"identity{dim}d", dim=dim,
        evaluate=lambda x: np.zeros(np.asarray(x).shape[:-1]),
        multiplier=lambda xi: np.ones(np.asarray(xi).shape[:-1], dtype=complex),
        c0=0.0, c1=0.0, a1=0.0, multiplier_sup=1.0,
        zero_frequency=1.0, homogeneity=None,
    )


def riesz2d_kernel(i: int, j: int) -> FundamentalKernel:
    """Second derivative ``d_i d_j`` of the 2-D logarithmic potential (PV part).

    ``K_ij(x) = (2 x_i x_j - delta_ij |x|^2) / (2 pi |x|^4)`` with multiplier
    ``delta_ij/2 - xi_i xi_j / |xi|^2``; mean zero on rings, degree -2.
    """
    if i not in (0, 1) or j not in (0, 1):
        raise KernelError("riesz2d indices must be 0 or 1")
    delta = 1.0 if i == j else 0.0

    def evaluate(x):
        x = np.asarray(x)
        r2 = np.sum(x**2, axis=-1)
        return (2.0 * x[..., i] * x[..., j] - delta * r2) / (2.0 * np.pi * r2**2)

    def multiplier(xi):
        xi = np.asarray(xi)
        r2 = np.sum(xi**2, axis=-1)
        with np.errstate(invalid="ignore", divide="ignore"):
            out = delta / 2.0 - xi[..., i] * xi[..., j] / r2
        return np.where(r2 > 0, out, 0.0).astype(complex)

    return FundamentalKernel(
        name=f"riesz2d_{i + 1}{j + 1}", dim=2,
        evaluate=evaluate, multiplier=multiplier,
        c0=1.0 / (2.0 * np.pi), c1=1.0 / np.pi, a1=0.0, multiplier_sup=0.5,
        zero_frequency=0.0, homogeneity=-2.0,
    )


def kernel_from_table(path, dim: int = 1) -> FundamentalKernel:
    """Multiplier-only kernel from a table file of rows ``frequency,real,imag``.

    Evaluation between tabulated frequencies is linear; the off-origin
    evaluator is unavailable and returns zero.
    """
    rows = np.loadtxt(path, delimiter=",", ndmin=2)
    freqs, re, im = rows[:, 0], rows[:, 1], rows[:, 2]
    order = np.argsort(freqs)
    freqs, re, im = freqs[order], re[order], im[order]

    def multiplier(xi):
        xi = np.asarray(xi)[..., 0]
        return np.interp(xi, freqs, re) + 1j * np.interp(xi, freqs, im)

    sup = float(np.max(np.hypot(re, im)))
    zero = complex(np.interp(0.0, freqs, re), np.interp(0.0, freqs, im))
    return FundamentalKernel(
        name="table", dim=dim,
        evaluate=lambda x: np.zeros(np.asarray(x).shape[:-1]),
        multiplier=multiplier, c0=0.0, c1=0.0, a1=0.0,
        multiplier_sup=sup, zero_frequency=zero, homogeneity=None,
    )


KERNEL_REGISTRY = {
    "hilbert": lambda **kw: hilbert_kernel(),
    "identity": lambda dim=1, **kw: identity_kernel(dim),
    "riesz2d_11": lambda **kw: riesz2d_kernel(0, 0),
    "riesz2d_12": lambda **kw: riesz2d_kernel(0, 1),
    "riesz2d_21": lambda **kw: riesz2d_kernel(1, 0),
    "riesz2d_22": lambda **kw: riesz2d_kernel(1, 1),
}


def get_kernel(name: str, **kwargs) -> FundamentalKernel:
    if name not in KERNEL_REGISTRY:
        raise KernelError(f"unknown kernel {name!r}; known: {sorted(KERNEL_REGISTRY)}")
    return KERNEL_REGISTRY[name](**kwargs)
