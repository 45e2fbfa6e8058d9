"""Named test objects shared by the command-line pipelines and the test suite."""

from __future__ import annotations

import numpy as np

from .grid import Grid, GridFunction, product_grid, sample
from .maximal import BUMP_REGISTRY
from .singular import KERNEL_REGISTRY, SignedMeasure, measure_from_atoms
from .flow import FIELD_REGISTRY, SplitVectorField, builtin_field, vlasov_field


def unit_interval_grid(points: int = 4096) -> Grid:
    """The (0, 1) line used by the weak-norm and interpolation fixtures."""
    return Grid(1, 0, (0.5,), (points,), (0.5,))


def inverse_sqrt(points: int = 4096) -> GridFunction:
    """x^(-1/2) on (0, 1): integrable, weak-L1 borderline, clamped at the origin."""
    grid = unit_interval_grid(points)
    return sample(lambda x: np.abs(x) ** -0.5, grid, singularities=[(0.0,)])


def interval_indicator(points: int = 4096, half_width: float = 4.0) -> GridFunction:
    grid = Grid(1, 0, (half_width,), (points,))
    return sample(lambda x: np.where(np.abs(x) <= 1.0, 1.0, 0.0), grid)


def band_limited_indicator(points: int = 4096, half_width: float = 128.0) -> GridFunction:
    """The grid's trigonometric projection of 1_{[-1,1]}.

    For spectral-operator oracles this is the canonical discrete
    representation of the indicator: the transform of the projection equals
    the projection of the transform, so the jump carries no sampling-phase
    artifact.
    """
    grid = Grid(1, 0, (half_width,), (points,))
    n = points
    length = 2.0 * half_width
    modes = np.fft.fftfreq(n, d=1.0 / n)
    with np.errstate(invalid="ignore", divide="ignore"):
        coeff = (2.0 / length) * np.sin(2.0 * np.pi * modes / length) / (2.0 * np.pi * modes / length)
    coeff[0] = 2.0 / length
    phase = np.exp(1j * 2.0 * np.pi * modes * (-half_width) / length)
    values = np.fft.ifft(coeff * phase * n).real
    return GridFunction(grid, values)


def split_grid(points: int = 128, half_width: float = np.pi) -> Grid:
    """The 1+1 split box used by the difference-quotient fixtures."""
    block = Grid(1, 0, (half_width,), (points,))
    return product_grid(block, block)


def three_atom_charge(points: int = 128) -> SignedMeasure:
    """Three point charges of total mass 0.05 on the planar box."""
    xg = Grid(2, 0, (3.0, 3.0), (points, points))
    return measure_from_atoms(xg, [[0.5, 0.0], [-0.4, 0.3], [0.1, -0.5]],
                              [0.02, 0.02, 0.01])


MEASURE_REGISTRY = ("delta0", "three_atoms", "dipole")


def get_measure(name: str, grid: Grid) -> SignedMeasure:
    if name == "delta0":
        return measure_from_atoms(grid, np.zeros((1, grid.ndim)), [1.0])
    if name == "dipole":
        loc = np.zeros((2, grid.ndim))
        loc[1, 0] = 1.0
        return measure_from_atoms(grid, loc, [1.0, -1.0])
    if name == "three_atoms":
        if grid.ndim != 2:
            raise ValueError("three_atoms lives on a planar grid")
        return measure_from_atoms(grid, [[0.5, 0.0], [-0.4, 0.3], [0.1, -0.5]],
                                  [0.02, 0.02, 0.01])
    raise ValueError(f"unknown measure fixture {name!r}")


def catalog() -> dict[str, tuple[str, ...]]:
    """Deterministic fixture catalog: kernels, bump families, fields, measures."""
    return {
        "kernels": tuple(sorted(KERNEL_REGISTRY)),
        "bumps": tuple(sorted(BUMP_REGISTRY)),
        "fields": tuple(sorted(FIELD_REGISTRY)),
        "measures": tuple(sorted(MEASURE_REGISTRY)),
    }
