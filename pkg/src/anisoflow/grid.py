"""Uniform periodic grids on a split box, sampling, quadrature and Lebesgue norms.

The computational domain is a periodic box ``prod_axis [c - w, c + w)`` whose
axes are split into two coordinate blocks of dimensions ``n1`` and ``n2``.
Every other module computes on :class:`GridFunction` values sampled at the
nodes of such a grid; integrals are midpoint sums with the cell measure
``prod(spacing)``.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field, replace

import numpy as np


class GridError(ValueError):
    """Raised for inconsistent grid construction or sampling failures."""


@dataclass(frozen=True)
class Grid:
    """Uniform periodic grid on a box split into an x1 and an x2 block.

    Axis ``a`` carries ``points[a]`` nodes at ``centers[a] - half_widths[a]
    + i * spacing[a]``; node 0 sits on the lower box edge so that midpoint
    cells wrap periodically.  ``n2 == 0`` is allowed for standalone block
    grids (1-D fixtures, x1-block data).
    """

    n1: int
    n2: int
    half_widths: tuple[float, ...]
    points: tuple[int, ...]
    centers: tuple[float, ...] = ()

    def __post_init__(self):
        if self.n1 < 1 or self.n2 < 0:
            raise GridError(f"need n1 >= 1 and n2 >= 0, got ({self.n1}, {self.n2})")
        n = self.n1 + self.n2
        if not self.centers:
            object.__setattr__(self, "centers", (0.0,) * n)
        if len(self.half_widths) != n or len(self.points) != n or len(self.centers) != n:
            raise GridError("per-axis tuples must have length n1 + n2")
        for w in self.half_widths:
            if not (w > 0):
                raise GridError(f"half width must be positive, got {w}")
        for m in self.points:
            if m < 2 or m % 2:
                raise GridError(f"points per axis must be even and >= 2, got {m}")

    @property
    def ndim(self) -> int:
        return self.n1 + self.n2

    @property
    def shape(self) -> tuple[int, ...]:
        return self.points

    @property
    def size(self) -> int:
        return int(np.prod(self.points))

    @property
    def spacing(self) -> tuple[float, ...]:
        return tuple(2.0 * w / m for w, m in zip(self.half_widths, self.points))

    @property
    def cell_measure(self) -> float:
        return float(np.prod(self.spacing))

    @property
    def block1_axes(self) -> tuple[int, ...]:
        return tuple(range(self.n1))

    @property
    def block2_axes(self) -> tuple[int, ...]:
        return tuple(range(self.n1, self.ndim))

    def axis_coords(self, axis: int) -> np.ndarray:
        w = self.half_widths[axis]
        h = self.spacing[axis]
        return self.centers[axis] - w + h * np.arange(self.points[axis])

    def coords(self) -> list[np.ndarray]:
        """Sparse meshgrid of node coordinates (one broadcastable array per axis)."""
        return list(np.meshgrid(*[self.axis_coords(a) for a in range(self.ndim)],
                                indexing="ij", sparse=True))

    def nodes(self) -> np.ndarray:
        """All nodes as an array of shape ``(*points, ndim)``."""
        dense = np.meshgrid(*[self.axis_coords(a) for a in range(self.ndim)], indexing="ij")
        return np.stack(dense, axis=-1)

    def displacement_coords(self) -> list[np.ndarray]:
        """Minimum-image displacements per axis, index j -> signed offset of node j from node 0."""
        out = []
        for a in range(self.ndim):
            h, w = self.spacing[a], self.half_widths[a]
            d = h * np.arange(self.points[a])
            out.append((d + w) % (2.0 * w) - w)
        return list(np.meshgrid(*out, indexing="ij", sparse=True))

    def frequencies(self) -> list[np.ndarray]:
        """Angular frequencies of the discrete spectral transform, per axis (sparse mesh)."""
        freqs = [2.0 * np.pi * np.fft.fftfreq(m, d=h)
                 for m, h in zip(self.points, self.spacing)]
        return list(np.meshgrid(*freqs, indexing="ij", sparse=True))

    def block1(self) -> "Grid":
        return Grid(self.n1, 0, self.half_widths[: self.n1], self.points[: self.n1],
                    self.centers[: self.n1])

    def block2(self) -> "Grid":
        if self.n2 == 0:
            raise GridError("grid has no x2 block")
        return Grid(self.n2, 0, self.half_widths[self.n1:], self.points[self.n1:],
                    self.centers[self.n1:])

    def contains(self, positions: np.ndarray) -> np.ndarray:
        """Boolean mask of positions (…, ndim) lying inside the box."""
        pos = np.asarray(positions, dtype=float)
        c = np.asarray(self.centers)
        w = np.asarray(self.half_widths)
        return np.all(np.abs(pos - c) <= w, axis=-1)


def product_grid(g1: Grid, g2: Grid) -> Grid:
    """Assemble the split grid with x1 block ``g1`` and x2 block ``g2``."""
    return Grid(g1.ndim, g2.ndim, g1.half_widths + g2.half_widths,
                g1.points + g2.points, g1.centers + g2.centers)


@dataclass(frozen=True)
class GridFunction:
    """Sampled field on a grid.

    ``values`` has shape ``grid.shape`` for scalars or ``(ncomp, *grid.shape)``
    for vector fields.  ``mask`` (optional, scalar shape) flags nodes whose
    value is a clamped placeholder (e.g. next to an atom of a measure); masked
    nodes are skipped by norms and verification loops.  Instances are
    immutable; all operations return new objects.
    """

    grid: Grid
    values: np.ndarray
    mask: np.ndarray | None = None

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape == self.grid.shape:
            pass
        elif v.ndim == self.grid.ndim + 1 and v.shape[1:] == self.grid.shape:
            pass
        else:
            raise GridError(f"value shape {v.shape} does not match grid shape {self.grid.shape}")
        if not np.all(np.isfinite(v)):
            raise GridError("grid function values must be finite")
        object.__setattr__(self, "values", v)
        if self.mask is not None:
            m = np.asarray(self.mask, dtype=bool)
            if m.shape != self.grid.shape:
                raise GridError("mask shape must match grid shape")
            object.__setattr__(self, "mask", m)

    @property
    def is_scalar(self) -> bool:
        return self.values.shape == self.grid.shape

    @property
    def ncomp(self) -> int:
        return 1 if self.is_scalar else self.values.shape[0]

    def magnitude(self) -> np.ndarray:
        """Pointwise |u| (Euclidean across components for vector fields)."""
        if self.is_scalar:
            return np.abs(self.values)
        return np.sqrt(np.sum(self.values**2, axis=0))

    def component(self, i: int) -> "GridFunction":
        if self.is_scalar:
            if i != 0:
                raise GridError("scalar field has a single component")
            return self
        return GridFunction(self.grid, self.values[i], self.mask)

    def __add__(self, other: "GridFunction") -> "GridFunction":
        _check_same_grid(self, other)
        return GridFunction(self.grid, self.values + other.values, _join_masks(self, other))

    def __sub__(self, other: "GridFunction") -> "GridFunction":
        _check_same_grid(self, other)
        return GridFunction(self.grid, self.values - other.values, _join_masks(self, other))

    def __mul__(self, c: float) -> "GridFunction":
        return GridFunction(self.grid, self.values * float(c), self.mask)

    __rmul__ = __mul__


def _check_same_grid(u: GridFunction, v: GridFunction):
    if u.grid != v.grid:
        raise GridError("grid functions live on different grids")


def _join_masks(u: GridFunction, v: GridFunction):
    if u.mask is None:
        return v.mask
    if v.mask is None:
        return u.mask
    return u.mask | v.mask


@dataclass(frozen=True)
class Region:
    """Subset of the box used for norms and seed sets.

    kind is one of ``ball`` (Euclidean ball of ``radius``), ``box`` (per-axis
    ``extents``), ``product_ball`` (ball of ``radius`` in each coordinate
    block separately) or ``all``.  ``center=None`` places the region at the
    grid's domain center.
    """

    kind: str
    radius: float | None = None
    extents: tuple[float, ...] | None = None
    center: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.kind not in ("ball", "box", "product_ball", "all"):
            raise GridError(f"unknown region kind {self.kind!r}")
        if self.kind in ("ball", "product_ball") and not (self.radius and self.radius > 0):
            raise GridError("ball regions need a positive radius")
        if self.kind == "box" and self.extents is None:
            raise GridError("box regions need per-axis extents")

    def indicator(self, grid: Grid) -> np.ndarray:
        """Boolean node mask of the region on ``grid``."""
        c = self.center if self.center is not None else grid.centers
        coords = grid.coords()
        if self.kind == "all":
            return np.ones(grid.shape, dtype=bool)
        if self.kind == "ball":
            r2 = sum((x - ci) ** 2 for x, ci in zip(coords, c))
            return np.asarray(r2 <= self.radius**2 + 0.0)
        if self.kind == "box":
            ind = np.ones(grid.shape, dtype=bool)
            for x, ci, e in zip(coords, c, self.extents):
                ind &= np.abs(x - ci) <= e
            return ind
        # product_ball: independent balls in each block
        r2_1 = sum((coords[a] - c[a]) ** 2 for a in grid.block1_axes)
        ind = np.asarray(r2_1 <= self.radius**2 + 0.0)
        if grid.n2:
            r2_2 = sum((coords[a] - c[a]) ** 2 for a in grid.block2_axes)
            ind = ind & (r2_2 <= self.radius**2)
        return np.broadcast_to(ind, grid.shape).copy()

    def contains_points(self, grid: Grid, positions: np.ndarray) -> np.ndarray:
        c = np.asarray(self.center if self.center is not None else grid.centers)
        pos = np.asarray(positions, dtype=float)
        if self.kind == "all":
            return np.ones(pos.shape[:-1], dtype=bool)
        if self.kind == "ball":
            return np.sum((pos - c) ** 2, axis=-1) <= self.radius**2
        if self.kind == "box":
            return np.all(np.abs(pos - c) <= np.asarray(self.extents), axis=-1)
        d1 = np.sum((pos[..., : grid.n1] - c[: grid.n1]) ** 2, axis=-1)
        ok = d1 <= self.radius**2
        if grid.n2:
            d2 = np.sum((pos[..., grid.n1:] - c[grid.n1:]) ** 2, axis=-1)
            ok &= d2 <= self.radius**2
        return ok

    def measure(self, grid: Grid) -> float:
        return float(np.count_nonzero(self.indicator(grid))) * grid.cell_measure


FULL = Region("all")


def ball(radius: float, center: tuple[float, ...] | None = None) -> Region:
    return Region("ball", radius=radius, center=center)


def product_ball(radius: float, center: tuple[float, ...] | None = None) -> Region:
    return Region("product_ball", radius=radius, center=center)


def sample(expr, grid: Grid, singularities=(), ncomp: int = 1) -> GridFunction:
    """Sample a pointwise expression at the grid nodes.

    ``expr`` receives one broadcastable coordinate array per axis and returns
    node values (for ``ncomp > 1`` a sequence of component arrays).  Nodes
    closer than half a cell to a listed singularity are moved radially out to
    distance ``min(spacing)/2`` before evaluation and masked: the clamped
    value stays available to spectral transforms while norms and verification
    loops skip the node.  Non-finite values anywhere are rejected with the
    offending node reported.
    """
    mask = None
    if singularities:
        pts = grid.nodes()
        h = 0.5 * min(grid.spacing)
        flat = pts.reshape(-1, grid.ndim).copy()
        clamped = np.zeros(flat.shape[0], dtype=bool)
        for s in singularities:
            s = np.asarray(s, dtype=float)
            d = flat - s
            dist = np.sqrt(np.sum(d**2, axis=-1))
            close = dist < h
            if not np.any(close):
                continue
            on_node = close & (dist == 0.0)
            d[on_node, 0] = 1.0
            dist[on_node] = 1.0
            flat[close] = s + d[close] * (h / dist[close, None])
            clamped |= close
        pts = flat.reshape(pts.shape)
        coords = [pts[..., a] for a in range(grid.ndim)]
        if clamped.any():
            mask = clamped.reshape(grid.shape)
    else:
        coords = grid.coords()

    with np.errstate(all="ignore"):
        raw = expr(*coords)
    if ncomp == 1:
        values = np.broadcast_to(np.asarray(raw, dtype=float), grid.shape).copy()
    else:
        values = np.stack([np.broadcast_to(np.asarray(r, dtype=float), grid.shape)
                           for r in raw], axis=0)
    bad = ~np.isfinite(values)
    if np.any(bad):
        idx = np.argwhere(bad)[0]
        node_idx = tuple(idx[-grid.ndim:])
        node = [float(grid.axis_coords(a)[node_idx[a]]) for a in range(grid.ndim)]
        raise GridError(f"expression is not finite at node {node}")
    return GridFunction(grid, values, mask)


def lebesgue_norm(u: GridFunction, p: float, region: Region = FULL) -> float:
    """Midpoint-quadrature L^p norm of ``u`` over ``region`` (sup norm for p=inf).

    Masked nodes are excluded.  Vector fields are reduced to their pointwise
    Euclidean magnitude first.
    """
    if p < 1:
        raise ValueError(f"Lebesgue exponent must satisfy p >= 1, got {p}")
    ind = region.indicator(u.grid)
    if u.mask is not None:
        ind = ind & ~u.mask
    vals = u.magnitude()[ind]
    if vals.size == 0:
        return 0.0
    if np.isinf(p):
        return float(np.max(vals))
    return float(np.sum(vals**p) * u.grid.cell_measure) ** (1.0 / p)


def interpolate(u: GridFunction, positions: np.ndarray) -> np.ndarray:
    """Multilinear interpolation of ``u`` at arbitrary positions.

    Positions are clamped to the node hull per axis (no periodic wrap); this
    matches the flow-integration convention of freezing escapers at the box
    edge.  Returns shape ``(m,)`` for scalars and ``(m, ncomp)`` for vectors.
    """
    grid = u.grid
    pos = np.atleast_2d(np.asarray(positions, dtype=float))
    m = pos.shape[0]
    idx0 = np.empty((m, grid.ndim), dtype=np.intp)
    frac = np.empty((m, grid.ndim), dtype=float)
    for a in range(grid.ndim):
        x0 = grid.centers[a] - grid.half_widths[a]
        h = grid.spacing[a]
        t = (pos[:, a] - x0) / h
        t = np.clip(t, 0.0, grid.points[a] - 1.0)
        i0 = np.minimum(t.astype(np.intp), grid.points[a] - 2)
        idx0[:, a] = i0
        frac[:, a] = t - i0

    comps = u.values[None] if u.is_scalar else u.values
    out = np.zeros((comps.shape[0], m))
    for corner in range(1 << grid.ndim):
        w = np.ones(m)
        idx = []
        for a in range(grid.ndim):
            if corner >> a & 1:
                w = w * frac[:, a]
                idx.append(idx0[:, a] + 1)
            else:
                w = w * (1.0 - frac[:, a])
                idx.append(idx0[:, a])
        out += w * comps[(slice(None), *idx)]
    return out[0] if u.is_scalar else out.T


# -- serialization ------------------------------------------------------------

_MAGIC = 0x414E4953  # arbitrary tag for the binary layout


def save_binary(u: GridFunction, path) -> None:
    """Flat little-endian binary dump: header (int64) then float64 values."""
    grid = u.grid
    with open(path, "wb") as fh:
        head = np.array([_MAGIC, grid.n1, grid.n2, u.ncomp, *grid.points], dtype="<i8")
        head.tofile(fh)
        np.asarray(grid.half_widths, dtype="<f8").tofile(fh)
        np.asarray(grid.centers, dtype="<f8").tofile(fh)
        np.ascontiguousarray(u.values, dtype="<f8").tofile(fh)


def load_binary(path) -> GridFunction:
    with open(path, "rb") as fh:
        magic, n1, n2 = np.fromfile(fh, dtype="<i8", count=3)
        if magic != _MAGIC:
            raise GridError(f"{path}: not a grid-function binary file")
        ncomp = int(np.fromfile(fh, dtype="<i8", count=1)[0])
        n = int(n1 + n2)
        points = tuple(int(v) for v in np.fromfile(fh, dtype="<i8", count=n))
        widths = tuple(np.fromfile(fh, dtype="<f8", count=n))
        centers = tuple(np.fromfile(fh, dtype="<f8", count=n))
        grid = Grid(int(n1), int(n2), widths, points, centers)
        count = grid.size * ncomp
        values = np.fromfile(fh, dtype="<f8", count=count)
    shape = grid.shape if ncomp == 1 else (ncomp, *grid.shape)
    return GridFunction(grid, values.reshape(shape))


def save_csv(u: GridFunction, path) -> None:
    """CSV dump: one metadata header row, then flat values in C order."""
    grid = u.grid
    with open(path, "w") as fh:
        meta = [str(grid.n1), str(grid.n2), str(u.ncomp),
                ";".join(str(m) for m in grid.points),
                ";".join(repr(w) for w in grid.half_widths),
                ";".join(repr(c) for c in grid.centers)]
        fh.write("n1,n2,ncomp,points,half_widths,centers\n")
        fh.write(",".join(meta) + "\n")
        for v in np.ascontiguousarray(u.values).ravel():
            fh.write(f"{float(v)!r}\n")


def load_csv(path) -> GridFunction:
    with open(path) as fh:
        header = fh.readline()
        if not header.startswith("n1,"):
            raise GridError(f"{path}: missing grid metadata header")
        meta = fh.readline().strip().split(",")
        n1, n2, ncomp = int(meta[0]), int(meta[1]), int(meta[2])
        points = tuple(int(v) for v in meta[3].split(";"))
        widths = tuple(float(v) for v in meta[4].split(";"))
        centers = tuple(float(v) for v in meta[5].split(";"))
        grid = Grid(n1, n2, widths, points, centers)
        values = np.loadtxt(io.StringIO(fh.read())).reshape(
            grid.shape if ncomp == 1 else (ncomp, *grid.shape))
    return GridFunction(grid, values)
