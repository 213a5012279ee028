"""Domain discretisation and support-to-cell incidence.

The modelling domain is tiled by small non-overlapping rectangular cells
(basic areal units, BAUs), optionally replicated over time bins.  Each
observation or prediction region is mapped to the set of cells it
intersects, and sparse incidence matrices aggregate the cell-level mean
process over those sets as weighted sums or averages.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import sparse

__all__ = [
    "GeometryError",
    "Point",
    "Rect",
    "BAUIndexSet",
    "BAUGrid",
    "SupportSet",
    "IncidenceMatrix",
    "build_bau_grid",
    "map_supports",
    "build_incidence",
]


class GeometryError(ValueError):
    """Degenerate geometry or a support that misses the grid."""


@dataclass(frozen=True)
class Point:
    """A point support, optionally tied to one time bin."""

    x: float
    y: float
    t: int | None = None


@dataclass(frozen=True)
class Rect:
    """An axis-aligned rectangular support, optionally tied to one time bin."""

    xmin: float
    ymin: float
    xmax: float
    ymax: float
    t: int | None = None

    def __post_init__(self):
        if not (self.xmax >= self.xmin and self.ymax >= self.ymin):
            raise GeometryError(f"degenerate rectangle {self}")


@dataclass(frozen=True)
class BAUIndexSet:
    """An explicit list of cell indices standing in for a geometry."""

    indices: tuple

    def __post_init__(self):
        if len(self.indices) == 0:
            raise GeometryError("empty cell-index support")


@dataclass(frozen=True, eq=False)
class BAUGrid:
    """A regular space(-time) tiling of the domain.

    Cells are ordered space-fastest: index = t * (nx * ny) + iy * nx + ix.
    Per-cell vectors all have length ``n_total = nx * ny * n_time``.

    Attributes
    ----------
    bbox : tuple
        (xmin, ymin, xmax, ymax) of the spatial bounding box.
    nx, ny : int
        Spatial cell counts per axis.
    n_time : int
        Number of time bins (1 for a purely spatial grid).
    centroids : ndarray (n_spatial, 2)
        Spatial cell centroids.
    covariates : ndarray (n_total, q)
        Fixed-effect design rows; defaults to an intercept column.
    rel_weights : ndarray (n_total,)
        Relative aggregation weights v_i > 0, default 1.
    fs_scale : ndarray (n_total,)
        Diagonal of the known fine-scale scaling matrix, > 0, default 1.
    size_params : ndarray (n_total,) or None
        Known per-cell size parameters for binomial/negative-binomial data.
    """

    bbox: tuple
    nx: int
    ny: int
    n_time: int
    centroids: np.ndarray
    covariates: np.ndarray
    rel_weights: np.ndarray
    fs_scale: np.ndarray
    size_params: np.ndarray | None = None

    @property
    def n_spatial(self) -> int:
        return self.nx * self.ny

    @property
    def n_total(self) -> int:
        return self.n_spatial * self.n_time

    @property
    def is_spatiotemporal(self) -> bool:
        return self.n_time > 1

    @property
    def cell_width(self) -> float:
        return (self.bbox[2] - self.bbox[0]) / self.nx

    @property
    def cell_height(self) -> float:
        return (self.bbox[3] - self.bbox[1]) / self.ny

    @property
    def cell_area(self) -> float:
        return self.cell_width * self.cell_height

    def st_centroids(self) -> np.ndarray:
        """(n_total, 3) array of (x, y, t) with t the bin index."""
        t = np.repeat(np.arange(self.n_time, dtype=float), self.n_spatial)
        xy = np.tile(self.centroids, (self.n_time, 1))
        return np.column_stack([xy, t])

    def cell_bounds(self, spatial_index: int) -> tuple:
        """(xmin, ymin, xmax, ymax) of one spatial cell."""
        ix = spatial_index % self.nx
        iy = spatial_index // self.nx
        x0 = self.bbox[0] + ix * self.cell_width
        y0 = self.bbox[1] + iy * self.cell_height
        return (x0, y0, x0 + self.cell_width, y0 + self.cell_height)

    def with_fields(self, covariates=None, rel_weights=None, fs_scale=None,
                    size_params=None) -> "BAUGrid":
        """Copy of the grid with per-cell fields replaced."""
        def _vec(v, name, default):
            if v is None:
                return default
            v = np.asarray(v, dtype=float)
            if v.ndim == 0:
                v = np.full(self.n_total, float(v))
            if v.shape[0] != self.n_total:
                raise GeometryError(f"{name} must have length {self.n_total}")
            return v

        cov = self.covariates
        if covariates is not None:
            cov = np.atleast_2d(np.asarray(covariates, dtype=float))
            if cov.shape[0] != self.n_total:
                raise GeometryError(f"covariates must have {self.n_total} rows")
        rw = _vec(rel_weights, "rel_weights", self.rel_weights)
        fs = _vec(fs_scale, "fs_scale", self.fs_scale)
        sp = self.size_params
        if size_params is not None:
            sp = _vec(size_params, "size_params", None)
            if np.any(sp < 0):
                raise GeometryError("size_params must be nonnegative")
        if np.any(rw <= 0) or np.any(fs <= 0):
            raise GeometryError("rel_weights and fs_scale must be strictly positive")
        return BAUGrid(self.bbox, self.nx, self.ny, self.n_time,
                       self.centroids, cov, rw, fs, sp)


@dataclass(frozen=True)
class SupportSet:
    """Geometries mapped onto the grid's cell index sets.

    ``bau_index_sets[j]`` holds the sorted indices of every cell whose
    closed extent intersects geometry j.
    """

    geometries: tuple
    bau_index_sets: tuple
    kind: str = "observation"  # observation | prediction

    def __len__(self) -> int:
        return len(self.bau_index_sets)

    @property
    def touched_baus(self) -> np.ndarray:
        """Sorted union of all index sets."""
        if not self.bau_index_sets:
            return np.empty(0, dtype=int)
        return np.unique(np.concatenate([np.asarray(c) for c in self.bau_index_sets]))


@dataclass(frozen=True, eq=False)
class IncidenceMatrix:
    """Sparse support-by-cell weight matrix."""

    matrix: sparse.csr_matrix
    normalised: bool

    @property
    def shape(self):
        return self.matrix.shape


def build_bau_grid(bbox, nx: int, ny: int, time_bins: int = 1,
                   covariates=None, rel_weights=None, fs_scale=None,
                   size_params=None) -> BAUGrid:
    """Tile ``bbox`` with a regular nx-by-ny grid replicated over time bins.

    Parameters
    ----------
    bbox : (xmin, ymin, xmax, ymax)
        Non-degenerate spatial bounding box.
    nx, ny, time_bins : int
        Cell counts; all must be >= 1.

    Raises
    ------
    GeometryError
        For a degenerate bounding box or non-positive counts.
    """
    xmin, ymin, xmax, ymax = map(float, bbox)
    if not (xmax > xmin and ymax > ymin):
        raise GeometryError(f"degenerate bounding box {bbox}")
    if nx < 1 or ny < 1 or time_bins < 1:
        raise GeometryError("nx, ny and time_bins must all be >= 1")
    xs = xmin + (np.arange(nx) + 0.5) * (xmax - xmin) / nx
    ys = ymin + (np.arange(ny) + 0.5) * (ymax - ymin) / ny
    gx, gy = np.meshgrid(xs, ys)  # iy slow, ix fast
    centroids = np.column_stack([gx.ravel(), gy.ravel()])
    n_total = nx * ny * time_bins
    grid = BAUGrid(
        bbox=(xmin, ymin, xmax, ymax),
        nx=int(nx),
        ny=int(ny),
        n_time=int(time_bins),
        centroids=centroids,
        covariates=np.ones((n_total, 1)),
        rel_weights=np.ones(n_total),
        fs_scale=np.ones(n_total),
        size_params=None,
    )
    if any(v is not None for v in (covariates, rel_weights, fs_scale, size_params)):
        grid = grid.with_fields(covariates, rel_weights, fs_scale, size_params)
    return grid


def _spatial_cells_for_point(grid: BAUGrid, x: float, y: float) -> np.ndarray:
    """All spatial cells whose closed extent contains (x, y).

    A point on a shared edge or corner belongs to every touching cell.
    """
    xmin, ymin, xmax, ymax = grid.bbox
    w, h = grid.cell_width, grid.cell_height
    # candidate column/row indices: floor, plus the neighbour when the
    # coordinate sits exactly on a cell boundary
    fx = (x - xmin) / w
    fy = (y - ymin) / h
    cols = {int(np.floor(fx)), int(np.ceil(fx)) - 1}
    rows = {int(np.floor(fy)), int(np.ceil(fy)) - 1}
    out = []
    for iy in rows:
        for ix in cols:
            if 0 <= ix < grid.nx and 0 <= iy < grid.ny:
                x0, y0, x1, y1 = (xmin + ix * w, ymin + iy * h,
                                  xmin + (ix + 1) * w, ymin + (iy + 1) * h)
                if x0 <= x <= x1 and y0 <= y <= y1:
                    out.append(iy * grid.nx + ix)
    return np.unique(out)


def _spatial_cells_for_rect(grid: BAUGrid, r: Rect) -> np.ndarray:
    """All spatial cells whose closed extent intersects the closed rectangle."""
    xmin, ymin, _, _ = grid.bbox
    w, h = grid.cell_width, grid.cell_height
    ix0 = int(np.floor((r.xmin - xmin) / w))
    ix1 = int(np.ceil((r.xmax - xmin) / w))  # exclusive unless touching
    iy0 = int(np.floor((r.ymin - ymin) / h))
    iy1 = int(np.ceil((r.ymax - ymin) / h))
    out = []
    for iy in range(max(iy0 - 1, 0), min(iy1 + 1, grid.ny)):
        y0, y1 = ymin + iy * h, ymin + (iy + 1) * h
        if r.ymax < y0 or r.ymin > y1:
            continue
        for ix in range(max(ix0 - 1, 0), min(ix1 + 1, grid.nx)):
            x0, x1 = xmin + ix * w, xmin + (ix + 1) * w
            if r.xmax < x0 or r.xmin > x1:
                continue
            out.append(iy * grid.nx + ix)
    return np.unique(out)


def _time_offsets(grid: BAUGrid, t: int | None, label: str) -> np.ndarray:
    if t is None:
        if grid.is_spatiotemporal:
            raise GeometryError(
                f"{label}: a spatio-temporal grid requires a time bin on every support"
            )
        return np.array([0])
    t = int(t)
    if not (0 <= t < grid.n_time):
        raise GeometryError(f"{label}: time bin {t} outside [0, {grid.n_time})")
    return np.array([t * grid.n_spatial])


def map_supports(grid: BAUGrid, geoms, kind: str = "observation") -> SupportSet:
    """Map geometries to the index sets of the cells they intersect.

    Intersection uses closed-set semantics: touching a cell boundary
    counts, so an edge point maps to both neighbouring cells.

    Raises
    ------
    GeometryError
        When a geometry intersects no cell, naming the offending support.
    """
    index_sets = []
    for j, g in enumerate(geoms):
        label = f"support {j}"
        if isinstance(g, BAUIndexSet):
            idx = np.unique(np.asarray(g.indices, dtype=int))
            if np.any(idx < 0) or np.any(idx >= grid.n_total):
                raise GeometryError(f"{label}: cell index outside [0, {grid.n_total})")
        elif isinstance(g, Point):
            cells = _spatial_cells_for_point(grid, g.x, g.y)
            if cells.size == 0:
                raise GeometryError(f"{label}: point ({g.x}, {g.y}) misses the grid")
            idx = cells + _time_offsets(grid, g.t, label)[0]
        elif isinstance(g, Rect):
            cells = _spatial_cells_for_rect(grid, g)
            if cells.size == 0:
                raise GeometryError(f"{label}: rectangle misses the grid")
            idx = cells + _time_offsets(grid, g.t, label)[0]
        else:
            raise GeometryError(f"{label}: unsupported geometry type {type(g).__name__}")
        index_sets.append(tuple(int(i) for i in np.sort(idx)))
    return SupportSet(geometries=tuple(geoms), bau_index_sets=tuple(index_sets),
                      kind=kind)


def build_incidence(grid: BAUGrid, supports: SupportSet, normalise: bool = True,
                    force_unit_sum: bool = False) -> IncidenceMatrix:
    """Build the sparse aggregation matrix for a support set.

    Weights are proportional to the grid's relative weights; with
    ``normalise`` each row is rescaled to sum to 1 (weighted average).
    ``force_unit_sum`` overrides both and sets every nonzero weight to 1
    (plain summation), as required for binomial and negative-binomial
    data.
    """
    m = len(supports)
    rows, cols, vals = [], [], []
    for j, c in enumerate(supports.bau_index_sets):
        idx = np.asarray(c, dtype=int)
        if force_unit_sum:
            w = np.ones(idx.size)
        else:
            w = grid.rel_weights[idx].astype(float)
            if normalise:
                w = w / w.sum()
        rows.extend([j] * idx.size)
        cols.extend(idx.tolist())
        vals.extend(w.tolist())
    mat = sparse.csr_matrix(
        (np.asarray(vals), (np.asarray(rows, dtype=int), np.asarray(cols, dtype=int))),
        shape=(m, grid.n_total),
    )
    return IncidenceMatrix(matrix=mat, normalised=bool(normalise and not force_unit_sum))
