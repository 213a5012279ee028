"""Multiresolution bisquare basis functions and their design matrices.

The latent field is expanded in compactly supported bisquare functions
placed on regular lattices, one lattice per resolution with the count
per axis doubling between resolutions.  Spatio-temporal bases are tensor
products of a spatial set with a one-dimensional temporal set.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import sparse

__all__ = [
    "BasisError",
    "ResolutionInfo",
    "TemporalBasis",
    "BasisSet",
    "auto_basis",
    "temporal_basis",
    "tensor_basis",
    "eval_basis",
    "basis_to_rows",
    "basis_from_rows",
]


class BasisError(ValueError):
    pass


@dataclass(frozen=True)
class ResolutionInfo:
    """Per-resolution lattice metadata."""

    index: int            # 1-based resolution label
    n_side_x: int
    n_side_y: int
    aperture: float
    mindist: float
    offset: int           # first function index of this resolution


@dataclass(frozen=True, eq=False)
class TemporalBasis:
    """One-dimensional basis on the time-bin axis."""

    centers: np.ndarray
    aperture: float
    kind: str = "bisquare"  # bisquare | box

    @property
    def n_functions(self) -> int:
        return self.centers.size

    def eval(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        d = np.abs(t[:, None] - self.centers[None, :])
        if self.kind == "box":
            return (d <= 0.5 * self.aperture).astype(float)
        u = d / self.aperture
        out = np.where(u < 1.0, (1.0 - u**2) ** 2, 0.0)
        return out


@dataclass(frozen=True, eq=False)
class BasisSet:
    """A set of spatial (or spatio-temporal) basis functions.

    Attributes
    ----------
    centroids : ndarray (r_s, 2)
        Spatial centroids.
    apertures : ndarray (r_s,)
        Per-function aperture; equal within a resolution.
    resolutions : ndarray (r_s,) of int
        1-based resolution index per function, contiguous from 1.
    res_info : tuple of ResolutionInfo
    regular : bool
        True when every resolution sits on a regular lattice.
    temporal : TemporalBasis or None
        When set, the basis is the tensor product and functions are
        ordered with the temporal index slow.
    """

    centroids: np.ndarray
    apertures: np.ndarray
    resolutions: np.ndarray
    res_info: tuple
    regular: bool = True
    temporal: TemporalBasis | None = None

    @property
    def n_res(self) -> int:
        return len(self.res_info)

    @property
    def n_spatial_functions(self) -> int:
        return self.centroids.shape[0]

    @property
    def n_functions(self) -> int:
        r = self.n_spatial_functions
        if self.temporal is not None:
            r *= self.temporal.n_functions
        return r

    def mindist(self, res_index: int) -> float:
        for info in self.res_info:
            if info.index == res_index:
                return info.mindist
        raise BasisError(f"no resolution {res_index}")

    def res_slice(self, res_index: int) -> slice:
        """Index range of one resolution within the spatial function list."""
        for info in self.res_info:
            if info.index == res_index:
                n = info.n_side_x * info.n_side_y
                return slice(info.offset, info.offset + n)
        raise BasisError(f"no resolution {res_index}")


def auto_basis(bbox, n_res: int) -> BasisSet:
    """Place bisquare lattices over the bounding box.

    Resolution k holds a ceil(3 * 2**(k-1))-per-axis lattice of functions
    with aperture 1.5x the lattice spacing, cell-centred on the box, so
    neighbouring functions overlap and boundary cells keep support.

    Raises
    ------
    BasisError
        When ``n_res`` < 1 or the box is degenerate.
    """
    xmin, ymin, xmax, ymax = map(float, bbox)
    if n_res < 1:
        raise BasisError("n_res must be >= 1")
    if not (xmax > xmin and ymax > ymin):
        raise BasisError(f"degenerate bounding box {bbox}")
    w, h = xmax - xmin, ymax - ymin
    cents, aps, res, infos = [], [], [], []
    offset = 0
    for k in range(1, n_res + 1):
        n_side = int(np.ceil(3.0 * 2.0 ** (k - 1)))
        sx, sy = w / n_side, h / n_side
        aperture = 1.5 * max(sx, sy)
        xs = xmin + (np.arange(n_side) + 0.5) * sx
        ys = ymin + (np.arange(n_side) + 0.5) * sy
        gx, gy = np.meshgrid(xs, ys)
        c = np.column_stack([gx.ravel(), gy.ravel()])
        cents.append(c)
        aps.append(np.full(c.shape[0], aperture))
        res.append(np.full(c.shape[0], k, dtype=int))
        infos.append(ResolutionInfo(index=k, n_side_x=n_side, n_side_y=n_side,
                                    aperture=aperture, mindist=min(sx, sy),
                                    offset=offset))
        offset += c.shape[0]
    return BasisSet(
        centroids=np.vstack(cents),
        apertures=np.concatenate(aps),
        resolutions=np.concatenate(res),
        res_info=tuple(infos),
        regular=True,
    )


def temporal_basis(n_time: int, r_t: int, kind: str = "bisquare") -> TemporalBasis:
    """Evenly spaced one-dimensional functions over [0, n_time) bin indices."""
    if r_t < 1:
        raise BasisError("r_t must be >= 1")
    if kind not in ("bisquare", "box"):
        raise BasisError(f"unknown temporal basis kind {kind!r}")
    spacing = n_time / r_t
    centers = (np.arange(r_t) + 0.5) * spacing - 0.5  # bin-index coordinates
    aperture = 1.5 * spacing if kind == "bisquare" else spacing
    return TemporalBasis(centers=centers, aperture=aperture, kind=kind)


def tensor_basis(spatial: BasisSet, temporal: TemporalBasis) -> BasisSet:
    """Tensor product with the temporal index running slow.

    Function (l_t, l_s) sits at flat index l_t * r_s + l_s, matching the
    Kronecker ordering of the space-time precision matrix.
    """
    if spatial.temporal is not None:
        raise BasisError("spatial factor is already spatio-temporal")
    return BasisSet(
        centroids=spatial.centroids,
        apertures=spatial.apertures,
        resolutions=spatial.resolutions,
        res_info=spatial.res_info,
        regular=spatial.regular,
        temporal=temporal,
    )


def _eval_spatial(basis: BasisSet, xy: np.ndarray) -> sparse.csr_matrix:
    """Sparse bisquare evaluation: entry (p, l) = (1 - (d/a_l)^2)^2 for d < a_l."""
    n = xy.shape[0]
    rows, cols, vals = [], [], []
    # resolution blocks share one aperture, so filter per block
    for info in basis.res_info:
        sl = basis.res_slice(info.index)
        c = basis.centroids[sl]
        a = info.aperture
        # block-wise pairwise distances; point and centroid counts are modest
        d2 = ((xy[:, None, :] - c[None, :, :]) ** 2).sum(axis=2)
        inside = d2 < a * a
        pi, li = np.nonzero(inside)
        u2 = d2[pi, li] / (a * a)
        rows.extend(pi.tolist())
        cols.extend((li + sl.start).tolist())
        vals.extend(((1.0 - u2) ** 2).tolist())
    return sparse.csr_matrix(
        (np.asarray(vals), (np.asarray(rows, dtype=int), np.asarray(cols, dtype=int))),
        shape=(n, basis.n_spatial_functions),
    )


def eval_basis(basis: BasisSet, points) -> sparse.csr_matrix:
    """Evaluate every basis function at every point.

    ``points`` is (n, 2) for a spatial basis or (n, 3) with a trailing
    time-bin coordinate for a tensor basis; the result is the sparse
    n-by-r design matrix.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if basis.temporal is None:
        if pts.shape[1] != 2:
            raise BasisError("spatial basis expects (n, 2) points")
        return _eval_spatial(basis, pts)
    if pts.shape[1] != 3:
        raise BasisError("spatio-temporal basis expects (n, 3) points (x, y, t)")
    S_s = _eval_spatial(basis, pts[:, :2])
    T_t = basis.temporal.eval(pts[:, 2])  # dense (n, r_t); r_t is small
    r_s = basis.n_spatial_functions
    blocks = [S_s.multiply(T_t[:, j][:, None]) for j in range(basis.temporal.n_functions)]
    out = sparse.hstack(blocks, format="csr")
    assert out.shape == (pts.shape[0], r_s * basis.temporal.n_functions)
    return out


def basis_to_rows(basis: BasisSet):
    """Flatten the spatial functions to (cx, cy, aperture, resolution) rows."""
    return [
        (float(basis.centroids[i, 0]), float(basis.centroids[i, 1]),
         float(basis.apertures[i]), int(basis.resolutions[i]))
        for i in range(basis.n_spatial_functions)
    ]


def basis_from_rows(rows, regular: bool = False) -> BasisSet:
    """Rebuild a spatial basis from dumped rows.

    Lattice shape metadata is not recoverable from rows, so the result is
    marked irregular unless stated otherwise; per-resolution apertures
    must agree.
    """
    arr = np.asarray(rows, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 4:
        raise BasisError("expected rows of (cx, cy, aperture, resolution)")
    res = arr[:, 3].astype(int)
    labels = np.unique(res)
    if labels.min() != 1 or not np.array_equal(labels, np.arange(1, labels.size + 1)):
        raise BasisError("resolution indices must be contiguous from 1")
    order = np.lexsort((np.arange(arr.shape[0]), res))
    arr = arr[order]
    res = res[order]
    infos = []
    for k in labels:
        sl = res == k
        aps = np.unique(arr[sl, 2])
        if aps.size != 1:
            raise BasisError(f"resolution {k} mixes apertures")
        c = arr[sl, :2]
        if c.shape[0] > 1:
            d = np.sqrt(((c[:, None, :] - c[None, :, :]) ** 2).sum(axis=2))
            np.fill_diagonal(d, np.inf)
            mind = float(d.min())
        else:
            mind = float(aps[0])
        infos.append(ResolutionInfo(index=int(k), n_side_x=int(sl.sum()), n_side_y=1,
                                    aperture=float(aps[0]), mindist=mind,
                                    offset=int(np.nonzero(sl)[0][0])))
    return BasisSet(centroids=arr[:, :2], apertures=arr[:, 2], resolutions=res,
                    res_info=tuple(infos), regular=regular)
