"""Covariance and precision structures for the basis-function coefficients.

Coefficients are independent between resolutions, so the covariance K or
precision Q is block-diagonal with one block per resolution.  Three
intra-resolution parameterisations are available:

* ``K_tapered``   - exponential covariance times a compactly supported
  spherical taper (sparse covariance);
* ``Q_leroux``    - lattice precision with diagonal kappa + rho * (number
  of first-order neighbours) and -rho on neighbours;
* ``Q_dist``      - precision whose off-diagonals decay exponentially
  with centroid distance under the same taper, diagonal chosen so each
  row sums to kappa.

Spatio-temporal coefficients use the Kronecker product of a first-order
autoregressive temporal precision (unit marginal variance) with the
spatial precision.
"""

from __future__ import annotations

import weakref
from dataclasses import dataclass

import numpy as np
from scipy import sparse

from .basis import BasisSet

# per-basis caches of fixed sparsity structures; keyed by object identity
_STRUCTURE_CACHE: "weakref.WeakKeyDictionary" = weakref.WeakKeyDictionary()


def _basis_cache(basis: BasisSet) -> dict:
    cache = _STRUCTURE_CACHE.get(basis)
    if cache is None:
        cache = {}
        _STRUCTURE_CACHE[basis] = cache
    return cache

__all__ = [
    "CovparError",
    "CoefPrior",
    "spherical_taper",
    "build_K",
    "build_Q_leroux",
    "build_Q_dist",
    "ar1_precision",
    "build_Q_spacetime",
    "build_prior_matrix",
]

VARIANTS = ("K_tapered", "Q_leroux", "Q_dist")
DEFAULT_TAPER_MULTIPLIER = 3.0


class CovparError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class CoefPrior:
    """Per-resolution coefficient-prior parameters.

    Array fields have one entry per resolution.  Which fields are used
    depends on ``variant``:

    * K_tapered: sigma2 (variance), tau (length scale)
    * Q_leroux:  kappa, rho
    * Q_dist:    kappa, rho, tau

    The taper length for resolution k is
    ``taper_multiplier * mindist(k)``.  ``rho_t`` is the AR(1)
    coefficient of the temporal factor (spatio-temporal priors only).
    """

    variant: str
    sigma2: np.ndarray | None = None
    tau: np.ndarray | None = None
    kappa: np.ndarray | None = None
    rho: np.ndarray | None = None
    taper_multiplier: float = DEFAULT_TAPER_MULTIPLIER
    rho_t: float | None = None

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise CovparError(f"unknown variant {self.variant!r}; choose from {VARIANTS}")
        if self.taper_multiplier <= 0:
            raise CovparError("taper_multiplier must be positive")

    def _arr(self, name: str, n_res: int, positive: bool = True) -> np.ndarray:
        v = getattr(self, name)
        if v is None:
            raise CovparError(f"variant {self.variant} requires {name}")
        v = np.atleast_1d(np.asarray(v, dtype=float))
        if v.size == 1 and n_res > 1:
            v = np.full(n_res, float(v[0]))
        if v.size != n_res:
            raise CovparError(f"{name} must have one entry per resolution ({n_res})")
        if positive and np.any(v <= 0):
            raise CovparError(f"{name} entries must be strictly positive")
        if not positive and np.any(v < 0):
            raise CovparError(f"{name} entries must be nonnegative")
        return v

    @property
    def is_precision(self) -> bool:
        return self.variant != "K_tapered"


def spherical_taper(d, beta):
    """Compactly supported taper {1 - d/beta}_+^2 {1 + d/(2 beta)}.

    Vanishes for d >= beta and equals 1 at d = 0.
    """
    if np.any(np.asarray(beta) <= 0):
        raise CovparError("taper length beta must be positive")
    d = np.asarray(d, dtype=float)
    frac = d / beta
    return np.maximum(1.0 - frac, 0.0) ** 2 * (1.0 + 0.5 * frac)


def _block_distance(c: np.ndarray) -> np.ndarray:
    return np.sqrt(((c[:, None, :] - c[None, :, :]) ** 2).sum(axis=2))


def _tapered_structure(basis: BasisSet, taper_multiplier: float):
    """Fixed sparsity structure of the tapered builders.

    Returns a template CSR over all resolutions plus, per data entry,
    the resolution id, pairwise distance, taper value, and a diagonal
    mask.  Entries exist only within a resolution at distance < beta_k.
    """
    cache = _basis_cache(basis)
    key = ("taper_structure", float(taper_multiplier))
    hit = cache.get(key)
    if hit is not None:
        return hit
    blocks, res_ids, dists, taper_vals, diag_masks = [], [], [], [], []
    for info in basis.res_info:
        c = basis.centroids[basis.res_slice(info.index)]
        beta = taper_multiplier * info.mindist
        d = _block_distance(c)
        inside = d < beta
        block = sparse.csr_matrix(inside.astype(float))
        rows = np.repeat(np.arange(block.shape[0]), np.diff(block.indptr))
        cols = block.indices
        blocks.append(block)
        res_ids.append(np.full(block.nnz, info.index - 1, dtype=int))
        dists.append(d[rows, cols])
        taper_vals.append(spherical_taper(d[rows, cols], beta))
        diag_masks.append(rows == cols)
    template = sparse.block_diag(blocks, format="csr")
    hit = (template, np.concatenate(res_ids), np.concatenate(dists),
           np.concatenate(taper_vals), np.concatenate(diag_masks))
    cache[key] = hit
    return hit


def build_K(basis: BasisSet, prior: CoefPrior) -> sparse.csr_matrix:
    """Tapered exponential covariance, block-diagonal over resolutions.

    Block k has entries sigma2_k * exp(-d/tau_k) * taper(d, beta_k) with
    beta_k = taper_multiplier * mindist(k); entries vanish beyond beta_k.
    """
    if prior.variant != "K_tapered":
        raise CovparError(f"build_K needs variant K_tapered, got {prior.variant}")
    sigma2 = prior._arr("sigma2", basis.n_res)
    tau = prior._arr("tau", basis.n_res)
    template, res_id, d, taper_val, _ = _tapered_structure(
        basis, prior.taper_multiplier
    )
    K = template.copy()
    K.data = sigma2[res_id] * np.exp(-d / tau[res_id]) * taper_val
    return K


def _leroux_neighbors(info) -> list:
    """First-order horizontal/vertical neighbour pairs on the lattice."""
    nx, ny = info.n_side_x, info.n_side_y
    pairs = []
    for iy in range(ny):
        for ix in range(nx):
            i = iy * nx + ix
            if ix + 1 < nx:
                pairs.append((i, i + 1))
            if iy + 1 < ny:
                pairs.append((i, i + nx))
    return pairs


def _leroux_structure(basis: BasisSet):
    """Fixed Leroux structure: identity and graph-Laplacian templates
    over all resolutions plus per-entry resolution ids."""
    cache = _basis_cache(basis)
    hit = cache.get("leroux_structure")
    if hit is not None:
        return hit
    lap_blocks, res_sizes = [], []
    for info in basis.res_info:
        n = info.n_side_x * info.n_side_y
        pairs = _leroux_neighbors(info)
        rows = np.array([p[0] for p in pairs] + [p[1] for p in pairs], dtype=int)
        cols = np.array([p[1] for p in pairs] + [p[0] for p in pairs], dtype=int)
        deg = np.bincount(rows, minlength=n).astype(float)
        A = sparse.csr_matrix((np.ones(rows.size), (rows, cols)), shape=(n, n))
        L = sparse.diags(deg) - A  # graph Laplacian of the lattice
        lap_blocks.append(L.tocsr())
        res_sizes.append(n)
    L_all = sparse.block_diag(lap_blocks, format="csr")
    eye = sparse.eye(L_all.shape[0], format="csr")
    # union pattern template with per-entry multipliers for kappa and rho
    ones_L = L_all.copy()
    ones_L.data = np.ones_like(ones_L.data)
    template = (eye + ones_L).tocsr()
    template.sort_indices()
    rows = np.repeat(np.arange(template.shape[0]), np.diff(template.indptr))
    res_of_row = np.repeat(np.arange(len(res_sizes)), res_sizes)
    res_id = res_of_row[rows]
    # kappa multiplies the identity, rho multiplies the Laplacian
    eye_part = np.asarray((rows == template.indices), dtype=float)
    L_csr = L_all.tocsr()
    L_csr.sort_indices()
    lap_part = np.zeros(template.nnz)
    # scatter Laplacian values into the union pattern
    tmpl_lookup = template.copy()
    tmpl_lookup.data = np.arange(template.nnz, dtype=float)
    l_rows = np.repeat(np.arange(L_csr.shape[0]), np.diff(L_csr.indptr))
    pos = np.asarray(
        tmpl_lookup[l_rows, L_csr.indices]
    ).ravel().astype(int)
    lap_part[pos] = L_csr.data
    hit = (template, res_id, eye_part, lap_part)
    cache["leroux_structure"] = hit
    return hit


def build_Q_leroux(basis: BasisSet, prior: CoefPrior) -> sparse.csr_matrix:
    """Lattice precision: diag kappa + rho * |neighbours|, -rho off-diagonal.

    Strictly diagonally dominant for kappa > 0, rho >= 0, hence positive
    definite.  Requires a regular (lattice) basis.
    """
    if prior.variant != "Q_leroux":
        raise CovparError(f"build_Q_leroux needs variant Q_leroux, got {prior.variant}")
    if not basis.regular:
        raise CovparError(
            "Q_leroux requires a regular lattice basis; use Q_dist for "
            "irregularly placed functions"
        )
    kappa = prior._arr("kappa", basis.n_res)
    rho = prior._arr("rho", basis.n_res, positive=False)
    template, res_id, eye_part, lap_part = _leroux_structure(basis)
    Q = template.copy()
    Q.data = kappa[res_id] * eye_part + rho[res_id] * lap_part
    return Q


def build_Q_dist(basis: BasisSet, prior: CoefPrior) -> sparse.csr_matrix:
    """Distance-decay precision with row sums equal to kappa.

    Off-diagonal (i, j) is -rho_k exp(-d_ij/tau_k) taper(d_ij, beta_k);
    the diagonal absorbs the negated off-diagonal row sum plus kappa_k,
    giving strict diagonal dominance for kappa > 0.
    """
    if prior.variant != "Q_dist":
        raise CovparError(f"build_Q_dist needs variant Q_dist, got {prior.variant}")
    kappa = prior._arr("kappa", basis.n_res)
    rho = prior._arr("rho", basis.n_res, positive=False)
    tau = prior._arr("tau", basis.n_res)
    template, res_id, d, taper_val, diag_mask = _tapered_structure(
        basis, prior.taper_multiplier
    )
    Q = template.copy()
    off = -rho[res_id] * np.exp(-d / tau[res_id]) * taper_val
    off[diag_mask] = 0.0
    Q.data = off
    rowsum = np.asarray(Q.sum(axis=1)).ravel()
    rows = np.repeat(np.arange(Q.shape[0]), np.diff(Q.indptr))
    diag_vals = kappa[res_id[diag_mask]] - rowsum[rows[diag_mask]]
    Q.data[diag_mask] = diag_vals
    return Q


def ar1_precision(r_t: int, rho_t: float) -> sparse.csr_matrix:
    """Stationary AR(1) precision scaled to unit marginal variance.

    The tridiagonal precision of r_t consecutive states with coefficient
    rho_t and innovation variance 1 - rho_t**2, so every state has
    marginal variance exactly 1.
    """
    if not -1.0 < rho_t < 1.0:
        raise CovparError("AR(1) coefficient must lie strictly inside (-1, 1)")
    if r_t < 1:
        raise CovparError("r_t must be >= 1")
    if r_t == 1:
        return sparse.csr_matrix(np.array([[1.0]]))
    diag = np.full(r_t, 1.0 + rho_t**2)
    diag[0] = diag[-1] = 1.0
    off = np.full(r_t - 1, -rho_t)
    Q = sparse.diags([off, diag, off], offsets=[-1, 0, 1], format="csr")
    return Q / (1.0 - rho_t**2)


def build_Q_spacetime(Q_t, Q_s) -> sparse.csr_matrix:
    """Kronecker product Q_t (x) Q_s, temporal index slow."""
    return sparse.kron(sparse.csr_matrix(Q_t), sparse.csr_matrix(Q_s), format="csr")


def build_prior_matrix(basis: BasisSet, prior: CoefPrior):
    """Build the coefficient prior matrix for a basis.

    Returns ``(matrix, is_precision)``.  Tensor bases require a precision
    variant and yield the Kronecker product with the AR(1) temporal
    factor.
    """
    if prior.variant == "K_tapered":
        if basis.temporal is not None:
            raise CovparError(
                "spatio-temporal coefficient priors require a precision variant"
            )
        return build_K(basis, prior), False
    Q_s = build_Q_leroux(basis, prior) if prior.variant == "Q_leroux" else build_Q_dist(basis, prior)
    if basis.temporal is None:
        return Q_s, True
    if prior.rho_t is None:
        raise CovparError("spatio-temporal prior requires rho_t")
    Q_t = ar1_precision(basis.temporal.n_functions, prior.rho_t)
    return build_Q_spacetime(Q_t, Q_s), True
