"""Model specification and precomputed fitting structures.

Ties the pieces together: the latent field over the cell grid is
``Y = T alpha + S eta + xi`` with ``T`` the covariate design, ``S`` the
basis design at cell centroids, coefficient prior on ``eta`` from the
chosen variant, and independent fine-scale effects ``xi``.  Only cells
touched by at least one observation carry a fine-scale random effect in
the fitting problem; the remaining entries have prior conditional
distributions and are handled at prediction time.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, replace

import numpy as np
from scipy import sparse

from .basis import BasisSet, auto_basis, eval_basis, temporal_basis, tensor_basis
from .covpar import DEFAULT_TAPER_MULTIPLIER, CoefPrior, CovparError
from .family import Family, FamilyError, Link, validate_combination
from .geometry import BAUGrid, IncidenceMatrix, SupportSet, build_incidence

__all__ = [
    "ModelSpec",
    "ObservationSet",
    "ModelState",
    "ModelStructures",
    "build_structures",
    "fs_variance_diag",
]


class SpecError(ValueError):
    """Inconsistent model specification."""


@dataclass(frozen=True)
class ModelSpec:
    """User-level model choices.

    ``normalise_wts`` selects weighted averaging (True) or weighted
    summation (False) in the incidence matrices; binomial and
    negative-binomial data override both with plain unit-weight sums.
    ``r_t`` sets the temporal basis size on spatio-temporal grids.
    """

    family: Family
    link: Link
    prior_variant: str = "Q_leroux"
    n_res: int = 2
    taper_multiplier: float = DEFAULT_TAPER_MULTIPLIER
    normalise_wts: bool = True
    fs_by_spatial_BAU: bool = False
    known_sigma2fs: float | None = None
    r_t: int | None = None
    temporal_kind: str = "bisquare"

    def __post_init__(self):
        status = validate_combination(self.family, self.link)
        if status == "forbidden":
            raise SpecError(
                f"({self.family.kind}, {self.link.kind}) is not an allowed "
                "family/link combination"
            )
        if status == "warn":
            warnings.warn(
                f"({self.family.kind}, {self.link.kind}) is allowed but can "
                "produce nonsensical results; the implied mean range does not "
                "match the data support",
                stacklevel=2,
            )
        if self.known_sigma2fs is not None and self.known_sigma2fs < 0:
            raise SpecError("known_sigma2fs must be nonnegative")


@dataclass(frozen=True, eq=False)
class ObservationSet:
    """Data vector with mapped supports and optional size parameters."""

    z: np.ndarray
    supports: SupportSet
    k_Z: np.ndarray | None = None

    def __post_init__(self):
        if len(self.supports) != np.asarray(self.z).shape[0]:
            raise SpecError("z and supports lengths differ")

    @property
    def m(self) -> int:
        return int(np.asarray(self.z).shape[0])


@dataclass(frozen=True, eq=False)
class ModelState:
    """A full parameter point: fixed effects, coefficient prior,
    fine-scale variance(s), and dispersion."""

    alpha: np.ndarray
    prior: CoefPrior
    sigma2_xi: float | np.ndarray
    psi: float = 1.0
    sigma2fs_fixed: bool = False
    fs_by_spatial_BAU: bool = False

    @property
    def include_fs(self) -> bool:
        """Whether the fine-scale term is part of the random effects."""
        s = np.asarray(self.sigma2_xi, dtype=float)
        return not (self.sigma2fs_fixed and s.ndim == 0 and float(s) == 0.0)

    def replace(self, **kw) -> "ModelState":
        return replace(self, **kw)


def fs_variance_diag(state: ModelState, grid: BAUGrid) -> np.ndarray:
    """Diagonal of the fine-scale covariance over all cells.

    With one variance per spatial cell the vector is tiled over time bins
    (space runs faster than time) before elementwise scaling by the known
    fine-scale scaling diagonal.
    """
    s = np.asarray(state.sigma2_xi, dtype=float)
    if state.fs_by_spatial_BAU:
        if not grid.is_spatiotemporal:
            raise SpecError(
                "per-spatial-cell fine-scale variances need a spatio-temporal grid"
            )
        if s.ndim != 1 or s.shape[0] != grid.n_spatial:
            raise SpecError(
                f"sigma2_xi must have one entry per spatial cell ({grid.n_spatial})"
            )
        full = np.tile(s, grid.n_time)
    else:
        if s.ndim != 0:
            raise SpecError("scalar sigma2_xi expected without fs_by_spatial_BAU")
        full = np.full(grid.n_total, float(s))
    return full * grid.fs_scale


@dataclass(frozen=True, eq=False)
class ModelStructures:
    """Everything about the design that is fixed across parameter values."""

    grid: BAUGrid
    basis: BasisSet | None
    spec: ModelSpec
    T: np.ndarray                    # (N, q)
    S: sparse.csr_matrix             # (N, r)
    C_Z: IncidenceMatrix             # (m, N)
    obs_baus: np.ndarray             # sorted cells touched by data
    C_o: sparse.csr_matrix           # (m, n_o) observed columns of C_Z
    C_oT: sparse.csr_matrix          # cached transpose
    S_o: sparse.csr_matrix           # (n_o, r)
    S_oT: sparse.csr_matrix          # cached transpose
    T_o: np.ndarray                  # (n_o, q)
    k_bau: np.ndarray | None         # (N,) size parameters
    k_Z: np.ndarray | None           # (m,)

    @property
    def r(self) -> int:
        return self.S.shape[1]

    @property
    def n_obs_baus(self) -> int:
        return self.obs_baus.size

    @property
    def k_obs(self) -> np.ndarray | None:
        return None if self.k_bau is None else self.k_bau[self.obs_baus]


def _resolve_size_params(grid: BAUGrid, obs: ObservationSet, family: Family):
    """Reconcile cell-level and observation-level size parameters."""
    if not family.has_size:
        return None, None
    k_bau = grid.size_params
    k_Z = obs.k_Z if obs.k_Z is None else np.asarray(obs.k_Z, dtype=float)
    if k_bau is None and k_Z is None:
        raise FamilyError(
            f"family {family.kind!r} needs size parameters on the cells or the data"
        )
    if k_bau is None:
        # only valid when every support is a single cell
        sizes = [len(c) for c in obs.supports.bau_index_sets]
        if max(sizes) > 1:
            raise FamilyError(
                "multi-cell supports require cell-level size parameters"
            )
        k_bau = np.zeros(grid.n_total)
        for kz, c in zip(k_Z, obs.supports.bau_index_sets):
            k_bau[c[0]] = kz
    if k_Z is None:
        k_Z = np.array(
            [k_bau[np.asarray(c)].sum() for c in obs.supports.bau_index_sets]
        )
    else:
        implied = np.array(
            [k_bau[np.asarray(c)].sum() for c in obs.supports.bau_index_sets]
        )
        if not np.allclose(implied, k_Z, rtol=1e-8, atol=1e-8):
            raise FamilyError(
                "observation size parameters disagree with the sum of "
                "cell-level size parameters over their supports"
            )
    if np.any(k_Z <= 0):
        raise FamilyError("every observation needs a positive total size parameter")
    return k_bau, k_Z


def build_structures(grid: BAUGrid, obs: ObservationSet, spec: ModelSpec,
                     basis: BasisSet | None = None) -> ModelStructures:
    """Assemble the design matrices and incidence structure for fitting.

    The basis defaults to the automatic multiresolution lattice (with a
    tensor-product temporal factor on spatio-temporal grids).  Passing
    ``basis=None`` together with ``spec.n_res == 0`` yields a model with
    no basis coefficients.
    """
    if basis is None and spec.n_res > 0:
        basis = auto_basis(grid.bbox, spec.n_res)
        if grid.is_spatiotemporal:
            r_t = spec.r_t if spec.r_t is not None else max(2, grid.n_time // 2)
            basis = tensor_basis(basis, temporal_basis(grid.n_time, r_t,
                                                       spec.temporal_kind))
    if basis is not None and grid.is_spatiotemporal and basis.temporal is None:
        raise SpecError("spatio-temporal grids need a tensor-product basis")
    if basis is not None and spec.prior_variant == "K_tapered" and basis.temporal is not None:
        raise CovparError(
            "spatio-temporal coefficient priors require a precision variant"
        )

    pts = grid.st_centroids() if grid.is_spatiotemporal else grid.centroids
    if basis is None:
        S = sparse.csr_matrix((grid.n_total, 0))
    else:
        S = eval_basis(basis, pts)
    T = np.atleast_2d(np.asarray(grid.covariates, dtype=float))

    inc = build_incidence(grid, obs.supports, normalise=spec.normalise_wts,
                          force_unit_sum=spec.family.has_size)
    obs_baus = obs.supports.touched_baus
    C_o = inc.matrix[:, obs_baus].tocsr()
    S_o = S[obs_baus].tocsr()
    T_o = T[obs_baus]
    k_bau, k_Z = _resolve_size_params(grid, obs, spec.family)
    return ModelStructures(
        grid=grid, basis=basis, spec=spec, T=T, S=S, C_Z=inc,
        obs_baus=obs_baus, C_o=C_o, C_oT=C_o.T.tocsr(), S_o=S_o,
        S_oT=S_o.T.tocsr(), T_o=T_o, k_bau=k_bau, k_Z=k_Z,
    )
