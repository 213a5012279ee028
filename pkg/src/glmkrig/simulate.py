"""Synthetic data scenarios for experiments and pipeline tests.

Three spatial scenarios echo common study designs: point-referenced
counts with a trigonometric intensity surface passed through the
exponential, areal negative-binomial data on a mix of coarse blocks and
single cells with a logistic probability surface, and point-referenced
Gaussian data.  A spatio-temporal scenario draws directly from the
generative model with an autoregressive temporal factor and per-cell
fine-scale variances.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .basis import auto_basis, temporal_basis, tensor_basis, eval_basis
from .covpar import CoefPrior, ar1_precision, build_Q_leroux, build_Q_spacetime
from .geometry import BAUGrid, Point, Rect, build_bau_grid, map_supports
from .linalg import SPDFactor

__all__ = [
    "SimulatedDataset",
    "SCENARIOS",
    "simulate_scenario",
    "scenario_poisson_point",
    "scenario_negbin_areal",
    "scenario_gaussian_point",
    "scenario_spacetime_poisson",
]


@dataclass
class SimulatedDataset:
    grid: BAUGrid
    geoms: list
    z: np.ndarray
    truth_mu: np.ndarray
    truth_pi: np.ndarray | None
    truth_y: np.ndarray
    observed_mask: np.ndarray      # per cell: touched by any support
    k_Z: np.ndarray | None = None
    truth_z: np.ndarray | None = None   # realised responses at every cell
    scenario: str = ""


def _trig_surface_log(x, y):
    """Smooth multiscale log-intensity over the unit square."""
    return (
        3.0
        + 1.1 * np.sin(2.0 * np.pi * x)
        + 1.1 * np.cos(2.0 * np.pi * y)
        + 0.7 * np.sin(4.0 * np.pi * x) * np.cos(3.0 * np.pi * y)
        + 0.35 * np.cos(7.0 * np.pi * x) * np.sin(6.0 * np.pi * y)
    )


def _trig_surface_logit(x, y):
    """Smooth multiscale logit-probability over the unit square."""
    return (
        1.4 * np.sin(2.0 * np.pi * x) * np.cos(2.0 * np.pi * y)
        + 0.9 * np.cos(4.0 * np.pi * x)
        + 0.6 * np.sin(3.0 * np.pi * y + 1.0)
    )


def _observed_mask(grid, supports):
    mask = np.zeros(grid.n_total, dtype=bool)
    mask[supports.touched_baus] = True
    return mask


def scenario_poisson_point(seed: int, nx: int = 64, ny: int = 64,
                           m: int = 750) -> SimulatedDataset:
    """Point-referenced Poisson counts over a trigonometric-exponential
    intensity surface."""
    rng = np.random.default_rng([int(seed), 101])
    grid = build_bau_grid((0.0, 0.0, 1.0, 1.0), nx, ny)
    y_true = _trig_surface_log(grid.centroids[:, 0], grid.centroids[:, 1])
    mu = np.exp(y_true)
    pts = rng.uniform(0.001, 0.999, size=(m, 2))
    geoms = [Point(float(p[0]), float(p[1])) for p in pts]
    sup = map_supports(grid, geoms)
    mu_z = np.array([mu[np.asarray(c)].mean() for c in sup.bau_index_sets])
    z = rng.poisson(mu_z).astype(float)
    return SimulatedDataset(grid=grid, geoms=geoms, z=z, truth_mu=mu,
                            truth_pi=None, truth_y=y_true,
                            observed_mask=_observed_mask(grid, sup),
                            scenario="poisson_point")


def scenario_negbin_areal(seed: int, nx: int = 32, ny: int = 32,
                          k_cell: float = 50.0, coarse: int = 4,
                          coarse_frac: float = 0.55,
                          fine_frac: float = 0.35) -> SimulatedDataset:
    """Areal negative-binomial data mixing coarse multi-cell blocks with
    single-cell supports; the probability surface is a logistic transform
    of a trigonometric field and every cell carries size parameter
    ``k_cell``."""
    rng = np.random.default_rng([int(seed), 202])
    grid = build_bau_grid((0.0, 0.0, 1.0, 1.0), nx, ny,
                          size_params=np.full(nx * ny, float(k_cell)))
    pi = 1.0 / (1.0 + np.exp(-_trig_surface_logit(grid.centroids[:, 0],
                                                  grid.centroids[:, 1])))
    pi = np.clip(pi, 1e-6, 1.0 - 1e-6)
    mu = k_cell * (1.0 - pi) / pi
    y_true = np.log(pi) - np.log1p(-pi)

    bx, by = nx // coarse, ny // coarse
    blocks = [(ix, iy) for iy in range(by) for ix in range(bx)]
    order = rng.permutation(len(blocks))
    n_coarse = int(round(coarse_frac * len(blocks)))
    coarse_blocks = [blocks[i] for i in order[:n_coarse]]
    rest_blocks = [blocks[i] for i in order[n_coarse:]]

    geoms = []
    w, h = grid.cell_width, grid.cell_height
    for ix, iy in coarse_blocks:
        x0 = grid.bbox[0] + ix * coarse * w
        y0 = grid.bbox[1] + iy * coarse * h
        # shrink slightly so the block claims exactly its own cells
        geoms.append(Rect(x0 + 0.25 * w, y0 + 0.25 * h,
                          x0 + coarse * w - 0.25 * w,
                          y0 + coarse * h - 0.25 * h))
    fine_cells = []
    for ix, iy in rest_blocks:
        for dy in range(coarse):
            for dx in range(coarse):
                fine_cells.append((ix * coarse + dx, iy * coarse + dy))
    fine_cells = [fine_cells[i] for i in rng.permutation(len(fine_cells))]
    n_fine = int(round(fine_frac * len(fine_cells)))
    for cx, cy in fine_cells[:n_fine]:
        x0 = grid.bbox[0] + cx * w
        y0 = grid.bbox[1] + cy * h
        geoms.append(Rect(x0 + 0.25 * w, y0 + 0.25 * h,
                          x0 + 0.75 * w, y0 + 0.75 * h))

    sup = map_supports(grid, geoms)
    k_Z = np.array([k_cell * len(c) for c in sup.bau_index_sets])
    mu_Z = np.array([mu[np.asarray(c)].sum() for c in sup.bau_index_sets])
    pi_Z = k_Z / (mu_Z + k_Z)
    z = rng.negative_binomial(k_Z, pi_Z).astype(float)
    return SimulatedDataset(grid=grid, geoms=geoms, z=z, truth_mu=mu,
                            truth_pi=pi, truth_y=y_true,
                            observed_mask=_observed_mask(grid, sup),
                            k_Z=k_Z, scenario="negbin_areal")


def scenario_gaussian_point(seed: int, nx: int = 32, ny: int = 32,
                            m: int = 400, psi: float = 0.25) -> SimulatedDataset:
    """Point-referenced Gaussian data with identity link."""
    rng = np.random.default_rng([int(seed), 303])
    grid = build_bau_grid((0.0, 0.0, 1.0, 1.0), nx, ny)
    y_true = (1.0 + np.sin(2.0 * np.pi * grid.centroids[:, 0])
              + 0.8 * np.cos(3.0 * np.pi * grid.centroids[:, 1]))
    mu = y_true.copy()
    pts = rng.uniform(0.001, 0.999, size=(m, 2))
    geoms = [Point(float(p[0]), float(p[1])) for p in pts]
    sup = map_supports(grid, geoms)
    mu_z = np.array([mu[np.asarray(c)].mean() for c in sup.bau_index_sets])
    z = rng.normal(mu_z, np.sqrt(psi))
    return SimulatedDataset(grid=grid, geoms=geoms, z=z, truth_mu=mu,
                            truth_pi=None, truth_y=y_true,
                            observed_mask=_observed_mask(grid, sup),
                            scenario="gaussian_point")


def scenario_spacetime_poisson(seed: int, ns_side: int = 5, n_time: int = 10,
                               r_t: int = 4, holdout_time: int = 5,
                               rho_t: float = 0.6) -> SimulatedDataset:
    """Spatio-temporal Poisson counts drawn from the generative model.

    Every space-time cell outside the held-out time slice is observed
    with a single-cell support; each spatial cell has its own fine-scale
    variance.
    """
    rng = np.random.default_rng([int(seed), 404])
    grid = build_bau_grid((0.0, 0.0, 1.0, 1.0), ns_side, ns_side,
                          time_bins=n_time)
    sb = auto_basis(grid.bbox, 1)
    basis = tensor_basis(sb, temporal_basis(n_time, r_t))
    prior = CoefPrior(variant="Q_leroux", kappa=np.array([1.2]),
                      rho=np.array([0.4]), rho_t=rho_t)
    Q_s = build_Q_leroux(sb, prior)
    Q = build_Q_spacetime(ar1_precision(r_t, rho_t), Q_s)
    eta = SPDFactor(Q.tocsc()).sample_zero_mean(rng, 1).ravel()
    S = eval_basis(basis, grid.st_centroids())
    sig2 = rng.uniform(0.1, 0.4, ns_side * ns_side)
    xi = rng.standard_normal(grid.n_total) * np.sqrt(np.tile(sig2, n_time))
    y_true = 3.0 + S @ eta + xi
    mu = np.exp(y_true)

    geoms = []
    for t in range(n_time):
        if t == holdout_time:
            continue
        for i in range(grid.n_spatial):
            cx, cy = grid.centroids[i]
            geoms.append(Point(float(cx), float(cy), t=t))
    sup = map_supports(grid, geoms)
    mu_z = np.array([mu[c[0]] for c in sup.bau_index_sets])
    z = rng.poisson(mu_z).astype(float)
    return SimulatedDataset(grid=grid, geoms=geoms, z=z, truth_mu=mu,
                            truth_pi=None, truth_y=y_true,
                            observed_mask=_observed_mask(grid, sup),
                            scenario="spacetime_poisson")


SCENARIOS = {
    "poisson_point": scenario_poisson_point,
    "negbin_areal": scenario_negbin_areal,
    "gaussian_point": scenario_gaussian_point,
    "spacetime_poisson": scenario_spacetime_poisson,
}


def simulate_scenario(name: str, seed: int, **kw) -> SimulatedDataset:
    if name not in SCENARIOS:
        raise ValueError(
            f"unknown scenario {name!r}; choose from {sorted(SCENARIOS)}"
        )
    return SCENARIOS[name](seed, **kw)
