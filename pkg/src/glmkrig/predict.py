"""Monte Carlo prediction of the latent, mean, probability, and data
processes over cells and aggregation regions.

Draws of the random effects come from the Gaussian approximation at the
fitted mode; fine-scale effects of cells untouched by data are drawn
from their prior, which is their exact conditional distribution.  All
downstream targets are deterministic or family-level transformations of
the latent sample matrix, summarised row-wise by means, standard
deviations, and nearest-rank percentiles.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .family import Family, Link, sample_family
from .geometry import IncidenceMatrix
from .model import fs_variance_diag

__all__ = [
    "SummaryTable",
    "PredictionResult",
    "sample_latent",
    "transform_targets",
    "aggregate_regions",
    "sample_predictive_data",
    "summarize",
    "predict_baus",
    "predict_regions",
]

DEFAULT_N_MC = 400
DEFAULT_PERCENTILES = (5.0, 95.0)


class PredictError(ValueError):
    pass


@dataclass
class SummaryTable:
    """Row-wise posterior summaries of one target."""

    mean: np.ndarray
    sd: np.ndarray
    percentiles: np.ndarray      # (n_rows, n_percentiles)
    percentile_levels: tuple


@dataclass
class PredictionResult:
    """Summaries (and optionally retained samples) per requested target."""

    summaries: dict
    samples: dict
    n_mc: int


def sample_latent(fit, n_mc: int = DEFAULT_N_MC,
                  rng: np.random.Generator | None = None) -> np.ndarray:
    """Sample the latent process over every cell, one column per draw.

    Columns are ``T alpha + S eta + xi`` with ``(eta, xi_obs)`` drawn from
    the Gaussian approximation at the mode and the unobserved-cell
    fine-scale entries drawn from their prior.
    """
    if n_mc < 1:
        raise PredictError("n_mc must be >= 1")
    rng = rng or np.random.default_rng()
    st = fit.structures
    state = fit.theta_hat
    lap = fit.laplace
    N = st.grid.n_total
    r = st.r
    u_draws = lap.u_hat.u[:, None] + lap.hess_factor.sample_zero_mean(rng, n_mc)
    eta = u_draws[:r]
    y = np.broadcast_to((st.T @ state.alpha)[:, None], (N, n_mc)).copy()
    if r:
        y += st.S @ eta
    if state.include_fs:
        xi = np.zeros((N, n_mc))
        xi[st.obs_baus] = u_draws[r:]
        untouched = np.setdiff1d(np.arange(N), st.obs_baus)
        if untouched.size:
            v = fs_variance_diag(state, st.grid)[untouched]
            xi[untouched] = rng.standard_normal((untouched.size, n_mc)) * \
                np.sqrt(v)[:, None]
        y += xi
    return y


def transform_targets(y_mc: np.ndarray, family: Family, link: Link, k=None):
    """Elementwise mean and probability processes from latent samples.

    For size families without cell-level size parameters the mean is
    omitted (with a warning); the probability process is still returned
    whenever it is defined without them.
    """
    if family.has_size and k is None:
        pi = None
        if link.is_probability:
            pi = np.clip(link.ginv(y_mc), 1e-12, 1.0 - 1e-12)
        elif family.kind == "negative_binomial":
            pi = 1.0 / (1.0 + link.ginv(y_mc))
        warnings.warn(
            "size parameters unavailable: returning only the probability process",
            stacklevel=2,
        )
        return None, pi
    if family.kind == "binomial":
        k = np.asarray(k, dtype=float)[:, None]
        pi = np.clip(link.ginv(y_mc), 1e-12, 1.0 - 1e-12)
        return k * pi, pi
    if family.kind == "negative_binomial":
        k = np.asarray(k, dtype=float)[:, None]
        if link.is_probability:
            pi = np.clip(link.ginv(y_mc), 1e-12, 1.0 - 1e-12)
            return k * (1.0 - pi) / pi, pi
        m = link.ginv(y_mc)
        return k * m, 1.0 / (1.0 + m)
    return link.ginv(y_mc), None


def aggregate_regions(m_mc: np.ndarray, C_P: IncidenceMatrix, family: Family,
                      k_P=None):
    """Aggregate mean-process samples over prediction regions.

    Region samples are ``C_P @ M``; for size families the region
    probability process comes from the expectation link applied to the
    aggregated mean and the summed region size parameters.
    """
    m_P = C_P.matrix @ m_mc
    pi_P = None
    if family.has_size:
        if k_P is None:
            raise PredictError("size families need region size parameters")
        k_P = np.asarray(k_P, dtype=float)[:, None]
        if family.kind == "binomial":
            pi_P = np.clip(m_P / k_P, 1e-12, 1.0 - 1e-12)
        else:
            pi_P = k_P / (m_P + k_P)
    return m_P, pi_P


def region_size_params(k_bau: np.ndarray, supports) -> np.ndarray:
    """Sum cell-level size parameters over each region's index set."""
    return np.array(
        [np.asarray(k_bau)[np.asarray(c)].sum() for c in supports.bau_index_sets]
    )


def sample_predictive_data(m_mc: np.ndarray, family: Family, psi: float = 1.0,
                           k=None, rng: np.random.Generator | None = None):
    """One response draw per mean sample, conditionally independent."""
    rng = rng or np.random.default_rng()
    kk = None
    if family.has_size:
        if k is None:
            raise PredictError("size families need size parameters to sample data")
        kk = np.broadcast_to(np.asarray(k, dtype=float)[:, None], m_mc.shape)
    return sample_family(rng, family, m_mc, psi=psi, k=kk)


def summarize(samples: np.ndarray,
              percentiles=DEFAULT_PERCENTILES) -> SummaryTable:
    """Row-wise mean, standard deviation, and nearest-rank percentiles."""
    samples = np.atleast_2d(np.asarray(samples, dtype=float))
    if samples.shape[1] < 1:
        raise PredictError("need at least one sample column")
    pct = tuple(float(p) for p in percentiles)
    for p in pct:
        if not 0.0 <= p <= 100.0:
            raise PredictError(f"percentile {p} outside [0, 100]")
    n = samples.shape[1]
    srt = np.sort(samples, axis=1)
    cols = []
    for p in pct:
        rank = int(np.ceil(p / 100.0 * n))
        rank = min(max(rank, 1), n)
        cols.append(srt[:, rank - 1])
    sd = samples.std(axis=1, ddof=1) if n > 1 else np.zeros(samples.shape[0])
    return SummaryTable(
        mean=samples.mean(axis=1),
        sd=sd,
        percentiles=np.column_stack(cols) if cols else np.zeros((samples.shape[0], 0)),
        percentile_levels=pct,
    )


def predict_baus(fit, n_mc: int = DEFAULT_N_MC, percentiles=DEFAULT_PERCENTILES,
                 targets=("Y", "mu", "pi", "Z"), rng=None,
                 keep_samples: bool = False) -> PredictionResult:
    """Cell-level prediction of the requested targets."""
    rng = rng or np.random.default_rng()
    st = fit.structures
    spec = st.spec
    y_mc = sample_latent(fit, n_mc, rng)
    out_s, out_m = {}, {}

    def _add(name, samp):
        out_s[name] = summarize(samp, percentiles)
        if keep_samples:
            out_m[name] = samp

    if "Y" in targets:
        _add("Y", y_mc)
    need_mu = "mu" in targets or "Z" in targets
    need_pi = "pi" in targets and (spec.family.has_size or spec.link.is_probability)
    if need_mu or need_pi:
        mu_mc, pi_mc = transform_targets(y_mc, spec.family, spec.link, st.k_bau)
        if "mu" in targets and mu_mc is not None:
            _add("mu", mu_mc)
        if need_pi and pi_mc is not None:
            _add("pi", pi_mc)
        if "Z" in targets and mu_mc is not None:
            z_mc = sample_predictive_data(mu_mc, spec.family,
                                          psi=fit.theta_hat.psi,
                                          k=st.k_bau, rng=rng)
            _add("Z", z_mc)
    return PredictionResult(summaries=out_s, samples=out_m, n_mc=n_mc)


def predict_regions(fit, region_supports, n_mc: int = DEFAULT_N_MC,
                    percentiles=DEFAULT_PERCENTILES, rng=None,
                    keep_samples: bool = False,
                    targets=("mu", "pi", "Z")) -> PredictionResult:
    """Region-level prediction over arbitrary aggregation regions.

    The incidence matrix is built with the same relative weights and
    normalisation behaviour as the one used for fitting.
    """
    from .geometry import build_incidence

    rng = rng or np.random.default_rng()
    st = fit.structures
    spec = st.spec
    C_P = build_incidence(st.grid, region_supports,
                          normalise=spec.normalise_wts,
                          force_unit_sum=spec.family.has_size)
    y_mc = sample_latent(fit, n_mc, rng)
    mu_mc, _ = transform_targets(y_mc, spec.family, spec.link, st.k_bau)
    if mu_mc is None:
        raise PredictError("region prediction needs cell-level size parameters")
    k_P = None
    if spec.family.has_size:
        k_P = region_size_params(st.k_bau, region_supports)
    m_P, pi_P = aggregate_regions(mu_mc, C_P, spec.family, k_P)
    out_s, out_m = {}, {}

    def _add(name, samp):
        out_s[name] = summarize(samp, percentiles)
        if keep_samples:
            out_m[name] = samp

    if "mu" in targets:
        _add("mu", m_P)
    if "pi" in targets and pi_P is not None:
        _add("pi", pi_P)
    if "Z" in targets:
        z_P = sample_predictive_data(m_P, spec.family, psi=fit.theta_hat.psi,
                                     k=k_P, rng=rng)
        _add("Z", z_P)
    return PredictionResult(summaries=out_s, samples=out_m, n_mc=n_mc)
