"""Low-rank spatial and spatio-temporal prediction for exponential-family
data: a latent Gaussian field expanded in multiresolution basis functions
over a cell grid, fitted by Laplace-approximated maximum likelihood, with
Monte Carlo prediction over cells and arbitrary aggregation regions."""

from .basis import BasisSet, auto_basis, eval_basis, temporal_basis, tensor_basis
from .covpar import (
    CoefPrior,
    ar1_precision,
    build_K,
    build_Q_dist,
    build_Q_leroux,
    build_Q_spacetime,
    spherical_taper,
)
from .diagnostics import brier, coverage, crps_empirical, interval_score, mae, mape, rmspe
from .estimate import FitOptions, FitResult, expand_fs_variances, fit, resolve_sigma2fs
from .family import Family, Link, log_density, mean_from_latent, validate_combination
from .geometry import (
    BAUGrid,
    BAUIndexSet,
    IncidenceMatrix,
    Point,
    Rect,
    SupportSet,
    build_bau_grid,
    build_incidence,
    map_supports,
)
from .laplace import LaplaceResult, RandomEffects, complete_loglik, inner_mode, laplace_objective
from .model import ModelSpec, ModelState, ObservationSet, build_structures
from .predict import (
    PredictionResult,
    aggregate_regions,
    predict_baus,
    predict_regions,
    sample_latent,
    sample_predictive_data,
    summarize,
    transform_targets,
)
from .simulate import simulate_scenario

__version__ = "0.1.0"
