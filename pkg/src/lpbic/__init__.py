"""Penalized factor-analytic Gaussian mixtures with BIC and LASSO-penalized
BIC model selection.

The public surface mirrors the workflow: build or load data, fit single
cells with :func:`fit`, sweep a grid with :func:`grid_search`, and study
selection behaviour over repeated draws with :func:`replicate_experiment`.
"""

from ._version import __version__
from .aecm import (
    DEFAULT_SEED,
    FitConfig,
    FitResult,
    PenaltyConfig,
    fit,
    resolve_lambda,
    soft_threshold,
    update_covariance_stage2,
    update_mu_soft_threshold,
    update_pi,
)
from .errors import (
    DegenerateComponentError,
    FitFailureError,
    LpbicError,
    SearchFailureError,
)
from .evaluation import (
    ExperimentReport,
    SimSpec,
    adjusted_rand_index,
    contingency_table,
    replicate_experiment,
    simulate,
)
from .mixture import (
    COVARIANCE_CODES,
    DataMatrix,
    MixtureParams,
    ModelDescriptor,
    Responsibilities,
    component_log_densities,
    log_density_woodbury,
    log_likelihood,
    penalty_value,
    responsibilities,
)
from .selection import (
    CriterionValue,
    SelectionRow,
    SelectionTable,
    compute_bic,
    compute_lpbic,
    count_free_parameters,
    grid_search,
    lasso_penalty_term,
    model_grid,
)

__all__ = [
    "__version__",
    "DEFAULT_SEED",
    "COVARIANCE_CODES",
    "DataMatrix",
    "ModelDescriptor",
    "MixtureParams",
    "Responsibilities",
    "PenaltyConfig",
    "FitConfig",
    "FitResult",
    "CriterionValue",
    "SelectionRow",
    "SelectionTable",
    "SimSpec",
    "ExperimentReport",
    "LpbicError",
    "DegenerateComponentError",
    "FitFailureError",
    "SearchFailureError",
    "log_density_woodbury",
    "component_log_densities",
    "log_likelihood",
    "penalty_value",
    "responsibilities",
    "update_pi",
    "soft_threshold",
    "update_mu_soft_threshold",
    "update_covariance_stage2",
    "resolve_lambda",
    "fit",
    "count_free_parameters",
    "compute_bic",
    "compute_lpbic",
    "lasso_penalty_term",
    "model_grid",
    "grid_search",
    "adjusted_rand_index",
    "contingency_table",
    "simulate",
    "replicate_experiment",
]
