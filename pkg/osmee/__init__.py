"""
Semiparametric GLM regression with an error-prone predictor (OSMEE)
"""

from .basis import BasisDesign, BasisExpansion, BasisKind, build_basis, evaluate_basis, make_basis, penalty_matrix
from .errors import (
    BasisError,
    ConfigError,
    DomainError,
    FitError,
    InputError,
    MonteCarloError,
    OsmeeError,
    OsmeeWarning,
)
from .estimator import OsmeeConfig, OsmeeFit, estimate_nb_shape, predict_curve, qgcv, run_osmee
from .family import FamilySpec, ScaleParams, deviance, get_family, mean_deriv, mean_eval, variance_eval
from .moments import (
    CoefficientVector,
    LinearizedRow,
    PosteriorDesign,
    assemble_working_model,
    linearize,
    mc_conditional_mean,
    mc_conditional_variance,
)
from .predictor_model import (
    DeconvDensity,
    ErrorModel,
    GaussianPrior,
    deconvolve_density,
    estimate_prior_moments,
    kernel_density,
    posterior_params,
    sample_deconv_posterior,
    sample_gaussian_posterior,
    sample_posterior,
)
from .simlab import (
    SimCase,
    builtin_cases,
    evaluate_fit,
    generate_dataset,
    reliability_ratio,
    run_study,
    sample_skew_normal,
    sensitivity_sweep,
    study_grid,
)
from .working_fit import FitResult, WorkingModel, criterion, fit_heteroscedastic, fit_naive_glm

__all__ = [
    # Families
    'FamilySpec', 'ScaleParams', 'get_family', 'mean_eval', 'mean_deriv', 'variance_eval', 'deviance',
    # Bases
    'BasisKind', 'BasisDesign', 'BasisExpansion', 'build_basis', 'evaluate_basis', 'penalty_matrix', 'make_basis',
    # Predictor model
    'ErrorModel', 'GaussianPrior', 'DeconvDensity', 'estimate_prior_moments', 'posterior_params',
    'sample_gaussian_posterior', 'deconvolve_density', 'kernel_density', 'sample_deconv_posterior', 'sample_posterior',
    # Moments
    'LinearizedRow', 'CoefficientVector', 'PosteriorDesign', 'mc_conditional_mean', 'linearize',
    'mc_conditional_variance', 'assemble_working_model',
    # Working fits
    'WorkingModel', 'FitResult', 'fit_naive_glm', 'fit_heteroscedastic', 'criterion',
    # Estimator
    'OsmeeConfig', 'OsmeeFit', 'run_osmee', 'qgcv', 'predict_curve', 'estimate_nb_shape',
    # Simulation lab
    'SimCase', 'builtin_cases', 'sample_skew_normal', 'generate_dataset', 'evaluate_fit', 'run_study',
    'reliability_ratio', 'sensitivity_sweep', 'study_grid',
    # Errors
    'OsmeeError', 'OsmeeWarning', 'ConfigError', 'DomainError', 'BasisError', 'MonteCarloError', 'FitError',
    'InputError',
]
