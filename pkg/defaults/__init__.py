"""
Defaults package for the OSMEE estimator
Contains the numeric constants shared by the library, CLI and simulations
"""

from .constants import *

__all__ = [
    # Monte-Carlo
    'MC_SAMPLES',
    'MC_SAMPLES_DESK',
    'MC_SAMPLES_WARN',

    # Fitting loop
    'MAX_ITER',
    'TOL',
    'NAIVE_MAX_ITER',
    'NAIVE_TOL',
    'NAIVE_COEF_TOL',
    'HALVING_STEPS',
    'LOG10_LAMBDA_MIN',
    'LOG10_LAMBDA_MAX',
    'LAMBDA_GRID_SIZE',
    'RIDGE_JITTER',
    'PHI_MAX_ITER',
    'PHI_TOL',

    # Basis
    'BASIS_KIND',
    'BASIS_DIM',
    'BASIS_DIM_CHOICES',
    'TPRS_MAX_KNOTS',
    'BASIS_ALIASES',

    # Family / moments
    'LOGIT_EPS',
    'VARIANCE_FLOOR_REL',
    'MAD_SCALE',

    # Predictor model
    'PRIOR_VARIANCE_FLOOR',
    'DECONV_GRID_SIZE',
    'DECONV_GRID_PAD_SD',
    'DECONV_FREQ_POINTS',
    'DECONV_MIN_N',
    'NB_LOG_THETA_MIN',
    'NB_LOG_THETA_MAX',

    # Simulation laboratory
    'GRID_POINTS',
    'SKEW_ALPHA',
    'DESK_REPS',
    'DESK_N_LIST',
    'PAPER_REPS',
    'PAPER_N_LIST',
    'ESTIMATORS',
    'DEFAULT_ESTIMATORS',
    'SENSITIVITY_SIGMA_W2',

    # Output
    'STUDY_COLUMNS',
    'CURVE_COLUMNS',
    'SWEEP_COLUMNS',

    # Environment
    'CACHE_MB',
    'DEFAULT_SEED',
]
