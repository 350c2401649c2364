"""
Constants for the OSMEE library, CLI and simulation laboratory
"""

# Monte-Carlo draws per observation from x_i | w_i
MC_SAMPLES = 3000
MC_SAMPLES_DESK = 1000
MC_SAMPLES_WARN = 100

# Fitting loop
MAX_ITER = 50
TOL = 1e-4
NAIVE_MAX_ITER = 200
NAIVE_TOL = 1e-8
NAIVE_COEF_TOL = 1e-10
HALVING_STEPS = 20

# Smoothing-parameter search: log10(lambda) range, coarse grid size
LOG10_LAMBDA_MIN = -8.0
LOG10_LAMBDA_MAX = 8.0
LAMBDA_GRID_SIZE = 33
RIDGE_JITTER = 1e-10
PHI_MAX_ITER = 25
PHI_TOL = 1e-6

# Basis defaults
BASIS_KIND = "thin_plate"
BASIS_DIM = 40
BASIS_DIM_CHOICES = (10, 25, 40)
TPRS_MAX_KNOTS = 2000
BASIS_ALIASES = {
    "tp": "thin_plate",
    "cr": "cubic_regression",
    "ps": "p_spline",
    "tr": "truncated_linear",
}

# Family numerics
LOGIT_EPS = 1e-12
VARIANCE_FLOOR_REL = 1e-8
MAD_SCALE = 1.4826

# Predictor model
PRIOR_VARIANCE_FLOOR = 0.05
DECONV_GRID_SIZE = 512
DECONV_GRID_PAD_SD = 3.0
DECONV_FREQ_POINTS = 401
DECONV_MIN_N = 30

# Negative-binomial shape search on log(theta)
NB_LOG_THETA_MIN = -6.0
NB_LOG_THETA_MAX = 6.0

# Simulation laboratory
GRID_POINTS = 101
SKEW_ALPHA = 6.0
DESK_REPS = 50
DESK_N_LIST = (2**7, 2**8, 2**9)
PAPER_REPS = 300
PAPER_N_LIST = (2**7, 2**8, 2**9, 2**10, 2**11)
ESTIMATORS = ("naive", "osmee_gaussian", "osmee_deconv", "osmee_gaussian_gcv")
DEFAULT_ESTIMATORS = ("naive", "osmee_gaussian")

# Sensitivity analysis
SENSITIVITY_SIGMA_W2 = (0.0, 1.0, 4.0, 9.0, 16.0)

# CSV output
STUDY_COLUMNS = [
    "case", "family", "xdist", "estimator", "n",
    "reps_used", "reps_failed", "mse", "bias2_fraction", "runtime_sec",
]
CURVE_COLUMNS = ["d", "fitted_mean"]
SWEEP_COLUMNS = ["sigma_w2", "d", "fitted_mean"]

# Environment defaults
CACHE_MB = 256
DEFAULT_SEED = 0
