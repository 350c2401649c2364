"""
Latent-predictor model: classical Gaussian measurement error w = x + N(0, sigma_w^2),
the Gaussian-prior posterior x | w, method-of-moments prior estimation and
deconvolution-weighted posterior sampling

References:

 - Stefanski, L. A. & Carroll, R. J. (1990). Deconvolving kernel density estimators.
 - Delaigle, A. & Gijbels, I. (2002). Estimation of integrated squared density
   derivatives from a contaminated sample.
"""

import logging
from dataclasses import dataclass
from typing import Dict, Optional, Tuple

import numpy as np
from scipy import optimize
from scipy.integrate import trapezoid

from defaults import (
    DECONV_FREQ_POINTS,
    DECONV_GRID_PAD_SD,
    DECONV_GRID_SIZE,
    DECONV_MIN_N,
    PRIOR_VARIANCE_FLOOR,
)
from .errors import ConfigError, DomainError, warn
from .parallel import map_ordered

logger = logging.getLogger(__name__)

SAMPLERS = ("gaussian", "deconv")

# second moment of the kernel whose characteristic function is (1 - t^2)^3 on [-1, 1]
_KERNEL_MU2 = 6.0
_ROWS_PER_TASK = 64


@dataclass(frozen=True)
class ErrorModel:
    """Classical measurement error with variance sigma_w2 (0 = error-free predictor)."""

    sigma_w2: float

    def __post_init__(self):
        if not np.isfinite(self.sigma_w2) or self.sigma_w2 < 0:
            raise DomainError(f"sigma_w2 must be non-negative, got {self.sigma_w2}")

    @classmethod
    def from_sd(cls, sigma_w: float) -> "ErrorModel":
        if sigma_w < 0:
            raise DomainError(f"sigma_w must be non-negative, got {sigma_w}")
        return cls(sigma_w2=float(sigma_w) ** 2)

    @property
    def sigma_w(self) -> float:
        return float(np.sqrt(self.sigma_w2))


@dataclass(frozen=True)
class GaussianPrior:
    mu_x: float
    sigma_x2: float

    def __post_init__(self):
        if not self.sigma_x2 > 0:
            raise DomainError(f"sigma_x2 must be positive, got {self.sigma_x2}")


@dataclass
class DeconvDensity:
    """Deconvolution estimate of the density of x on an equispaced grid."""

    grid: np.ndarray
    density: np.ndarray
    bandwidth: float

    def __post_init__(self):
        if self.grid.shape != self.density.shape:
            raise DomainError("grid and density lengths differ")
        if np.any(np.diff(self.grid) <= 0):
            raise DomainError("deconvolution grid must be increasing")
        if np.any(self.density < 0):
            raise DomainError("density must be non-negative")

    @property
    def spacing(self) -> float:
        return float(self.grid[1] - self.grid[0])

    def moments(self) -> GaussianPrior:
        mass = trapezoid(self.density, self.grid)
        mean = trapezoid(self.grid * self.density, self.grid) / mass
        var = trapezoid((self.grid - mean) ** 2 * self.density, self.grid) / mass
        return GaussianPrior(mu_x=float(mean), sigma_x2=float(max(var, self.spacing ** 2)))


@dataclass
class PosteriorSampleSet:
    """n x S draws x_is from x_i | w_i."""

    samples: np.ndarray
    seed: int
    sampler: str = "gaussian"

    @property
    def n(self) -> int:
        return self.samples.shape[0]

    @property
    def S(self) -> int:
        return self.samples.shape[1]

    def summary(self) -> Dict[str, float]:
        return {
            "sampler": self.sampler,
            "n": self.n,
            "S": self.S,
            "seed": self.seed,
            "mean_of_draws": float(self.samples.mean()),
            "mean_row_sd": float(self.samples.std(axis=1, ddof=1).mean()) if self.S > 1 else 0.0,
            "min_draw": float(self.samples.min()),
            "max_draw": float(self.samples.max()),
        }


# ---------------------------------------------------------------------- #
# Gaussian prior
# ---------------------------------------------------------------------- #

def estimate_prior_moments(w, err: ErrorModel) -> GaussianPrior:
    """
    Method-of-moments prior for x: mean of w, variance of w minus sigma_w^2

    The variance is floored at 5% of Var(w) so the posterior stays defined when
    Var(w) < sigma_w^2.
    """
    w = np.asarray(w, dtype=float)
    if w.size < 3:
        raise DomainError(f"need at least 3 observations to estimate the prior, got {w.size}")
    var_w = float(np.var(w, ddof=1))
    floor = PRIOR_VARIANCE_FLOOR * var_w
    sigma_x2 = max(var_w - err.sigma_w2, floor)
    if sigma_x2 == floor and err.sigma_w2 > 0:
        logger.info("prior variance floor engaged: Var(w)=%g, sigma_w2=%g", var_w, err.sigma_w2)
    return GaussianPrior(mu_x=float(np.mean(w)), sigma_x2=sigma_x2)


def posterior_params(prior: GaussianPrior, err: ErrorModel, w_i) -> Tuple[np.ndarray, np.ndarray]:
    """Mean and variance of x_i | w_i under the Gaussian prior (shrinkage towards mu_x)."""
    w_i = np.asarray(w_i, dtype=float)
    if err.sigma_w2 == 0:
        return w_i.copy(), np.zeros_like(w_i)
    total = prior.sigma_x2 + err.sigma_w2
    mean = (prior.sigma_x2 * w_i + prior.mu_x * err.sigma_w2) / total
    var = prior.sigma_x2 * err.sigma_w2 / total
    return mean, np.full_like(w_i, var)


def _row_chunks(n: int):
    return [(start, min(start + _ROWS_PER_TASK, n)) for start in range(0, n, _ROWS_PER_TASK)]


def sample_gaussian_posterior(prior: GaussianPrior, err: ErrorModel, w, S: int, seed: int,
                              threads: Optional[int] = None) -> PosteriorSampleSet:
    """
    Draw S values per observation from the Gaussian posterior

    Row i uses its own generator seeded with seed + i, so the draws do not depend
    on the thread schedule.
    """
    if S < 2:
        raise ConfigError(f"S must be at least 2, got {S}")
    w = np.asarray(w, dtype=float)
    mean, var = posterior_params(prior, err, w)
    sd = np.sqrt(var)
    out = np.empty((w.size, S))

    def fill(bounds):
        for i in range(*bounds):
            rng = np.random.default_rng(seed + i)
            out[i] = mean[i] + sd[i] * rng.standard_normal(S)

    map_ordered(fill, _row_chunks(w.size), threads)
    return PosteriorSampleSet(samples=out, seed=seed, sampler="gaussian")


# ---------------------------------------------------------------------- #
# Deconvolution
# ---------------------------------------------------------------------- #

def _kernel_ft(s):
    s = np.asarray(s, dtype=float)
    return np.where(np.abs(s) <= 1.0, (1.0 - s ** 2) ** 3, 0.0)


def _error_ft(t, sigma_w: float):
    return np.exp(-0.5 * (sigma_w * t) ** 2)


def _empirical_ft(w: np.ndarray, t: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    phase = np.outer(t, w)
    return np.cos(phase).mean(axis=1), np.sin(phase).mean(axis=1)


def _fourier_density(w: np.ndarray, grid: np.ndarray, bandwidth: float, sigma_w: float) -> np.ndarray:
    """Deconvoluting kernel estimate by direct Fourier inversion, clipped and normalized."""
    t = np.linspace(0.0, 1.0 / bandwidth, DECONV_FREQ_POINTS)
    quad = np.full(t.size, t[1] - t[0])
    quad[[0, -1]] *= 0.5
    cos_w, sin_w = _empirical_ft(w, t)
    factor = quad * _kernel_ft(t * bandwidth) / _error_ft(t, sigma_w)
    phase = np.outer(grid, t)
    density = (np.cos(phase) @ (cos_w * factor) + np.sin(phase) @ (sin_w * factor)) / np.pi
    density = np.maximum(density, 0.0)
    mass = trapezoid(density, grid)
    if not mass > 0:
        raise DomainError("deconvolution density has no positive mass on the grid")
    return density / mass


def _amise(h: float, n: int, sigma_w: float, theta4: float) -> float:
    s = np.linspace(0.0, 1.0, DECONV_FREQ_POINTS)
    with np.errstate(over="ignore"):
        ratio = _kernel_ft(s) ** 2 / _error_ft(s / h, sigma_w) ** 2
    variance = trapezoid(ratio, s) / (np.pi * n * h)
    return float(variance + 0.25 * h ** 4 * _KERNEL_MU2 ** 2 * theta4)


def _minimize_log(func, lo: float, hi: float, points: int = 200) -> float:
    """Grid search on log scale, refined with a bounded scalar minimizer."""
    grid = np.linspace(np.log(lo), np.log(hi), points)
    values = np.array([func(np.exp(g)) for g in grid])
    values[~np.isfinite(values)] = np.inf
    best = int(np.argmin(values))
    if not np.isfinite(values[best]):
        raise FloatingPointError("objective is not finite anywhere on the search grid")
    left, right = grid[max(best - 1, 0)], grid[min(best + 1, points - 1)]
    if right > left:
        res = optimize.minimize_scalar(lambda g: func(np.exp(g)), bounds=(left, right), method="bounded")
        if res.success and np.isfinite(res.fun) and res.fun <= values[best]:
            return float(np.exp(res.x))
    return float(np.exp(grid[best]))


def _normal_reference_theta(sd: float, order: int) -> float:
    if order == 4:
        return 3.0 / (8.0 * np.sqrt(np.pi) * sd ** 5)
    return 15.0 / (16.0 * np.sqrt(np.pi) * sd ** 7)


def normal_reference_bandwidth(w, sigma_w: float) -> float:
    """AMISE-optimal bandwidth with the density functional taken from a normal reference."""
    w = np.asarray(w, dtype=float)
    var_w = float(np.var(w, ddof=1))
    sd_x = np.sqrt(max(var_w - sigma_w ** 2, PRIOR_VARIANCE_FLOOR * var_w))
    theta4 = _normal_reference_theta(sd_x, 4)
    return _minimize_log(lambda h: _amise(h, w.size, sigma_w, theta4), sd_x * 1e-3, sd_x * 5.0)


def plugin_bandwidth(w, sigma_w: float) -> float:
    """
    Two-stage plug-in bandwidth for the deconvoluting kernel estimator

    Stage 1 takes the sixth-order functional from a normal reference with the
    moment-corrected variance of x and chooses the pilot bandwidth g that
    cancels the leading bias terms of the estimate of int (f'')^2. Stage 2
    estimates that functional from the contaminated sample with bandwidth g and
    minimizes the deconvolution AMISE over h.
    """
    w = np.asarray(w, dtype=float)
    n = w.size
    var_w = float(np.var(w, ddof=1))
    sd_x = np.sqrt(max(var_w - sigma_w ** 2, PRIOR_VARIANCE_FLOOR * var_w))
    theta6 = _normal_reference_theta(sd_x, 6)

    def pilot_bias(g: float) -> float:
        t = np.linspace(0.0, 1.0 / g, DECONV_FREQ_POINTS)
        with np.errstate(over="ignore"):
            noise = trapezoid(t ** 4 * _kernel_ft(t * g) ** 2 / _error_ft(t, sigma_w) ** 2, t) / (np.pi * n)
        return abs(noise - _KERNEL_MU2 * g ** 2 * theta6)

    g = _minimize_log(pilot_bias, sd_x * 1e-3, sd_x * 5.0)
    t = np.linspace(0.0, 1.0 / g, DECONV_FREQ_POINTS)
    cos_w, sin_w = _empirical_ft(w, t)
    with np.errstate(over="ignore"):
        integrand = t ** 4 * (cos_w ** 2 + sin_w ** 2) * _kernel_ft(t * g) ** 2 / _error_ft(t, sigma_w) ** 2
    theta4 = trapezoid(integrand, t) / np.pi
    if not np.isfinite(theta4) or theta4 <= 0:
        raise FloatingPointError(f"plug-in estimate of int (f'')^2 is not usable ({theta4})")
    logger.debug("plug-in bandwidth: pilot g=%g, theta4=%g", g, theta4)
    return _minimize_log(lambda h: _amise(h, n, sigma_w, theta4), sd_x * 1e-3, sd_x * 5.0)


def kernel_density(w, grid, bandwidth: float) -> np.ndarray:
    """Error-free kernel density estimate with the same kernel (sigma_w = 0)."""
    return _fourier_density(np.asarray(w, dtype=float), np.asarray(grid, dtype=float), bandwidth, 0.0)


def deconvolve_density(w, err: ErrorModel, grid_size: int = DECONV_GRID_SIZE,
                       bandwidth: Optional[float] = None) -> DeconvDensity:
    """
    Deconvoluting kernel density estimate of x from contaminated observations w

    Args:
        w: Observed predictor values
        err: Measurement error model (sigma_w2 > 0)
        grid_size: Number of equispaced grid points over [min w - 3 sigma_w, max w + 3 sigma_w]
        bandwidth: Fixed bandwidth; None selects it by the plug-in rule

    Returns:
        DeconvDensity normalized to integrate to one on the grid
    """
    w = np.asarray(w, dtype=float)
    if err.sigma_w2 <= 0:
        raise DomainError("deconvolution requires sigma_w2 > 0")
    if grid_size < 2:
        raise ConfigError(f"grid_size must be at least 2, got {grid_size}")
    if w.size < DECONV_MIN_N:
        warn(f"deconvolution with only {w.size} observations (recommended >= {DECONV_MIN_N})", logger)
    sigma_w = err.sigma_w
    if bandwidth is None:
        try:
            bandwidth = plugin_bandwidth(w, sigma_w)
        except (FloatingPointError, ValueError, ArithmeticError) as e:
            warn(f"plug-in bandwidth search failed ({e}); using normal-reference bandwidth", logger)
            bandwidth = normal_reference_bandwidth(w, sigma_w)
    grid = np.linspace(w.min() - DECONV_GRID_PAD_SD * sigma_w, w.max() + DECONV_GRID_PAD_SD * sigma_w, grid_size)
    density = _fourier_density(w, grid, bandwidth, sigma_w)
    return DeconvDensity(grid=grid, density=density, bandwidth=float(bandwidth))


def sample_deconv_posterior(dens: DeconvDensity, err: ErrorModel, w, S: int, seed: int,
                            threads: Optional[int] = None) -> PosteriorSampleSet:
    """
    Draw from x_i | w_i with weights f_x(grid) * N(w_i; grid, sigma_w^2)

    Draws land on grid points and are jittered uniformly within half a grid
    spacing. Observations whose weights all underflow fall back to the Gaussian
    posterior built from the density's own mean and variance.
    """
    if S < 2:
        raise ConfigError(f"S must be at least 2, got {S}")
    if err.sigma_w2 <= 0:
        raise DomainError("deconvolution sampling requires sigma_w2 > 0")
    w = np.asarray(w, dtype=float)
    half = 0.5 * dens.spacing
    out = np.empty((w.size, S))
    fallback = []

    def fill(bounds):
        failed = []
        for i in range(*bounds):
            rng = np.random.default_rng(seed + i)
            weights = dens.density * np.exp(-0.5 * (w[i] - dens.grid) ** 2 / err.sigma_w2)
            cdf = np.cumsum(weights)
            if not cdf[-1] > 0:
                failed.append(i)
                continue
            idx = np.searchsorted(cdf, rng.random(S) * cdf[-1], side="right")
            idx = np.minimum(idx, dens.grid.size - 1)
            out[i] = dens.grid[idx] + rng.uniform(-half, half, S)
        return failed

    for failed in map_ordered(fill, _row_chunks(w.size), threads):
        fallback.extend(failed)
    if fallback:
        warn(f"deconvolution weights vanished for {len(fallback)} observation(s); using Gaussian posterior for them", logger)
        prior = dens.moments()
        mean, var = posterior_params(prior, err, w)
        for i in fallback:
            rng = np.random.default_rng(seed + i)
            out[i] = mean[i] + np.sqrt(var[i]) * rng.standard_normal(S)
    return PosteriorSampleSet(samples=out, seed=seed, sampler="deconv")


def sample_posterior(sampler: str, w, err: ErrorModel, S: int, seed: int,
                     threads: Optional[int] = None) -> Tuple[PosteriorSampleSet, Dict[str, float]]:
    """
    Step 1 of the estimator: posterior draws for every observation

    Returns:
        (sample set, dictionary describing the fitted predictor model)
    """
    if sampler not in SAMPLERS:
        raise ConfigError(f"Unknown sampler '{sampler}'. Choose from {', '.join(SAMPLERS)}")
    if sampler == "gaussian" or err.sigma_w2 == 0:
        prior = estimate_prior_moments(w, err)
        draws = sample_gaussian_posterior(prior, err, w, S, seed, threads)
        return draws, {"mu_x": prior.mu_x, "sigma_x2": prior.sigma_x2}
    dens = deconvolve_density(w, err)
    draws = sample_deconv_posterior(dens, err, w, S, seed, threads)
    summary = dens.moments()
    return draws, {"mu_x": summary.mu_x, "sigma_x2": summary.sigma_x2, "bandwidth": dens.bandwidth}
