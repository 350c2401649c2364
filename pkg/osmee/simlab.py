"""
Simulation lab: the four benchmark regression cases, data generation with
Gaussian or skew-normal true predictors, replicate studies with MSE / squared
bias decomposition, reliability ratios and the measurement-error sensitivity
sweep used on real data
"""

import logging
import time
from dataclasses import dataclass, replace
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from defaults import (
    DEFAULT_ESTIMATORS,
    ESTIMATORS,
    GRID_POINTS,
    SENSITIVITY_SIGMA_W2,
    SKEW_ALPHA,
    STUDY_COLUMNS,
    SWEEP_COLUMNS,
)
from .errors import ConfigError, DomainError, OsmeeError, warn
from .estimator import OsmeeConfig, run_osmee
from .family import ScaleParams, get_family
from .parallel import map_ordered
from .predictor_model import ErrorModel

logger = logging.getLogger(__name__)

XDISTS = ("gaussian", "skew_normal", "skew6")


@dataclass(frozen=True)
class SimCase:
    """
    One benchmark case: grid [a, b], error and predictor moments, family shapes
    and the regression function m on the linear-predictor scale
    """

    id: int
    a: float
    b: float
    sigma_w2: float
    mu_x: float
    sigma_x2: float
    theta: float
    gamma: float
    m: Callable[[np.ndarray], np.ndarray]

    def __post_init__(self):
        if not self.a < self.b:
            raise ConfigError(f"case {self.id}: need a < b, got [{self.a}, {self.b}]")
        if min(self.sigma_w2, self.sigma_x2, self.theta, self.gamma) <= 0:
            raise ConfigError(f"case {self.id}: variances and shapes must be positive")


def _case3(x):
    x = np.asarray(x, dtype=float)
    return 100.0 * np.clip(x, 0.0, None) ** 3 * np.clip(1.0 - x, 0.0, None) ** 3


def builtin_cases() -> List[SimCase]:
    """The four benchmark cases, ids 1 to 4."""
    return [
        SimCase(1, 0.1, 0.9, 0.141 ** 2, 0.5, 0.25 ** 2, 6.0, 2.0,
                lambda x: 2.0 * np.sin(4.0 * np.pi * np.asarray(x, dtype=float))),
        SimCase(2, -2.0, 2.0, 0.8 ** 2, 0.0, 1.0, 3.0, 6.0,
                lambda x: 2.0 * np.tanh(np.asarray(x, dtype=float))),
        SimCase(3, 0.1, 0.9, 0.11 ** 2, 0.5, 0.25 ** 2, 1.5, 10.0, _case3),
        # bump function plus a decaying trend
        SimCase(4, 0.3, 0.8, 0.075 ** 2, 0.6, 0.12 ** 2, 5.0, 4.0,
                lambda x: 2.0 * np.exp(-60.0 * (np.asarray(x, dtype=float) - 0.6) ** 2)
                + 0.25 / (0.1 + np.asarray(x, dtype=float))),
    ]


def get_case(case_id: int) -> SimCase:
    for case in builtin_cases():
        if case.id == case_id:
            return case
    raise ConfigError(f"Unknown case {case_id}. Choose from 1, 2, 3, 4")


def study_grid(case: SimCase, points: int = GRID_POINTS) -> np.ndarray:
    """Equispaced evaluation grid on [a, b], endpoints included."""
    return np.linspace(case.a, case.b, points)


def sample_skew_normal(target_mean: float, target_sd: float, alpha: float, n: int, seed: int) -> np.ndarray:
    """
    Skew-normal draws with the given mean and standard deviation

    Location and scale are matched to the moments of SN(xi, omega, alpha); the
    draws use xi + omega (delta |Z1| + sqrt(1 - delta^2) Z2).
    """
    if not target_sd > 0:
        raise DomainError(f"target_sd must be positive, got {target_sd}")
    delta = alpha / np.sqrt(1.0 + alpha ** 2)
    omega = target_sd / np.sqrt(1.0 - 2.0 * delta ** 2 / np.pi)
    xi = target_mean - omega * delta * np.sqrt(2.0 / np.pi)
    rng = np.random.default_rng(seed)
    z1 = np.abs(rng.standard_normal(n))
    z2 = rng.standard_normal(n)
    return xi + omega * (delta * z1 + np.sqrt(1.0 - delta ** 2) * z2)


def _parse_xdist(xdist: str) -> float:
    """Skewness parameter of a predictor distribution name (0 for gaussian)."""
    if xdist == "gaussian":
        return 0.0
    if xdist in ("skew_normal", "skew6"):
        return SKEW_ALPHA
    if xdist.startswith("skew_normal:"):
        try:
            return float(xdist.split(":", 1)[1])
        except ValueError:
            pass
    raise ConfigError(f"Unknown predictor distribution '{xdist}'. Choose from gaussian, skew_normal, skew6, skew_normal:<alpha>")


def case_scale(case: SimCase, family: str) -> ScaleParams:
    if family == "negative_binomial":
        return ScaleParams(theta=case.theta)
    if family == "gamma":
        return ScaleParams(theta=case.gamma)
    return ScaleParams()


def generate_dataset(case: SimCase, family: str, n: int, xdist: str = "gaussian",
                     seed: int = 0, sigma_w2: Optional[float] = None) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    One simulated data set (y, x, w)

    Args:
        case: Benchmark case
        family: Response family; m(x) is on the family's link scale
        n: Sample size
        xdist: 'gaussian', 'skew_normal' (alpha = 6) or 'skew_normal:<alpha>'
        seed: Seed of the data-set generator
        sigma_w2: Override of the case's measurement-error variance
    """
    if n < 8:
        raise ConfigError(f"n must be at least 8, got {n}")
    spec = get_family(family)
    alpha = _parse_xdist(xdist)
    rng = np.random.default_rng(seed)
    sd_x = float(np.sqrt(case.sigma_x2))
    if alpha == 0.0:
        x = case.mu_x + sd_x * rng.standard_normal(n)
    else:
        x = sample_skew_normal(case.mu_x, sd_x, alpha, n, int(rng.integers(2 ** 31)))
    s2 = case.sigma_w2 if sigma_w2 is None else sigma_w2
    w = x + np.sqrt(s2) * rng.standard_normal(n) if s2 > 0 else x.copy()
    mu = spec.mean(case.m(x))
    y = spec.sample(mu, case_scale(case, spec.name), rng)
    return y, x, w


def evaluate_fit(curve, truth) -> np.ndarray:
    """Pointwise squared error of a fitted curve on the evaluation grid."""
    curve = np.asarray(curve, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if curve.shape != truth.shape:
        raise DomainError(f"curve and truth differ in length ({curve.size} vs {truth.size})")
    return (curve - truth) ** 2


def decompose_errors(errors: np.ndarray) -> Tuple[float, float]:
    """
    MSE and squared-bias fraction of a (replicates x grid) array of signed errors

    Returns:
        (mean over grid and replicates of error^2, mean squared bias / MSE clipped to [0, 1])
    """
    errors = np.asarray(errors, dtype=float)
    mse = float(np.mean(errors ** 2))
    bias2 = float(np.mean(np.mean(errors, axis=0) ** 2))
    fraction = float(np.clip(bias2 / mse, 0.0, 1.0)) if mse > 0 else 0.0
    return mse, fraction


def estimator_config(estimator: str, base: OsmeeConfig) -> Optional[OsmeeConfig]:
    """OsmeeConfig of a study estimator label (None for the naive fit)."""
    if estimator not in ESTIMATORS:
        raise ConfigError(f"Unknown estimator '{estimator}'. Choose from {', '.join(ESTIMATORS)}")
    if estimator == "naive":
        return None
    if estimator == "osmee_deconv":
        return replace(base, sampler="deconv", method="reml")
    if estimator == "osmee_gaussian_gcv":
        return replace(base, sampler="gaussian", method="gcv")
    return replace(base, sampler="gaussian", method="reml")


def posterior_seed_base(seed: int, reps: int, n: int, replicate: int) -> int:
    """First row seed of a replicate's posterior draws; rows use base + i for i < n."""
    return seed + reps + replicate * n


def run_study(case: SimCase, family: str, n_list: Sequence[int], reps: int,
              estimators: Sequence[str] = DEFAULT_ESTIMATORS, xdist: str = "gaussian",
              seed: int = 0, config: Optional[OsmeeConfig] = None,
              threads: Optional[int] = None, output: Optional[str] = None) -> pd.DataFrame:
    """
    Replicate study of one case and family

    Replicate r of sample size n uses data seed seed + r (shared across
    estimators, so they see the same data). Its posterior draws start at
    posterior_seed_base(seed, reps, n, r), past every data seed and every
    other replicate's rows.
    Failing replicates are excluded and counted.

    Args:
        case: Benchmark case
        family: Response family
        n_list: Sample sizes
        reps: Replicates per sample size (>= 2)
        estimators: Labels from ESTIMATORS
        xdist: Predictor distribution
        seed: Base seed
        config: Base OSMEE settings (basis, dimension, S, ...)
        threads: Replicate fan-out cap
        output: Optional CSV path

    Returns:
        DataFrame with STUDY_COLUMNS, one row per (estimator, n)
    """
    if reps < 2:
        raise ConfigError(f"reps must be at least 2, got {reps}")
    _parse_xdist(xdist)
    base = replace(config or OsmeeConfig(family=family), family=family, threads=1)
    configs = {name: estimator_config(name, base) for name in estimators}
    grid = study_grid(case)
    spec = base.family_spec
    truth = spec.mean(case.m(grid))
    err = ErrorModel(case.sigma_w2)
    shape_cfg = {"negative_binomial": {"theta": case.theta}, "gamma": {"gamma": case.gamma}}.get(spec.name, {})

    rows = []
    for n in n_list:
        def replicate(r: int) -> Dict[str, Tuple[Optional[np.ndarray], float]]:
            y, _, w = generate_dataset(case, family, n, xdist, seed + r)
            post_seed = posterior_seed_base(seed, reps, n, r)
            out = {}
            for name, cfg in configs.items():
                started = time.perf_counter()
                try:
                    if cfg is None:
                        fit = run_osmee(y, w, ErrorModel(0.0), replace(base, seed=post_seed, **shape_cfg))
                    else:
                        fit = run_osmee(y, w, err, replace(cfg, seed=post_seed, **shape_cfg))
                    curve = fit.predict(grid)
                except OsmeeError as exc:
                    logger.info("case %d n=%d replicate %d %s failed: %s", case.id, n, r, name, exc)
                    curve = None
                out[name] = (curve, time.perf_counter() - started)
            return out

        results = map_ordered(replicate, range(reps), threads)
        for name in estimators:
            curves = [res[name][0] for res in results]
            used = [c for c in curves if c is not None]
            runtime = float(sum(res[name][1] for res in results))
            if used:
                mse, fraction = decompose_errors(np.vstack(used) - truth)
            else:
                mse, fraction = np.nan, np.nan
            failed = reps - len(used)
            if failed:
                warn(f"case {case.id}, {name}, n={n}: {failed} of {reps} replicates failed", logger)
            rows.append({
                "case": case.id, "family": family, "xdist": xdist, "estimator": name, "n": n,
                "reps_used": len(used), "reps_failed": failed, "mse": mse,
                "bias2_fraction": fraction, "runtime_sec": runtime,
            })
        logger.info("case %d, %s, n=%d done", case.id, family, n)

    table = pd.DataFrame(rows, columns=STUDY_COLUMNS)
    if output:
        table.to_csv(output, index=False)
    return table


def reliability_ratio(var_observed: float, sigma_w2: float, literal: bool = False) -> float:
    """
    Share of the predictor variance not due to measurement error

    The standard form is Var(x) / (Var(x) + sigma_w2) with Var(x) = var_observed - sigma_w2;
    literal=True gives var_observed / (var_observed + sigma_w2).

    Examples with var_observed = 26.41:
        sigma_w2 = 16:    standard 10.41 / 26.41 ~ 0.394, literal ~ 0.623
        sigma_w2 = 26.41: literal 0.5; the standard form raises DomainError
                          because no error-free variance is left
    """
    if var_observed < 0 or sigma_w2 < 0:
        raise DomainError("variances must be non-negative")
    if var_observed == 0 and sigma_w2 == 0:
        raise DomainError("reliability ratio undefined when both variances are zero")
    if literal:
        return var_observed / (var_observed + sigma_w2)
    var_x = var_observed - sigma_w2
    if var_x <= 0:
        raise DomainError(f"sigma_w2 ({sigma_w2:g}) is not below the observed variance ({var_observed:g})")
    return var_x / (var_x + sigma_w2)


def sensitivity_sweep(y, w, sigma_w2_list: Sequence[float] = SENSITIVITY_SIGMA_W2,
                      config: Optional[OsmeeConfig] = None, grid=None, log_transform: bool = False,
                      threads: Optional[int] = None) -> Tuple[pd.DataFrame, pd.DataFrame]:
    """
    Refit the same data over a list of measurement-error variances

    With log_transform the fit uses log w and each sigma_w2 is rescaled by
    Var(log w) / Var(w) so the literal reliability ratio is unchanged; the
    grid and the returned curves stay on the original scale of w.

    Returns:
        (long curve table with SWEEP_COLUMNS, table of sigma_w2, fitted sigma_w2
        and the two reliability ratios)
    """
    y = np.asarray(y, dtype=float)
    w = np.asarray(w, dtype=float)
    if grid is None:
        grid = np.linspace(float(w.min()), float(w.max()), GRID_POINTS)
    grid = np.asarray(grid, dtype=float)
    var_w = float(np.var(w, ddof=1))
    if log_transform:
        if np.any(w <= 0):
            raise DomainError("log transform needs positive w", index=int(np.flatnonzero(w <= 0)[0]))
        if np.any(grid <= 0):
            raise DomainError("log transform needs a positive grid")
        w_fit, grid_fit = np.log(w), np.log(grid)
        factor = float(np.var(w_fit, ddof=1)) / var_w
    else:
        w_fit, grid_fit, factor = w, grid, 1.0
    cfg = config or OsmeeConfig()
    inner = cfg if threads == 1 else replace(cfg, threads=1)

    def fit_one(s2: float) -> np.ndarray:
        return run_osmee(y, w_fit, ErrorModel(s2 * factor), inner).predict(grid_fit)

    curves = map_ordered(fit_one, list(sigma_w2_list), threads)
    long = pd.DataFrame({
        "sigma_w2": np.repeat(np.asarray(sigma_w2_list, dtype=float), grid.size),
        "d": np.tile(grid, len(curves)),
        "fitted_mean": np.concatenate(curves) if curves else np.zeros(0),
    }, columns=SWEEP_COLUMNS)
    ratios = pd.DataFrame({
        "sigma_w2": list(sigma_w2_list),
        "sigma_w2_fit": [s2 * factor for s2 in sigma_w2_list],
        "reliability_literal": [reliability_ratio(var_w, s2, literal=True) for s2 in sigma_w2_list],
        "reliability": [reliability_ratio(var_w, s2) if s2 < var_w else np.nan for s2 in sigma_w2_list],
    })
    return long, ratios
