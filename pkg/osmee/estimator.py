"""
OSMEE driver: posterior sampling, naive fit, iterated Monte-Carlo linearization
and heteroscedastic refits, QGCV selection of the final iterate, curve prediction
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np
from scipy import linalg, optimize

from defaults import (
    BASIS_DIM,
    BASIS_KIND,
    MAX_ITER,
    MC_SAMPLES_WARN,
    NB_LOG_THETA_MAX,
    NB_LOG_THETA_MIN,
    TOL,
)
from .basis import BasisDesign, BasisKind
from .errors import ConfigError, DomainError, FitError, MonteCarloError, warn
from .family import FamilySpec, ScaleParams, get_family
from .moments import CoefficientVector, PosteriorDesign, conditional_means, linearized_model
from .predictor_model import SAMPLERS, ErrorModel, sample_posterior
from .settings import get_default_seed, get_mc_samples
from .working_fit import METHODS, FitResult, fit_heteroscedastic, fit_naive_glm

logger = logging.getLogger(__name__)


@dataclass
class OsmeeConfig:
    """
    Settings of one OSMEE fit

    Args:
        family: Family identifier (see osmee.family.FAMILIES)
        link: Link identifier; None uses the family's link
        trials: Binomial trials
        basis: Basis kind or alias
        basis_dim: Basis dimension
        sampler: Posterior sampler, 'gaussian' or 'deconv'
        S: Monte-Carlo draws per observation (OSMEE_MC_SAMPLES)
        method: Smoothing criterion, 'reml' or 'gcv'
        max_iter: Maximum OSMEE iterations
        tol: Relative coefficient change that stops the loop
        seed: Base seed of the posterior draws (OSMEE_SEED)
        robust_variance: Use the MAD-based spread of the draws
        bernoulli_pooled: Bernoulli variance as pbar (1 - pbar)
        theta: Known negative binomial shape; None estimates it from the naive fit
        gamma: Known gamma shape; None estimates it as 1 / phi of the naive fit
        lam: Fixed smoothing parameter for every fit (0 and inf allowed)
        threads: Worker cap; None reads OSMEE_THREADS
    """

    family: str = "gaussian"
    link: Optional[str] = None
    trials: int = 1
    basis: str = BASIS_KIND
    basis_dim: int = BASIS_DIM
    sampler: str = "gaussian"
    S: int = field(default_factory=get_mc_samples)
    method: str = "reml"
    max_iter: int = MAX_ITER
    tol: float = TOL
    seed: int = field(default_factory=get_default_seed)
    robust_variance: bool = False
    bernoulli_pooled: bool = True
    theta: Optional[float] = None
    gamma: Optional[float] = None
    lam: Optional[float] = None
    threads: Optional[int] = None

    def __post_init__(self):
        self.method = self.method.lower()
        if self.method not in METHODS:
            raise ConfigError(f"Unknown method '{self.method}'. Choose from {', '.join(METHODS)}")
        if self.sampler not in SAMPLERS:
            raise ConfigError(f"Unknown sampler '{self.sampler}'. Choose from {', '.join(SAMPLERS)}")
        if not self.tol > 0:
            raise ConfigError(f"tol must be positive, got {self.tol}")
        if self.max_iter < 1:
            raise ConfigError(f"max_iter must be >= 1, got {self.max_iter}")
        if self.S < 2:
            raise ConfigError(f"S must be at least 2, got {self.S}")
        if self.S < MC_SAMPLES_WARN:
            warn(f"S={self.S} Monte-Carlo draws is below {MC_SAMPLES_WARN}; moments will be noisy", logger)
        for name in ("theta", "gamma"):
            value = getattr(self, name)
            if value is not None and not value > 0:
                raise ConfigError(f"{name} must be positive, got {value}")
        # resolve early so bad names fail at construction
        self.family_spec
        self.basis_kind

    @property
    def family_spec(self) -> FamilySpec:
        return get_family(self.family, self.link, self.trials)

    @property
    def basis_kind(self) -> BasisKind:
        return BasisKind(kind=self.basis, dim=self.basis_dim)

    @property
    def known_shape(self) -> Optional[float]:
        name = self.family_spec.name
        if name == "negative_binomial":
            return self.theta
        if name == "gamma":
            return self.gamma
        return None


@dataclass
class Iterate:
    coef: CoefficientVector
    lam: float
    phi: float
    edf: float
    deviance: float
    qgcv: float


@dataclass
class OsmeeFit:
    """
    Result of run_osmee

    iterates[selected_index] is the lowest-QGCV iterate; the naive fit is kept
    for comparison and for the error-free short-circuit.
    """

    iterates: List[Iterate]
    selected_index: int
    design: BasisDesign
    family: FamilySpec
    scale: ScaleParams
    naive: FitResult
    config: OsmeeConfig
    sigma_w2: float
    converged: bool = True
    posterior: Optional[Dict] = None
    predictor: Dict = field(default_factory=dict)

    @property
    def selected(self) -> Iterate:
        return self.iterates[self.selected_index]

    @property
    def coefficients(self) -> CoefficientVector:
        return self.selected.coef

    @property
    def n_iter(self) -> int:
        return len(self.iterates)

    def predict(self, grid) -> np.ndarray:
        return predict_curve(self, grid)

    def naive_curve(self, grid) -> np.ndarray:
        return self.family.mean(self.design.rows(grid) @ self.naive.b)

    def summary(self) -> str:
        """Plain-text report of the fit."""
        cfg = self.config
        sel = self.selected
        lines = [
            "OSMEE fit",
            f"  family:        {self.family.name} ({self.family.link} link)",
            f"  basis:         {cfg.basis_kind.kind}, dim {cfg.basis_kind.dim}",
            f"  sampler:       {cfg.sampler}, S={cfg.S}, seed={cfg.seed}",
            f"  method:        {cfg.method}",
            f"  sigma_w2:      {self.sigma_w2!r}",
        ]
        if self.family.needs_shape:
            lines.append(f"  shape:         {self.scale.theta!r}")
        lines += [
            f"  iterations:    {self.n_iter} ({'converged' if self.converged else 'not converged'})",
            f"  selected:      iteration {self.selected_index + 1}",
            f"  lambda:        {sel.lam!r}",
            f"  phi:           {sel.phi!r}",
            f"  edf:           {sel.edf!r}",
            f"  qgcv:          {sel.qgcv!r}",
            f"  naive lambda:  {self.naive.lam!r}",
            f"  naive edf:     {self.naive.edf!r}",
            "  qgcv path:     " + ", ".join(f"{it.qgcv:.6g}" for it in self.iterates),
        ]
        for key, value in sorted(self.predictor.items()):
            lines.append(f"  {key + ':':<15}{value!r}")
        return "\n".join(lines) + "\n"


def qgcv(deviance: float, n: int, edf: float) -> float:
    """n D / (n - edf)^2, +inf when edf >= n."""
    if edf >= n:
        return np.inf
    return n * deviance / (n - edf) ** 2


def predict_curve(fit: OsmeeFit, grid) -> np.ndarray:
    """mu(X_d beta + Z_d u) of the selected iterate over the grid."""
    grid = np.asarray(grid, dtype=float)
    if not np.all(np.isfinite(grid)):
        raise DomainError("prediction grid must be finite")
    return fit.family.mean(fit.design.rows(grid) @ fit.coefficients.b)


def estimate_nb_shape(y, fitted, edf: float = 1.0) -> float:
    """
    Moment estimate of the negative binomial shape theta

    Solves sum (y - mu)^2 / (mu + mu^2 / theta) = n - edf by bisection on
    log theta in [-6, 6]. Returns +inf (Poisson limit) with a warning when the
    data show no overdispersion.
    """
    y = np.asarray(y, dtype=float)
    mu = np.asarray(fitted, dtype=float)
    if y.shape != mu.shape:
        raise DomainError(f"y and fitted differ in length ({y.size} vs {mu.size})")
    if np.any(mu <= 0):
        raise DomainError("fitted means must be positive", index=int(np.flatnonzero(mu <= 0)[0]))
    dof = y.size - edf
    if dof <= 0:
        raise FitError(f"cannot estimate theta: edf ({edf:g}) >= n ({y.size})")
    r2 = (y - mu) ** 2

    def excess(log_theta: float) -> float:
        theta = np.exp(log_theta)
        return float(np.sum(r2 / (mu + mu * mu / theta))) - dof

    if excess(NB_LOG_THETA_MAX) <= 0:
        warn("no overdispersion relative to Poisson; theta set to +inf", logger)
        return np.inf
    if excess(NB_LOG_THETA_MIN) > 0:
        warn(f"theta estimate below exp({NB_LOG_THETA_MIN:g}); clamped", logger)
        return float(np.exp(NB_LOG_THETA_MIN))
    return float(np.exp(optimize.bisect(excess, NB_LOG_THETA_MIN, NB_LOG_THETA_MAX, xtol=1e-10)))


def _resolve_scale(cfg: OsmeeConfig, family: FamilySpec, y: np.ndarray, naive: FitResult) -> ScaleParams:
    if not family.needs_shape:
        return ScaleParams()
    shape = cfg.known_shape
    if shape is None:
        if family.name == "negative_binomial":
            shape = estimate_nb_shape(y, naive.fitted, naive.edf)
        else:
            shape = 1.0 / naive.phi
        logger.info("%s shape estimated from the naive fit: %g", family.name, shape)
    return ScaleParams(theta=shape)


def _check_data(y, w) -> tuple:
    y = np.asarray(y, dtype=float).ravel()
    w = np.asarray(w, dtype=float).ravel()
    if y.size != w.size:
        raise DomainError(f"y and w differ in length ({y.size} vs {w.size})")
    for name, values in (("y", y), ("w", w)):
        bad = ~np.isfinite(values)
        if np.any(bad):
            raise DomainError(f"{name} must be finite", index=int(np.flatnonzero(bad)[0]))
    return y, w


def run_osmee(y, w, err: ErrorModel, cfg: Optional[OsmeeConfig] = None) -> OsmeeFit:
    """
    Fit the regression of y on the error-prone predictor w

    Args:
        y: Responses
        w: Observed predictor, w = x + N(0, sigma_w^2)
        err: Measurement-error model
        cfg: Settings; defaults to OsmeeConfig()

    Returns:
        OsmeeFit whose selected iterate has the lowest QGCV
    """
    cfg = cfg or OsmeeConfig()
    y, w = _check_data(y, w)
    family = cfg.family_spec
    shape = cfg.known_shape
    naive_scale = ScaleParams(theta=shape) if shape is not None else None

    naive, design = fit_naive_glm(y, w, cfg.basis_kind, family, cfg.method, naive_scale, cfg.lam, cfg.threads)
    scale = _resolve_scale(cfg, family, y, naive)
    n = y.size
    logger.info("naive fit: lambda=%g, edf=%.3f, %d IRLS iterations", naive.lam, naive.edf, naive.iterations)

    if err.sigma_w2 == 0:
        deviance = family.deviance(y, naive.fitted, scale)
        only = Iterate(
            coef=CoefficientVector(beta=naive.beta.copy(), u=naive.u.copy()),
            lam=naive.lam, phi=naive.phi, edf=naive.edf,
            deviance=deviance, qgcv=qgcv(deviance, n, naive.edf),
        )
        return OsmeeFit(
            iterates=[only], selected_index=0, design=design, family=family, scale=scale,
            naive=naive, config=cfg, sigma_w2=0.0, converged=naive.converged,
        )

    draws, predictor = sample_posterior(cfg.sampler, w, err, cfg.S, cfg.seed, cfg.threads)
    post = PosteriorDesign(design, draws.samples)
    b0 = naive.b
    iterates: List[Iterate] = []
    converged = False
    for iteration in range(1, cfg.max_iter + 1):
        try:
            model = linearized_model(post, y, b0, family, scale, cfg.robust_variance, cfg.bernoulli_pooled, cfg.threads)
            fit = fit_heteroscedastic(model, cfg.method, cfg.lam, cfg.threads)
            means = conditional_means(post, fit.b, family, cfg.threads)
            deviance = family.deviance(y, means, scale)
        except (FitError, MonteCarloError, DomainError, linalg.LinAlgError) as exc:
            if not iterates:
                raise FitError(f"OSMEE iteration 1 failed: {exc}") from exc
            warn(f"OSMEE iteration {iteration} failed ({exc}); keeping the best earlier iterate", logger)
            break
        b = fit.b
        iterates.append(Iterate(
            coef=CoefficientVector.from_b(b, design.p),
            lam=fit.lam, phi=fit.phi, edf=fit.edf,
            deviance=deviance, qgcv=qgcv(deviance, n, fit.edf),
        ))
        change = float(np.max(np.abs(b - b0)) / max(float(np.max(np.abs(b))), 1e-300))
        logger.debug("iteration %d: lambda=%g edf=%.3f qgcv=%.6g change=%.3g",
                     iteration, fit.lam, fit.edf, iterates[-1].qgcv, change)
        b0 = b
        if change < cfg.tol:
            converged = True
            break

    scores = np.array([it.qgcv for it in iterates])
    selected = int(np.argmin(scores))
    logger.info("OSMEE: %d iterations, selected %d (qgcv=%.6g)", len(iterates), selected + 1, scores[selected])
    return OsmeeFit(
        iterates=iterates, selected_index=selected, design=design, family=family, scale=scale,
        naive=naive, config=cfg, sigma_w2=err.sigma_w2, converged=converged,
        posterior=draws.summary(), predictor=predictor,
    )
