"""
Penalized working-model fits

 - fit_heteroscedastic: the heteroscedastic Gaussian mixed model
   resp = M_beta beta + M_u u + eps, u ~ N(0, phi S^- / lambda), with
   diagonal Var(eps_i) = var_known_i + phi * var_rel_i; lambda by Gaussian
   REML (default) or GCV over a log grid refined by golden-section search,
   phi by the Pearson statistic when it is not fixed.
 - fit_naive_glm: penalized IRLS (PQL) for a semiparametric GLM on the
   observed predictor, reusing fit_heteroscedastic for every inner step.

References:

 - Wood, S. N. (2011). Fast stable restricted maximum likelihood and marginal
   likelihood estimation of semiparametric generalized linear models.
"""

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np
from scipy import linalg, optimize

from defaults import (
    HALVING_STEPS,
    LAMBDA_GRID_SIZE,
    LOG10_LAMBDA_MAX,
    LOG10_LAMBDA_MIN,
    NAIVE_COEF_TOL,
    NAIVE_MAX_ITER,
    NAIVE_TOL,
    PHI_MAX_ITER,
    PHI_TOL,
    RIDGE_JITTER,
    VARIANCE_FLOOR_REL,
)
from .basis import BasisDesign, BasisKind, build_basis
from .errors import ConfigError, DomainError, FitError, warn
from .family import FamilySpec, ScaleParams
from .parallel import map_ordered

logger = logging.getLogger(__name__)

METHODS = ("reml", "gcv")
_PHI_MIN = 1e-10
_LOG_PHI_BRACKET = (-30.0, 30.0)


@dataclass
class WorkingModel:
    """
    Linearized heteroscedastic system solved at each iteration

    Args:
        response: y - O (or the IRLS pseudo-data)
        M_beta: Unpenalized columns (n x p)
        M_u: Penalized columns (n x q)
        var_known: Known part of Var(eps_i)
        var_rel: Part of Var(eps_i) multiplied by the unknown scale phi
        penalty: Penalty on u (q x q)
        scale_class: fully_known, unknown_constant or partially_known
        phi_fixed: Known phi; None means phi is estimated
    """

    response: np.ndarray
    M_beta: np.ndarray
    M_u: np.ndarray
    var_known: np.ndarray
    var_rel: np.ndarray
    penalty: np.ndarray
    scale_class: str = "fully_known"
    phi_fixed: Optional[float] = None

    def __post_init__(self):
        n = self.response.shape[0]
        if self.M_beta.shape[0] != n or self.M_u.shape[0] != n:
            raise DomainError(f"model matrices must have {n} rows")
        if self.var_known.shape != (n,) or self.var_rel.shape != (n,):
            raise DomainError(f"variance vectors must have length {n}")
        q = self.M_u.shape[1]
        if self.penalty.shape != (q, q):
            raise DomainError(f"penalty must be {q} x {q}, got {self.penalty.shape}")
        if np.any(self.var_known < 0) or np.any(self.var_rel < 0):
            raise DomainError("variance parts must be non-negative")

    @property
    def n(self) -> int:
        return self.response.shape[0]

    @property
    def p(self) -> int:
        return self.M_beta.shape[1]

    @property
    def q(self) -> int:
        return self.M_u.shape[1]

    @property
    def M(self) -> np.ndarray:
        return np.hstack([self.M_beta, self.M_u])

    @property
    def estimates_phi(self) -> bool:
        return self.phi_fixed is None and bool(np.any(self.var_rel > 0))

    def variances(self, phi: float) -> np.ndarray:
        """var_known + phi * var_rel, floored at 1e-8 * median."""
        v = self.var_known + phi * self.var_rel
        floor = VARIANCE_FLOOR_REL * float(np.median(v))
        if floor <= 0:
            floor = VARIANCE_FLOOR_REL * float(np.max(v))
        if floor <= 0:
            raise FitError("working-model variances are all zero")
        return np.maximum(v, floor)


@dataclass
class FitResult:
    beta: np.ndarray
    u: np.ndarray
    lam: float
    phi: float
    edf: float
    criterion_value: float
    converged: bool = True
    method: str = "reml"
    iterations: int = 1
    deviance: Optional[float] = None
    fitted: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def b(self) -> np.ndarray:
        return np.concatenate([self.beta, self.u])


# ---------------------------------------------------------------------- #
# Weighted penalized least squares
# ---------------------------------------------------------------------- #

class _WeightedSystem:
    """Normal equations of one working model at fixed variances."""

    def __init__(self, model: WorkingModel, phi: float):
        v = model.variances(phi)
        root = 1.0 / np.sqrt(v)
        self.n, self.p, self.q = model.n, model.p, model.q
        self.Mw = model.M * root[:, None]
        self.yw = model.response * root
        self.G = self.Mw.T @ self.Mw
        self.rhs = self.Mw.T @ self.yw
        self.S = np.zeros_like(self.G)
        self.S[self.p:, self.p:] = model.penalty
        evals = linalg.eigvalsh(model.penalty) if self.q else np.zeros(0)
        top = float(evals.max()) if evals.size else 0.0
        positive = evals[evals > 1e-8 * top] if top > 0 else evals[:0]
        self.rank = positive.size
        self.log_det_S = float(np.sum(np.log(positive)))
        self.null_dim = self.p + self.q - self.rank
        self.log_w = float(-np.sum(np.log(v)))
        self.profile_scale = model.estimates_phi
        self.jittered = False

    def _factor(self, H: np.ndarray):
        try:
            return linalg.cho_factor(H, lower=True)
        except linalg.LinAlgError:
            self.jittered = True
            bump = RIDGE_JITTER * max(1.0, float(np.mean(np.abs(np.diag(H)))))
            return linalg.cho_factor(H + bump * np.eye(H.shape[0]), lower=True)

    def solve(self, lam: float) -> dict:
        if np.isinf(lam):
            # infinite penalty: u = 0, weighted least squares on M_beta alone
            Gb = self.G[:self.p, :self.p]
            fac = self._factor(Gb)
            beta = linalg.cho_solve(fac, self.rhs[:self.p])
            b = np.concatenate([beta, np.zeros(self.q)])
            edf = float(self.p)
            log_det_H = 2.0 * float(np.sum(np.log(np.diag(fac[0]))))
        else:
            H = self.G + lam * self.S
            fac = self._factor(H)
            b = linalg.cho_solve(fac, self.rhs)
            edf = float(np.trace(linalg.cho_solve(fac, self.G)))
            log_det_H = 2.0 * float(np.sum(np.log(np.diag(fac[0]))))
        resid = self.yw - self.Mw @ b
        rss = float(resid @ resid)
        pen = 0.0 if np.isinf(lam) else float(lam * b @ self.S @ b)
        return {"b": b, "edf": edf, "rss": rss, "pen": pen, "log_det_H": log_det_H}

    def reml(self, lam: float, sol: Optional[dict] = None) -> float:
        """Negative restricted log-likelihood, constants included."""
        sol = sol or self.solve(lam)
        dp = sol["rss"] + sol["pen"]
        dof = self.n - self.null_dim
        log_det_pen = self.rank * np.log(lam) + self.log_det_S
        if self.profile_scale:
            scale = max(dp / dof, 1e-300)
            value = dof * (1.0 + np.log(2.0 * np.pi * scale))
        else:
            value = dp + dof * np.log(2.0 * np.pi)
        return 0.5 * float(value + sol["log_det_H"] - log_det_pen - self.log_w)

    def gcv(self, lam: float, sol: Optional[dict] = None) -> float:
        sol = sol or self.solve(lam)
        return gcv_score(sol["rss"], self.n, sol["edf"])

    def score(self, lam: float, which: str) -> float:
        try:
            return self.reml(lam) if which == "reml" else self.gcv(lam)
        except (linalg.LinAlgError, FloatingPointError, ValueError):
            return np.inf


def gcv_score(rss: float, n: int, edf: float) -> float:
    """n * RSS_w / (n - edf)^2; +inf once edf reaches n."""
    if edf >= n:
        return np.inf
    return n * rss / (n - edf) ** 2


def _check_method(which: str) -> str:
    which = which.lower()
    if which not in METHODS:
        raise ConfigError(f"Unknown smoothing criterion '{which}'. Choose from {', '.join(METHODS)}")
    return which


def criterion(model: WorkingModel, lam: float, which: str = "reml", phi: Optional[float] = None) -> float:
    """
    Gaussian REML (profiled over an overall scale when phi is not known) or GCV
    of the weighted working model at smoothing parameter lam

    Args:
        model: Working model
        lam: Smoothing parameter, finite and > 0
        which: 'reml' or 'gcv'
        phi: Scale used to form the variances; defaults to phi_fixed or 1
    """
    which = _check_method(which)
    if not (np.isfinite(lam) and lam > 0):
        raise ConfigError(f"lambda must be finite and positive, got {lam}")
    if phi is None:
        phi = model.phi_fixed if model.phi_fixed is not None else 1.0
    system = _WeightedSystem(model, phi)
    return system.reml(lam) if which == "reml" else system.gcv(lam)


def _select_lambda(system: _WeightedSystem, which: str, threads: int) -> float:
    log_grid = np.linspace(LOG10_LAMBDA_MIN, LOG10_LAMBDA_MAX, LAMBDA_GRID_SIZE)
    values = np.array(map_ordered(lambda g: system.score(10.0 ** g, which), log_grid, threads))
    if not np.any(np.isfinite(values)):
        raise FitError(f"{which.upper()} criterion is not finite anywhere on the lambda grid")
    best = int(np.argmin(values))
    best_log, best_value = log_grid[best], values[best]
    if 0 < best < log_grid.size - 1:
        bracket = (log_grid[best - 1], log_grid[best], log_grid[best + 1])
        try:
            res = optimize.minimize_scalar(lambda g: system.score(10.0 ** g, which), bracket=bracket, method="golden")
            if np.isfinite(res.fun) and res.fun < best_value and LOG10_LAMBDA_MIN <= res.x <= LOG10_LAMBDA_MAX:
                best_log, best_value = float(res.x), float(res.fun)
        except ValueError:
            pass
    return float(10.0 ** best_log)


def _pearson_phi(resid: np.ndarray, model: WorkingModel, dof: float, previous: float) -> float:
    """Solve sum r_i^2 / (vk_i + phi * vr_i) = n - edf for phi."""
    if dof <= 0:
        return previous
    vk, vr = model.var_known, model.var_rel
    r2 = resid ** 2
    if not np.any(vk > 0):
        active = vr > 0
        return max(float(np.sum(r2[active] / vr[active])) / dof, _PHI_MIN)

    def excess(log_phi: float) -> float:
        return float(np.sum(r2 / model.variances(np.exp(log_phi)))) - dof

    lo, hi = _LOG_PHI_BRACKET
    if excess(lo) <= 0:
        return _PHI_MIN
    if excess(hi) >= 0:
        return float(np.exp(hi))
    return max(float(np.exp(optimize.brentq(excess, lo, hi, xtol=1e-10))), _PHI_MIN)


def fit_heteroscedastic(model: WorkingModel, method: str = "reml", lam: Optional[float] = None,
                        threads: Optional[int] = 1) -> FitResult:
    """
    Fit the heteroscedastic working model

    Args:
        model: Working model (response, matrices, variance parts, penalty)
        method: 'reml' (default) or 'gcv' for choosing lambda
        lam: Fixed smoothing parameter (0 and inf allowed); None selects it
        threads: Workers used for the coarse lambda grid

    Returns:
        FitResult with the coefficients, lambda, phi, edf and criterion value
    """
    method = _check_method(method)
    if lam is not None and (np.isnan(lam) or lam < 0):
        raise ConfigError(f"lambda must be non-negative, got {lam}")
    phi = model.phi_fixed if model.phi_fixed is not None else 1.0
    jittered = False
    converged = True
    for iteration in range(1, PHI_MAX_ITER + 1):
        system = _WeightedSystem(model, phi)
        chosen = _select_lambda(system, method, threads) if lam is None else float(lam)
        sol = system.solve(chosen)
        jittered = jittered or system.jittered
        if not model.estimates_phi:
            break
        resid = model.response - model.M @ sol["b"]
        new_phi = _pearson_phi(resid, model, model.n - sol["edf"], phi)
        change = abs(new_phi - phi) / max(phi, _PHI_MIN)
        phi = new_phi
        if change < PHI_TOL:
            system = _WeightedSystem(model, phi)
            sol = system.solve(chosen)
            break
    else:
        converged = False
        logger.info("phi iteration stopped after %d rounds (phi=%g)", PHI_MAX_ITER, phi)

    if jittered or system.jittered:
        warn("singular weighted system; ridge jitter added to the normal matrix", logger)
    if np.isfinite(chosen) and chosen > 0:
        value = system.reml(chosen, sol) if method == "reml" else system.gcv(chosen, sol)
    else:
        value = system.gcv(chosen, sol)
    b = sol["b"]
    return FitResult(
        beta=b[:model.p].copy(),
        u=b[model.p:].copy(),
        lam=chosen,
        phi=float(phi) if model.estimates_phi else float(model.phi_fixed or 1.0),
        edf=sol["edf"],
        criterion_value=float(value),
        converged=converged,
        method=method,
        iterations=iteration,
    )


# ---------------------------------------------------------------------- #
# Naive penalized GLM (PQL / penalized IRLS)
# ---------------------------------------------------------------------- #

def scale_split(family: FamilySpec, known: np.ndarray, rel: np.ndarray,
                scale: Optional[ScaleParams]) -> Tuple[np.ndarray, np.ndarray, Optional[float]]:
    """
    Fold the relative variance part into the known part when the family's scale
    is supplied (NB theta, gamma shape) or irrelevant (Poisson, binomial)

    Returns:
        (var_known, var_rel, phi_fixed)
    """
    if family.scale_class == "fully_known":
        return known + rel, np.zeros_like(rel), 1.0
    if family.needs_shape and scale is not None and scale.theta is not None:
        return known + rel / scale.theta, np.zeros_like(rel), 1.0
    return known, rel, None


def _penalized_deviance(family: FamilySpec, y, eta, b, lam, penalty, p, scale) -> float:
    try:
        mu = family.mean(eta)
        dev = family.deviance(y, mu, scale)
    except DomainError:
        return np.inf
    if not np.isfinite(dev):
        return np.inf
    u = b[p:]
    return dev + (0.0 if np.isinf(lam) else float(lam * u @ penalty @ u))


def fit_naive_glm(y, w, basis: BasisKind, family: FamilySpec, method: str = "reml",
                  scale: Optional[ScaleParams] = None, lam: Optional[float] = None,
                  threads: Optional[int] = 1) -> Tuple[FitResult, BasisDesign]:
    """
    Penalized IRLS fit of the semiparametric GLM with w in place of x

    Each inner step fits the working Gaussian model with smoothing selected by
    `method`; steps that make the penalized deviance non-finite or larger are
    halved. Converged once the relative deviance change is below 1e-8 and the
    largest coefficient step is below 1e-10 (1 + max|b|); a selected lambda is
    held fixed after the deviance settles. Gives up after 200 iterations.

    Args:
        y: Responses
        w: Observed predictor (also the basis construction points)
        basis: Basis kind and dimension
        family: Response family
        method: 'reml' or 'gcv'
        scale: Known scale / shape (NB theta, gamma shape); None estimates phi where needed
        lam: Fixed smoothing parameter (0 or inf allowed), None selects it

    Returns:
        (FitResult with fitted means at w, BasisDesign)
    """
    y = np.asarray(y, dtype=float)
    w = np.asarray(w, dtype=float)
    if y.shape != w.shape:
        raise DomainError(f"y and w differ in length ({y.size} vs {w.size})")
    design = build_basis(basis, w)
    if y.size <= design.p + design.q:
        raise DomainError(f"need more observations ({y.size}) than basis columns ({design.p + design.q})")
    R = design.rows(w)
    p = design.p
    dev_scale = scale or ScaleParams()

    def working_model(eta: np.ndarray) -> WorkingModel:
        mu = family.mean(eta)
        d = family.mean_deriv(eta)
        d = np.where(np.abs(d) < 1e-300, 1e-300, d)
        known, rel = family.variance_parts(eta)
        vk, vr, phi_fixed = scale_split(family, known / d ** 2, rel / d ** 2, scale)
        return WorkingModel(
            response=eta + (y - mu) / d, M_beta=R[:, :p], M_u=R[:, p:], var_known=vk, var_rel=vr,
            penalty=design.fitting_penalty, scale_class=family.scale_class, phi_fixed=phi_fixed,
        )

    eta = family.link_eval(family.initial_mean(y))
    b = None
    deviance_old = np.inf
    fit = None
    halved = False
    converged = False
    # lambda is frozen once the deviance settles
    step_lam = lam
    history: List[float] = []
    for iteration in range(1, NAIVE_MAX_ITER + 1):
        model = working_model(eta)
        fit = fit_heteroscedastic(model, method, step_lam, threads)
        b_new = fit.b
        if scale is None and family.needs_shape and model.estimates_phi:
            dev_scale = ScaleParams(theta=1.0 / max(fit.phi, _PHI_MIN))
        pdev_new = _penalized_deviance(family, y, R @ b_new, b_new, fit.lam, design.fitting_penalty, p, dev_scale)
        halved = False
        if b is not None:
            pdev_old = _penalized_deviance(family, y, R @ b, b, fit.lam, design.fitting_penalty, p, dev_scale)
            for _ in range(HALVING_STEPS):
                if np.isfinite(pdev_new) and pdev_new <= pdev_old * (1.0 + 1e-7) + 1e-12:
                    break
                halved = True
                b_new = 0.5 * (b + b_new)
                pdev_new = _penalized_deviance(family, y, R @ b_new, b_new, fit.lam, design.fitting_penalty, p, dev_scale)
        if not np.isfinite(pdev_new):
            raise FitError("naive fit diverged (non-finite deviance)", last_iterate=fit)
        step = np.inf if b is None else float(np.max(np.abs(b_new - b)))
        b = b_new
        eta = R @ b
        deviance_new = family.deviance(y, family.mean(eta), dev_scale)
        history.append(deviance_new)
        settled = abs(deviance_new - deviance_old) / (abs(deviance_new) + 0.1) < NAIVE_TOL
        if settled and step <= NAIVE_COEF_TOL * (1.0 + float(np.max(np.abs(b)))):
            converged = True
            break
        if settled and step_lam is None:
            step_lam = fit.lam
        deviance_old = deviance_new

    if not converged:
        warn(f"naive fit did not converge in {NAIVE_MAX_ITER} iterations", logger)
    if halved:
        # refit so lambda, phi and edf belong to the accepted coefficients
        fit = fit_heteroscedastic(working_model(eta), method, fit.lam, threads)
    logger.debug("naive fit: %d IRLS iterations, deviance path %s", len(history), history[-3:])
    result = FitResult(
        beta=b[:p].copy(),
        u=b[p:].copy(),
        lam=fit.lam,
        phi=fit.phi,
        edf=fit.edf,
        criterion_value=fit.criterion_value,
        converged=converged,
        method=fit.method,
        iterations=len(history),
        deviance=history[-1],
        fitted=family.mean(eta),
    )
    return result, design
