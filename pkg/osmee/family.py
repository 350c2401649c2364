"""
Exponential-family / link descriptors: mean function, its derivative,
variance function with scale parameters, deviance and response sampling
"""

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from scipy.special import expit, xlogy

from defaults import LOGIT_EPS
from .errors import ConfigError, DomainError

FAMILIES = ("gaussian", "poisson", "quasi_poisson", "bernoulli", "binomial", "negative_binomial", "gamma")
LINKS = ("identity", "log", "logit")

DEFAULT_LINK = {
    "gaussian": "identity",
    "poisson": "log",
    "quasi_poisson": "log",
    "bernoulli": "logit",
    "binomial": "logit",
    "negative_binomial": "log",
    "gamma": "log",
}

SCALE_CLASS = {
    "poisson": "fully_known",
    "bernoulli": "fully_known",
    "binomial": "fully_known",
    "gaussian": "unknown_constant",
    "quasi_poisson": "partially_known",
    "negative_binomial": "partially_known",
    "gamma": "partially_known",
}

# Families whose scale is parameterized by a shape (theta for NB, gamma for Gamma): phi_eff = 1/shape
SHAPE_FAMILIES = ("negative_binomial", "gamma")


@dataclass(frozen=True)
class ScaleParams:
    """Dispersion phi and shape theta (NB theta / gamma shape)."""

    phi: float = 1.0
    theta: Optional[float] = None

    def __post_init__(self):
        if not np.isfinite(self.phi) or self.phi <= 0:
            raise DomainError(f"phi must be positive, got {self.phi}")
        if self.theta is not None and not self.theta > 0:
            raise DomainError(f"theta must be positive, got {self.theta}")


@dataclass(frozen=True)
class FamilySpec:
    """
    One supported family/link pair

    Args:
        name: Family identifier (see FAMILIES)
        link: Link identifier (identity, log, logit)
        trials: Binomial trials m; the mean is the success proportion
    """

    name: str
    link: str
    trials: int = 1

    def __post_init__(self):
        if self.name not in FAMILIES:
            raise ConfigError(f"Unknown family '{self.name}'. Choose from {', '.join(FAMILIES)}")
        if self.link not in LINKS:
            raise ConfigError(f"Unknown link '{self.link}'. Choose from {', '.join(LINKS)}")
        if DEFAULT_LINK[self.name] != self.link:
            raise ConfigError(f"Link '{self.link}' is not supported for family '{self.name}'")
        if self.trials < 1:
            raise ConfigError(f"trials must be >= 1, got {self.trials}")

    @property
    def scale_class(self) -> str:
        return SCALE_CLASS[self.name]

    @property
    def needs_shape(self) -> bool:
        return self.name in SHAPE_FAMILIES

    # ------------------------------------------------------------------ #
    # Mean function
    # ------------------------------------------------------------------ #

    def mean(self, eta):
        eta = np.asarray(eta, dtype=float)
        if self.link == "identity":
            return eta.copy()
        if self.link == "logit":
            return np.clip(expit(eta), LOGIT_EPS, 1.0 - LOGIT_EPS)
        with np.errstate(over="ignore"):
            mu = np.exp(eta)
        if not np.all(np.isfinite(mu)):
            bad = int(np.flatnonzero(~np.isfinite(np.ravel(mu)))[0])
            raise DomainError("log link produced a non-finite mean", index=bad)
        return mu

    def link_eval(self, mu):
        """eta = g(mu)."""
        mu = np.asarray(mu, dtype=float)
        if self.link == "identity":
            return mu.copy()
        if self.link == "logit":
            mu = np.clip(mu, LOGIT_EPS, 1.0 - LOGIT_EPS)
            return np.log(mu / (1.0 - mu))
        return np.log(mu)

    def initial_mean(self, y) -> np.ndarray:
        """Starting values for IRLS, strictly inside the mean domain."""
        y = np.asarray(y, dtype=float)
        if self.name == "gaussian":
            return y.copy()
        if self.name in ("bernoulli", "binomial"):
            return (self.trials * y + 0.5) / (self.trials + 1.0)
        if self.name == "gamma":
            return np.maximum(y, 1e-8 * max(float(np.mean(y)), 1e-8))
        return (y + max(float(np.mean(y)), 0.1)) / 2.0

    def mean_deriv(self, eta):
        eta = np.asarray(eta, dtype=float)
        if self.link == "identity":
            return np.ones_like(eta)
        if self.link == "logit":
            return expit(eta) * expit(-eta)
        return self.mean(eta)

    # ------------------------------------------------------------------ #
    # Variance function
    # ------------------------------------------------------------------ #

    def scale_factor(self, scale: ScaleParams) -> float:
        """Effective multiplier of the relative variance part."""
        if self.name in ("gaussian", "quasi_poisson"):
            return scale.phi
        if self.needs_shape:
            if scale.theta is None:
                raise DomainError(f"family '{self.name}' requires a positive shape parameter theta")
            return 1.0 / scale.theta
        return 1.0

    def variance_parts(self, eta) -> Tuple[np.ndarray, np.ndarray]:
        """
        Split V(eta) into a fully known part and a part multiplied by the scale

        Returns:
            (known, relative) with V = known + scale_factor * relative
        """
        eta = np.asarray(eta, dtype=float)
        zeros = np.zeros_like(eta)
        if self.name == "gaussian":
            return zeros, np.ones_like(eta)
        mu = self.mean(eta)
        if self.name == "poisson":
            return mu, zeros
        if self.name == "quasi_poisson":
            return zeros, mu
        if self.name in ("bernoulli", "binomial"):
            return mu * (1.0 - mu) / self.trials, zeros
        if self.name == "negative_binomial":
            return mu, mu * mu
        return zeros, mu * mu

    def variance(self, eta, scale: ScaleParams):
        known, rel = self.variance_parts(eta)
        if not np.any(rel):
            return known
        return known + self.scale_factor(scale) * rel

    # ------------------------------------------------------------------ #
    # Deviance
    # ------------------------------------------------------------------ #

    def check_mean(self, mu) -> np.ndarray:
        mu = np.asarray(mu, dtype=float)
        if self.link == "identity":
            bad = ~np.isfinite(mu)
        elif self.link == "logit":
            bad = ~((mu > 0.0) & (mu < 1.0))
        else:
            bad = ~((mu > 0.0) & np.isfinite(mu))
        if np.any(bad):
            index = int(np.flatnonzero(np.ravel(bad))[0])
            raise DomainError(f"fitted mean {np.ravel(mu)[index]!r} outside the {self.name} mean domain", index=index)
        return mu

    def unit_deviance(self, y, mu, scale: Optional[ScaleParams] = None) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        mu = self.check_mean(mu)
        if y.shape != mu.shape:
            raise DomainError(f"y and fitted_mu differ in length ({y.size} vs {mu.size})")
        if self.name == "gaussian":
            return (y - mu) ** 2
        if self.name in ("poisson", "quasi_poisson"):
            return 2.0 * (xlogy(y, y / mu) - (y - mu))
        if self.name in ("bernoulli", "binomial"):
            return 2.0 * self.trials * (xlogy(y, y / mu) + xlogy(1.0 - y, (1.0 - y) / (1.0 - mu)))
        if self.name == "negative_binomial":
            theta = scale.theta if scale is not None else None
            if theta is None or not np.isfinite(theta):
                return 2.0 * (xlogy(y, y / mu) - (y - mu))
            return 2.0 * (xlogy(y, y / mu) - (y + theta) * np.log((y + theta) / (mu + theta)))
        if np.any(y <= 0):
            index = int(np.flatnonzero(np.ravel(y <= 0))[0])
            raise DomainError("gamma response must be positive", index=index)
        return 2.0 * (-np.log(y / mu) + (y - mu) / mu)

    def deviance(self, y, mu, scale: Optional[ScaleParams] = None) -> float:
        return float(np.sum(self.unit_deviance(y, mu, scale)))

    # ------------------------------------------------------------------ #
    # Response generation
    # ------------------------------------------------------------------ #

    def sample(self, mu, scale: ScaleParams, rng: np.random.Generator) -> np.ndarray:
        """Draw one response per mean from the family at the given scale."""
        mu = np.asarray(mu, dtype=float)
        if self.name == "gaussian":
            return rng.normal(mu, np.sqrt(scale.phi))
        if self.name == "poisson":
            return rng.poisson(mu).astype(float)
        if self.name == "quasi_poisson":
            # scaled Poisson: variance phi * mu
            return scale.phi * rng.poisson(mu / scale.phi).astype(float)
        if self.name in ("bernoulli", "binomial"):
            return rng.binomial(self.trials, mu).astype(float) / self.trials
        shape = 1.0 / self.scale_factor(scale)
        if self.name == "negative_binomial":
            return rng.poisson(rng.gamma(shape, mu / shape)).astype(float)
        return rng.gamma(shape, mu / shape)


def get_family(name: str, link: Optional[str] = None, trials: int = 1) -> FamilySpec:
    """Resolve a family by its string identifier; link defaults to the family's supported link."""
    name = name.strip().lower().replace("-", "_")
    if name not in DEFAULT_LINK:
        raise ConfigError(f"Unknown family '{name}'. Choose from {', '.join(FAMILIES)}")
    return FamilySpec(name=name, link=link or DEFAULT_LINK[name], trials=trials)


def mean_eval(family: FamilySpec, eta):
    """mu(eta) for the family's link."""
    return family.mean(eta)


def mean_deriv(family: FamilySpec, eta):
    """d mu / d eta."""
    return family.mean_deriv(eta)


def variance_eval(family: FamilySpec, eta, scale: Optional[ScaleParams] = None):
    """Per-sample variance V(eta, phi, theta)."""
    return family.variance(eta, scale or ScaleParams())


def deviance(family: FamilySpec, y, fitted_mu, scale: Optional[ScaleParams] = None) -> float:
    """Unit-scaled deviance summed over observations."""
    return family.deviance(y, fitted_mu, scale)
