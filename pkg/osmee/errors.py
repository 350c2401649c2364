"""
Exception and warning types raised by the OSMEE library
"""

import logging
import warnings
from typing import Optional

logger = logging.getLogger(__name__)


class OsmeeWarning(UserWarning):
    """Numerical fallback taken (jitter, bandwidth fallback, Poisson limit, ...)."""


class OsmeeError(Exception):
    """Base class for every error raised by the library."""


class ConfigError(OsmeeError, ValueError):
    """Invalid configuration: unknown family, link, basis or option value."""


class DomainError(OsmeeError, ValueError):
    """A value lies outside the domain of a family's mean or deviance."""

    def __init__(self, message: str, index: Optional[int] = None):
        if index is not None:
            message = f"{message} (index {index})"
        super().__init__(message)
        self.index = index


class BasisError(OsmeeError, ValueError):
    """Spline basis cannot be built from the supplied construction points."""


class MonteCarloError(OsmeeError, FloatingPointError):
    """Non-finite mean for a posterior draw."""

    def __init__(self, message: str, observation: int, sample: int):
        super().__init__(f"{message} (observation {observation}, sample {sample})")
        self.observation = observation
        self.sample = sample


class FitError(OsmeeError, RuntimeError):
    """A penalized fit failed or did not converge."""

    def __init__(self, message: str, last_iterate=None):
        super().__init__(message)
        self.last_iterate = last_iterate


class InputError(OsmeeError, ValueError):
    """Malformed input data (CSV ingestion)."""

    def __init__(self, message: str, line: Optional[int] = None, column: Optional[str] = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line
        self.column = column


def warn(message: str, log: logging.Logger = logger) -> None:
    """Emit an OsmeeWarning and log it."""
    log.warning(message)
    warnings.warn(message, OsmeeWarning, stacklevel=3)
