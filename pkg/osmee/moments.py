"""
Monte-Carlo moments of y_i | w_i, u

For a coefficient vector b and the basis rows r_is of the posterior draws x_is:

    E(y_i | w_i, u)   ~ S^-1 sum_s mu(r_is' b)
    Var(y_i | w_i, u) ~ S^-1 sum_s V(r_is' b) + Var_s(mu(r_is' b))

The mean is linearized around b0 to give an offset O_i and a model-matrix row
m_i, so that E(y_i | w_i, u) ~ O_i + m_i' b. Everything is computed in blocks
of observations, each block an array of shape (rows, S, p + q).
"""

import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.stats import median_abs_deviation

from defaults import MAD_SCALE
from .basis import BasisDesign
from .errors import DomainError, MonteCarloError
from .family import FamilySpec, ScaleParams
from .parallel import map_ordered
from .settings import get_cache_bytes
from .working_fit import WorkingModel, scale_split

logger = logging.getLogger(__name__)

# target size of one evaluated block, in matrix entries
_BLOCK_ENTRIES = 4_000_000


@dataclass
class LinearizedRow:
    """Offset O_i, model-matrix row m_i = [M_beta | M_u]_i and the two variance parts."""

    offset: float
    m_row: np.ndarray
    var_known: float = 0.0
    var_rel: float = 0.0


@dataclass
class CoefficientVector:
    beta: np.ndarray
    u: np.ndarray

    @property
    def b(self) -> np.ndarray:
        return np.concatenate([self.beta, self.u])

    @classmethod
    def from_b(cls, b, p: int) -> "CoefficientVector":
        b = np.asarray(b, dtype=float)
        return cls(beta=b[:p].copy(), u=b[p:].copy())


def _as_b(b) -> np.ndarray:
    if isinstance(b, CoefficientVector):
        return b.b
    return np.asarray(b, dtype=float)


class PosteriorDesign:
    """
    Basis rows of the posterior draws, evaluated on one BasisDesign

    The full (n, S, p + q) array is kept in memory when it fits in
    OSMEE_CACHE_MB; otherwise each block is re-evaluated on demand.
    """

    def __init__(self, design: BasisDesign, samples: np.ndarray, cache_bytes: Optional[int] = None):
        samples = np.asarray(samples, dtype=float)
        if samples.ndim != 2 or samples.shape[1] < 2:
            raise DomainError(f"posterior draws must be an n x S array with S >= 2, got shape {samples.shape}")
        self.design = design
        self.samples = samples
        self.n, self.S = samples.shape
        self.P = design.p + design.q
        limit = get_cache_bytes() if cache_bytes is None else cache_bytes
        self._cache = None
        if self.n * self.S * self.P * 8 <= limit:
            self._cache = design.rows(samples.ravel()).reshape(self.n, self.S, self.P)
        else:
            logger.info("posterior rows not cached (%d x %d x %d exceeds %d bytes)", self.n, self.S, self.P, limit)
        rows = max(1, _BLOCK_ENTRIES // (self.S * self.P))
        self.blocks = [(start, min(start + rows, self.n)) for start in range(0, self.n, rows)]

    @property
    def cached(self) -> bool:
        return self._cache is not None

    def block(self, start: int, stop: int) -> np.ndarray:
        if self._cache is not None:
            return self._cache[start:stop]
        return self.design.rows(self.samples[start:stop].ravel()).reshape(stop - start, self.S, self.P)

    def sample_rows(self, i: int) -> np.ndarray:
        """S x (p + q) rows of observation i."""
        return self.block(i, i + 1)[0]


# ---------------------------------------------------------------------- #
# Block kernels
# ---------------------------------------------------------------------- #

def _block_mean(R: np.ndarray, b: np.ndarray, family: FamilySpec, start: int) -> Tuple[np.ndarray, np.ndarray]:
    """eta and mu over a (c, S, P) block, with non-finite means reported by observation and draw."""
    eta = R @ b
    try:
        mu = family.mean(eta)
    except DomainError as exc:
        flat = exc.index if exc.index is not None else 0
        raise MonteCarloError("non-finite conditional mean", start + flat // eta.shape[1], flat % eta.shape[1]) from exc
    bad = ~np.isfinite(mu)
    if np.any(bad):
        obs, draw = np.argwhere(bad)[0]
        raise MonteCarloError("non-finite conditional mean", start + int(obs), int(draw))
    return eta, mu


def _spread(mu: np.ndarray, robust: bool) -> np.ndarray:
    """Second variance term: sample variance of mu over draws, or (1.4826 MAD)^2."""
    if robust:
        return (MAD_SCALE * median_abs_deviation(mu, axis=1)) ** 2
    return np.var(mu, axis=1, ddof=1)


def _block_moments(R: np.ndarray, b0: np.ndarray, family: FamilySpec, scale: Optional[ScaleParams],
                   robust: bool, bernoulli_pooled: bool, start: int):
    eta, mu = _block_mean(R, b0, family, start)
    S = R.shape[1]
    d = family.mean_deriv(eta)
    mean_mu = mu.mean(axis=1)
    m_rows = np.einsum("cs,csp->cp", d, R) / S
    offset = mean_mu - m_rows @ b0
    if family.name == "bernoulli" and bernoulli_pooled:
        known = mean_mu * (1.0 - mean_mu)
        rel = np.zeros_like(known)
    else:
        k, r = family.variance_parts(eta)
        known = k.mean(axis=1) + _spread(mu, robust)
        rel = r.mean(axis=1)
    var_known, var_rel, _ = scale_split(family, known, rel, scale)
    return offset, m_rows, var_known, var_rel


# ---------------------------------------------------------------------- #
# Per-observation operations
# ---------------------------------------------------------------------- #

def _check_rows(sample_rows, b) -> np.ndarray:
    R = np.asarray(sample_rows, dtype=float)
    if R.ndim != 2 or R.shape[0] < 2:
        raise DomainError(f"sample rows must be an S x (p + q) array with S >= 2, got shape {R.shape}")
    if R.shape[1] != b.size:
        raise DomainError(f"sample rows have {R.shape[1]} columns, coefficient vector has {b.size}")
    return R[None]


def mc_conditional_mean(sample_rows, b, family: FamilySpec, observation: int = 0) -> float:
    """S^-1 sum_s mu(r_is' b)."""
    b = _as_b(b)
    _, mu = _block_mean(_check_rows(sample_rows, b), b, family, observation)
    return float(mu.mean())


def linearize(sample_rows, b0, family: FamilySpec, observation: int = 0) -> LinearizedRow:
    """
    First-order expansion of the Monte-Carlo mean around b0

    m_row = S^-1 sum_s mu'(r_is' b0) r_is and
    offset = S^-1 sum_s mu(r_is' b0) - m_row' b0.
    """
    b0 = _as_b(b0)
    R = _check_rows(sample_rows, b0)
    eta, mu = _block_mean(R, b0, family, observation)
    m_row = (family.mean_deriv(eta)[0] @ R[0]) / R.shape[1]
    return LinearizedRow(offset=float(mu.mean() - m_row @ b0), m_row=m_row)


def mc_conditional_variance(sample_rows, b0, family: FamilySpec, scale: Optional[ScaleParams] = None,
                            robust: bool = False, bernoulli_pooled: bool = True,
                            observation: int = 0) -> Tuple[float, float]:
    """
    Monte-Carlo variance of y_i | w_i, u split into a known part and a part
    multiplied by the unknown scale

    Args:
        sample_rows: S x (p + q) basis rows of the posterior draws of x_i
        b0: Coefficients the moments are evaluated at
        family: Response family
        scale: Known shape (NB theta, gamma shape) folds the relative part into the known part
        robust: Use (1.4826 MAD)^2 instead of the sample variance of mu over draws
        bernoulli_pooled: Bernoulli variance as pbar (1 - pbar)

    Returns:
        (var_known, var_rel)
    """
    b0 = _as_b(b0)
    R = _check_rows(sample_rows, b0)
    _, _, vk, vr = _block_moments(R, b0, family, scale, robust, bernoulli_pooled, observation)
    return float(vk[0]), float(vr[0])


def assemble_working_model(rows: Sequence[LinearizedRow], y, penalty: np.ndarray, p: int = 2,
                           scale_class: str = "fully_known", phi_fixed: Optional[float] = None) -> WorkingModel:
    """
    Stack linearized rows into the working model y - O = M_beta beta + M_u u + eps

    Args:
        rows: One LinearizedRow per observation, variance parts filled in
        y: Responses
        penalty: Penalty on u
        p: Number of unpenalized columns
        scale_class: Family scale class
        phi_fixed: Known scale, None to estimate it
    """
    y = np.asarray(y, dtype=float)
    if len(rows) != y.size:
        raise DomainError(f"{len(rows)} linearized rows for {y.size} responses")
    M = np.vstack([row.m_row for row in rows])
    if M.shape[1] != p + penalty.shape[0]:
        raise DomainError(f"model matrix has {M.shape[1]} columns, expected {p + penalty.shape[0]}")
    offset = np.array([row.offset for row in rows])
    return WorkingModel(
        response=y - offset,
        M_beta=M[:, :p],
        M_u=M[:, p:],
        var_known=np.array([row.var_known for row in rows], dtype=float),
        var_rel=np.array([row.var_rel for row in rows], dtype=float),
        penalty=np.asarray(penalty, dtype=float),
        scale_class=scale_class,
        phi_fixed=phi_fixed,
    )


# ---------------------------------------------------------------------- #
# Whole-sample operations
# ---------------------------------------------------------------------- #

def conditional_moments(post: PosteriorDesign, b0, family: FamilySpec, scale: Optional[ScaleParams] = None,
                        robust: bool = False, bernoulli_pooled: bool = True,
                        threads: Optional[int] = None) -> List[np.ndarray]:
    """Offsets, model matrix and variance parts for every observation, block by block."""
    b0 = _as_b(b0)

    def run(bounds):
        start, stop = bounds
        return _block_moments(post.block(start, stop), b0, family, scale, robust, bernoulli_pooled, start)

    parts = map_ordered(run, post.blocks, threads)
    return [np.concatenate([part[k] for part in parts]) for k in range(4)]


def conditional_means(post: PosteriorDesign, b, family: FamilySpec, threads: Optional[int] = None) -> np.ndarray:
    """S^-1 sum_s mu(r_is' b) for every observation."""
    b = _as_b(b)

    def run(bounds):
        start, stop = bounds
        return _block_mean(post.block(start, stop), b, family, start)[1].mean(axis=1)

    return np.concatenate(map_ordered(run, post.blocks, threads))


def linearized_model(post: PosteriorDesign, y, b0, family: FamilySpec, scale: Optional[ScaleParams] = None,
                     robust: bool = False, bernoulli_pooled: bool = True,
                     threads: Optional[int] = None) -> WorkingModel:
    """Working model of one iteration, linearized at b0."""
    y = np.asarray(y, dtype=float)
    if y.size != post.n:
        raise DomainError(f"{y.size} responses for {post.n} posterior rows")
    offset, M, var_known, var_rel = conditional_moments(post, b0, family, scale, robust, bernoulli_pooled, threads)
    _, _, phi_fixed = scale_split(family, var_known, var_rel, scale)
    p = post.design.p
    return WorkingModel(
        response=y - offset,
        M_beta=M[:, :p],
        M_u=M[:, p:],
        var_known=var_known,
        var_rel=var_rel,
        penalty=post.design.fitting_penalty,
        scale_class=family.scale_class,
        phi_fixed=phi_fixed,
    )
