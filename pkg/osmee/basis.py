"""
Spline bases for the penalized-spline GLMM representation

Every basis is split into unpenalized columns X = [1, x] and penalized
columns Z with penalty S on the Z coefficients. Four kinds are supported:
truncated linear, thin-plate regression (low-rank, eigen-truncated),
cubic regression (natural cubic, knots at quantiles) and cubic P-splines
(second-order difference penalty). Beyond the construction range every
basis is extended linearly.

References:

 - Wood, S. N. (2017). Generalized Additive Models: An Introduction with R, Second Edition.
 - Eilers, P. H. C. & Marx, B. D. (1996). Flexible smoothing with B-splines and penalties.
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional, Tuple

import numpy as np
from scipy import linalg
from scipy.interpolate import BSpline

from defaults import BASIS_ALIASES, BASIS_DIM, TPRS_MAX_KNOTS
from .errors import BasisError, ConfigError

logger = logging.getLogger(__name__)

BASIS_KINDS = ("truncated_linear", "thin_plate", "cubic_regression", "p_spline")

# evaluation block size, in matrix entries
_BLOCK_ENTRIES = 2_000_000


@dataclass(frozen=True)
class BasisKind:
    """
    Basis family and dimension

    dim is the number of knots (penalized columns) for truncated_linear and
    the size of the underlying spline basis for the other kinds: thin_plate
    and cubic_regression keep dim - 2 penalized columns after removing their
    linear null space, p_spline keeps all dim B-splines.
    """

    kind: str = "thin_plate"
    dim: int = BASIS_DIM

    def __post_init__(self):
        kind = BASIS_ALIASES.get(self.kind, self.kind)
        if kind not in BASIS_KINDS:
            raise ConfigError(f"Unknown basis '{self.kind}'. Choose from {', '.join(BASIS_KINDS)} or {', '.join(BASIS_ALIASES)}")
        object.__setattr__(self, "kind", kind)
        min_dim = 1 if kind == "truncated_linear" else 4
        if int(self.dim) != self.dim or self.dim < min_dim:
            raise ConfigError(f"{kind} basis needs dim >= {min_dim}, got {self.dim}")
        object.__setattr__(self, "dim", int(self.dim))


@dataclass
class BasisExpansion:
    """Rows of a basis evaluated at some points: X (n x p), Z (n x q) and the penalty S (q x q)."""

    X: np.ndarray
    Z: np.ndarray
    S: np.ndarray

    @property
    def R(self) -> np.ndarray:
        return np.hstack([self.X, self.Z])

    @property
    def p(self) -> int:
        return self.X.shape[1]

    @property
    def q(self) -> int:
        return self.Z.shape[1]


@dataclass(frozen=True)
class BasisDesign:
    """
    A fitted basis: knots / parameters, construction range, and the maps needed
    to evaluate [x_i | z_i] at arbitrary points

    Args:
        kind: Basis kind and dimension
        knots: Knot locations (truncated_linear, cubic_regression, p_spline) or
            thin-plate centres
        range: (min, max) of the construction data
        penalty: Penalty on the Z coefficients (what penalty_matrix reports)
        fitting_penalty: Penalty used when fitting; differs from penalty only
            for p_spline, where the D2 null space is also shrunk
    """

    kind: BasisKind
    knots: np.ndarray
    range: Tuple[float, float]
    penalty: np.ndarray
    fitting_penalty: np.ndarray
    transform: np.ndarray
    raw: Callable = field(repr=False)
    raw_deriv: Callable = field(repr=False)

    @property
    def p(self) -> int:
        return 2

    @property
    def q(self) -> int:
        return self.transform.shape[1]

    def rows(self, points) -> np.ndarray:
        """Evaluate [1, x, z(x)] as an n x (p + q) matrix."""
        x = np.asarray(points, dtype=float).ravel()
        if not np.all(np.isfinite(x)):
            raise BasisError("basis evaluation points must be finite")
        out = np.empty((x.size, self.p + self.q))
        out[:, 0] = 1.0
        out[:, 1] = x
        width = max(self.transform.shape[0], 1)
        block = max(1, _BLOCK_ENTRIES // width)
        lo, hi = self.range
        for start in range(0, x.size, block):
            xb = x[start:start + block]
            xc = np.clip(xb, lo, hi)
            raw = self.raw(xc)
            outside = xb != xc
            if np.any(outside):
                raw[outside] += self.raw_deriv(xc[outside]) * (xb[outside] - xc[outside])[:, None]
            out[start:start + block, 2:] = raw @ self.transform
        return out

    def evaluate(self, points) -> BasisExpansion:
        r = self.rows(points)
        return BasisExpansion(X=r[:, :self.p], Z=r[:, self.p:], S=self.fitting_penalty)


# ---------------------------------------------------------------------- #
# Raw bases
# ---------------------------------------------------------------------- #

def _quantile_knots(ux: np.ndarray, probs: np.ndarray) -> np.ndarray:
    knots = np.quantile(ux, probs)
    if np.any(np.diff(knots) <= 0):
        raise BasisError("knots are not strictly increasing; too few distinct construction points")
    return knots


def _truncated_linear(points: np.ndarray, dim: int):
    knots = _quantile_knots(points, np.arange(1, dim + 1) / (dim + 1))

    def raw(x):
        return np.maximum(x[:, None] - knots[None, :], 0.0)

    def raw_deriv(x):
        return (x[:, None] > knots[None, :]).astype(float)

    penalty = np.eye(dim)
    return knots, raw, raw_deriv, np.eye(dim), penalty, penalty


def _cr_matrices(knots: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """F+ (K x K) mapping knot values to second derivatives, and the penalty D'B^-1 D."""
    k = knots.size
    h = np.diff(knots)
    D = np.zeros((k - 2, k))
    B = np.zeros((k - 2, k - 2))
    for i in range(k - 2):
        D[i, i] = 1.0 / h[i]
        D[i, i + 1] = -1.0 / h[i] - 1.0 / h[i + 1]
        D[i, i + 2] = 1.0 / h[i + 1]
        B[i, i] = (h[i] + h[i + 1]) / 3.0
        if i < k - 3:
            B[i, i + 1] = B[i + 1, i] = h[i + 1] / 6.0
    F = linalg.solve(B, D, assume_a="pos")
    F_plus = np.vstack([np.zeros(k), F, np.zeros(k)])
    S = D.T @ F
    return F_plus, 0.5 * (S + S.T)


def _cubic_regression(points: np.ndarray, dim: int):
    knots = _quantile_knots(points, np.linspace(0.0, 1.0, dim))
    F_plus, S_full = _cr_matrices(knots)
    h = np.diff(knots)

    def _pieces(x):
        j = np.clip(np.searchsorted(knots, x, side="right") - 1, 0, knots.size - 2)
        hj = h[j]
        left = x - knots[j]
        right = knots[j + 1] - x
        return j, hj, left, right

    def raw(x):
        j, hj, left, right = _pieces(x)
        cm = (right ** 3 / hj - hj * right) / 6.0
        cp = (left ** 3 / hj - hj * left) / 6.0
        out = cm[:, None] * F_plus[j] + cp[:, None] * F_plus[j + 1]
        idx = np.arange(x.size)
        out[idx, j] += right / hj
        out[idx, j + 1] += left / hj
        return out

    def raw_deriv(x):
        j, hj, left, right = _pieces(x)
        dcm = (-3.0 * right ** 2 / hj + hj) / 6.0
        dcp = (3.0 * left ** 2 / hj - hj) / 6.0
        out = dcm[:, None] * F_plus[j] + dcp[:, None] * F_plus[j + 1]
        idx = np.arange(x.size)
        out[idx, j] -= 1.0 / hj
        out[idx, j + 1] += 1.0 / hj
        return out

    # drop the two-dimensional (linear) null space, which [1, x] already spans
    evals, evecs = linalg.eigh(S_full)
    order = np.argsort(evals)[2:]
    transform = evecs[:, order]
    penalty = np.diag(np.maximum(evals[order], 0.0))
    return knots, raw, raw_deriv, transform, penalty, penalty


def _p_spline(lo: float, hi: float, dim: int):
    step = (hi - lo) / (dim - 3)
    t = lo + step * np.arange(-3, dim + 1)
    spline = BSpline(t, np.eye(dim), 3, extrapolate=True)
    deriv = spline.derivative()

    def raw(x):
        return spline(x)

    def raw_deriv(x):
        return deriv(x)

    D2 = np.diff(np.eye(dim), n=2, axis=0)
    penalty = D2.T @ D2
    # the null space of D2 (constant and linear coefficient sequences) reproduces
    # span{1, x}; shrinking it keeps [X | Z] identifiable without changing the fit
    null = np.vstack([np.ones(dim), np.arange(dim, dtype=float)]).T
    null, _ = linalg.qr(null, mode="economic")
    scale = np.trace(penalty) / dim
    fitting_penalty = penalty + scale * (null @ null.T)
    return t[3:dim + 1], raw, raw_deriv, np.eye(dim), penalty, fitting_penalty


def _thin_plate(points: np.ndarray, dim: int):
    centres = points
    if centres.size > TPRS_MAX_KNOTS:
        pick = np.round(np.linspace(0, centres.size - 1, TPRS_MAX_KNOTS)).astype(int)
        centres = centres[pick]
    if centres.size < dim:
        raise BasisError(f"thin_plate basis of dim {dim} needs at least {dim} distinct points, got {centres.size}")

    def raw(x):
        r = np.abs(x[:, None] - centres[None, :])
        return r ** 3 / 12.0

    def raw_deriv(x):
        d = x[:, None] - centres[None, :]
        return d * np.abs(d) / 4.0

    E = raw(centres)
    evals, evecs = linalg.eigh(0.5 * (E + E.T))
    top = np.argsort(-np.abs(evals), kind="stable")[:dim]
    U_k = evecs[:, top]
    D_k = evals[top]
    T = np.vstack([np.ones(centres.size), centres]).T
    Q, _ = linalg.qr(U_k.T @ T, mode="full")
    Z_k = Q[:, 2:]
    P = Z_k.T @ (D_k[:, None] * Z_k)
    p_evals, p_evecs = linalg.eigh(0.5 * (P + P.T))
    transform = U_k @ Z_k @ p_evecs
    penalty = np.diag(np.maximum(p_evals, 0.0))
    return centres, raw, raw_deriv, transform, penalty, penalty


# ---------------------------------------------------------------------- #
# Public operations
# ---------------------------------------------------------------------- #

def build_basis(kind: BasisKind, construction_points) -> BasisDesign:
    """
    Build a basis design from construction points (the naive predictor w)

    Args:
        kind: Basis kind and dimension
        construction_points: Values the knots / centres are placed on

    Returns:
        BasisDesign, deterministic given the inputs
    """
    x = np.asarray(construction_points, dtype=float).ravel()
    if x.size == 0 or not np.all(np.isfinite(x)):
        raise BasisError("construction points must be finite and non-empty")
    ux = np.unique(x)
    lo, hi = float(ux[0]), float(ux[-1])
    if hi <= lo:
        raise BasisError("construction points are constant; basis range is degenerate")
    if ux.size < kind.dim:
        raise BasisError(f"{kind.kind} basis of dim {kind.dim} needs at least {kind.dim} distinct points, got {ux.size}")

    if kind.kind == "truncated_linear":
        parts = _truncated_linear(ux, kind.dim)
    elif kind.kind == "cubic_regression":
        parts = _cubic_regression(ux, kind.dim)
    elif kind.kind == "p_spline":
        parts = _p_spline(lo, hi, kind.dim)
    else:
        parts = _thin_plate(ux, kind.dim)
    knots, raw, raw_deriv, transform, penalty, fitting_penalty = parts
    logger.debug("built %s basis: dim=%d, q=%d, range=[%g, %g]", kind.kind, kind.dim, transform.shape[1], lo, hi)
    return BasisDesign(
        kind=kind,
        knots=np.asarray(knots, dtype=float),
        range=(lo, hi),
        penalty=penalty,
        fitting_penalty=fitting_penalty,
        transform=transform,
        raw=raw,
        raw_deriv=raw_deriv,
    )


def evaluate_basis(design: BasisDesign, points) -> BasisExpansion:
    """Rows [x_i | z_i] of the design at the given points (linear extension outside the range)."""
    return design.evaluate(points)


def penalty_matrix(design: BasisDesign) -> np.ndarray:
    """Penalty S on the penalized coefficients u."""
    return design.penalty.copy()


def make_basis(kind: str, dim: Optional[int] = None) -> BasisKind:
    return BasisKind(kind=kind, dim=BASIS_DIM if dim is None else dim)
