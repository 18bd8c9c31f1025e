"""
Non-robust and comparator estimators: OLS (Gauss-Markov and HC3 standard
errors), orthogonal regression, geometric-mean regression, and the
higher-moment and rank instrumental-variable estimators.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import stats

from src.errors import (
    DegenerateInstrumentError,
    DegenerateOrientationError,
    DegenerateSampleError,
    InsufficientDataError,
    LeverageSingularityError,
    ParameterError,
    SignIndeterminateError,
    SingularDesignError,
    SingularSystemError,
    WeakInstrumentError,
)
from src.numerics import as_data_matrix, as_vector, eigh, inverse_spd, sample_covariance, solve_spd

logger = logging.getLogger(__name__)


@dataclass
class RegressionFit:
    intercept: float
    slopes: np.ndarray
    method: str
    residuals: np.ndarray = field(default_factory=lambda: np.empty(0))
    r_squared: float = float("nan")
    # None means "not available" for methods without a standard-error formula
    stderr_intercept: Optional[float] = None
    stderr_slopes: Optional[np.ndarray] = None
    converged: bool = True

    @property
    def coefficients(self) -> np.ndarray:
        return np.concatenate([[self.intercept], self.slopes])

    @property
    def slope(self) -> float:
        return float(self.slopes[0])


def with_intercept(x: np.ndarray) -> np.ndarray:
    return np.column_stack([np.ones(x.shape[0]), x])


def _check_xy(x, y) -> tuple[np.ndarray, np.ndarray]:
    x = as_data_matrix(x)
    y = as_vector(y)
    if x.shape[0] != y.size:
        raise ParameterError(f"x has {x.shape[0]} rows but y has {y.size} entries")
    return x, y


def fit_summary(x, y, intercept: float, slopes, method: str, **extra) -> RegressionFit:
    """
    Wraps coefficients into a RegressionFit with residuals and R^2 = 1 - RSS/TSS,
    clamped at 0.
    """
    x, y = _check_xy(x, y)
    slopes = np.atleast_1d(np.asarray(slopes, dtype=np.float64))
    residuals = y - intercept - x @ slopes
    tss = float(np.sum((y - y.mean()) ** 2))
    rss = float(residuals @ residuals)
    r2 = 1.0 - rss / tss if tss > 0 else (1.0 if rss == 0 else 0.0)
    return RegressionFit(
        intercept=float(intercept),
        slopes=slopes,
        method=method,
        residuals=residuals,
        r_squared=max(0.0, r2),
        **extra,
    )


def ols_fit(x, y) -> RegressionFit:
    """OLS via the normal equations with Gauss-Markov standard errors."""
    x, y = _check_xy(x, y)
    n, p = x.shape
    if n <= p + 1:
        raise InsufficientDataError(f"OLS needs n > p + 1 (n={n}, p={p})")
    design = with_intercept(x)
    if np.linalg.matrix_rank(design) < p + 1:
        raise SingularDesignError("Design matrix with intercept is rank deficient")
    xtx = design.T @ design
    try:
        coef = solve_spd(xtx, design.T @ y)
        xtx_inv = inverse_spd(xtx)
    except SingularSystemError as e:
        raise SingularDesignError(str(e)) from e

    residuals = y - design @ coef
    sigma2 = float(residuals @ residuals) / (n - p - 1)
    se = np.sqrt(np.clip(np.diag(xtx_inv) * sigma2, 0.0, None))
    return fit_summary(
        x, y, coef[0], coef[1:], "OLS",
        stderr_intercept=float(se[0]),
        stderr_slopes=se[1:],
    )


def hc3_stderr(x, y, fit: RegressionFit) -> np.ndarray:
    """
    HC3 sandwich standard errors for the OLS fit of (x, y).
    Returns [intercept, slopes...].
    """
    x, y = _check_xy(x, y)
    design = with_intercept(x)
    try:
        xtx_inv = inverse_spd(design.T @ design)
    except SingularSystemError as e:
        raise SingularDesignError(str(e)) from e
    leverage = np.einsum("ij,jk,ik->i", design, xtx_inv, design)
    if np.any(leverage >= 1.0 - 1e-12):
        worst = int(np.argmax(leverage))
        raise LeverageSingularityError(f"Row {worst} has leverage {leverage[worst]:.15f}")
    residuals = y - design @ fit.coefficients
    omega = residuals**2 / (1.0 - leverage) ** 2
    meat = design.T @ (design * omega[:, None])
    cov = xtx_inv @ meat @ xtx_inv
    return np.sqrt(np.clip(np.diag(cov), 0.0, None))


def orthogonal_slope(cov: np.ndarray) -> float:
    """Slope of the smallest-eigenvalue eigenvector of a 2x2 covariance of (x, y)."""
    _, vectors = eigh(cov)
    v = vectors[:, 0]
    if abs(v[1]) <= 1e-14 * np.abs(v).max():
        raise DegenerateOrientationError("Principal axis is vertical; orthogonal slope undefined")
    return float(-v[0] / v[1])


def orthogonal_fit(x, y) -> RegressionFit:
    x, y = _check_xy(x, y)
    if x.shape[1] != 1:
        raise ParameterError("orthogonal_fit is bivariate only")
    if x.shape[0] < 3:
        raise InsufficientDataError("orthogonal_fit needs n >= 3")
    xv = x[:, 0]
    slope = orthogonal_slope(sample_covariance(np.column_stack([xv, y])))
    return fit_summary(x, y, y.mean() - slope * xv.mean(), [slope], "OR")


def geom_fit(x, y) -> RegressionFit:
    """Geometric-mean regression: sign(corr) * sd(y) / sd(x)."""
    x, y = _check_xy(x, y)
    if x.shape[1] != 1:
        raise ParameterError("geom_fit is bivariate only")
    if x.shape[0] < 3:
        raise InsufficientDataError("geom_fit needs n >= 3")
    xv = x[:, 0]
    cov = sample_covariance(np.column_stack([xv, y]))
    if cov[0, 0] <= 0:
        raise DegenerateSampleError("geom_fit: x has zero variance")
    if cov[0, 1] == 0:
        raise SignIndeterminateError("geom_fit: zero correlation leaves the slope sign undefined")
    slope = math.copysign(math.sqrt(cov[1, 1]) / math.sqrt(cov[0, 0]), cov[0, 1])
    return fit_summary(x, y, y.mean() - slope * xv.mean(), [slope], "GEOM")


def iv_fit(instrument, w, y, method: str = "IV") -> RegressionFit:
    """Simple IV slope cov(g, y) / cov(g, w)."""
    g = as_vector(instrument)
    w = as_vector(w)
    y = as_vector(y)
    if not g.size == w.size == y.size:
        raise ParameterError("instrument, regressor and response lengths differ")
    gc = g - g.mean()
    cov_gw = float(gc @ (w - w.mean())) / (w.size - 1)
    cov_gy = float(gc @ (y - y.mean())) / (w.size - 1)
    scale = float(np.std(g, ddof=1) * np.std(w, ddof=1))
    if abs(cov_gw) < 1e-10 * scale or scale == 0:
        raise WeakInstrumentError(f"{method}: instrument is uncorrelated with the regressor")
    slope = cov_gy / cov_gw
    return fit_summary(w.reshape(-1, 1), y, y.mean() - slope * w.mean(), [slope], method)


def moment_iv_fit(w, y) -> RegressionFit:
    """Higher-moment IV with instrument (w - mean(w))^2; needs a skewed regressor."""
    w = as_data_matrix(w)
    if w.shape[1] != 1:
        raise ParameterError("moment_iv_fit is bivariate only")
    w = w[:, 0]
    if w.size < 10:
        raise InsufficientDataError("moment_iv_fit needs n >= 10")
    return iv_fit((w - w.mean()) ** 2, w, y, method="IV")


def rank_iv_fit(w, y) -> RegressionFit:
    """IV with the (average-tie) ranks of the observed regressor as instrument."""
    w = as_data_matrix(w)
    if w.shape[1] != 1:
        raise ParameterError("rank_iv_fit is bivariate only")
    w = w[:, 0]
    if w.size < 10:
        raise InsufficientDataError("rank_iv_fit needs n >= 10")
    if np.ptp(w) == 0:
        raise DegenerateInstrumentError("rank_iv_fit: constant regressor has no ranking")
    return iv_fit(stats.rankdata(w, method="average"), w, y, method="RANK")


def group_means_fit(w, y) -> RegressionFit:
    """
    Three-group estimator: the slope through the (w, y) means of the top and
    bottom thirds of the sample ordered by w. Equivalent to IV with a +1/0/-1
    group instrument. Ties in w keep their row order.
    """
    w = as_data_matrix(w)
    if w.shape[1] != 1:
        raise ParameterError("group_means_fit is bivariate only")
    w = w[:, 0]
    if w.size < 10:
        raise InsufficientDataError("group_means_fit needs n >= 10")
    if np.ptp(w) == 0:
        raise DegenerateInstrumentError("group_means_fit: constant regressor cannot be split into groups")
    k = w.size // 3
    order = np.argsort(w, kind="stable")
    g = np.zeros(w.size)
    g[order[:k]] = -1.0
    g[order[-k:]] = 1.0
    return iv_fit(g, w, y, method="GROUP")


def attenuation_limit(var_x: float, frac: float, mu_u: float, sd_u: float) -> float:
    """
    Probability limit of the OLS slope (true slope 1) when a share `frac` of the
    regressor observations carries an N(mu_u, sd_u) measurement error.
    """
    if not 0.0 <= frac < 0.5:
        raise ParameterError(f"frac must lie in [0, 0.5), got {frac}")
    if var_x <= 0:
        raise ParameterError(f"var_x must be > 0, got {var_x}")
    error_var = frac * (sd_u**2 + mu_u**2) - frac**2 * mu_u**2
    return var_x / (var_x + error_var)
