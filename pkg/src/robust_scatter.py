"""
High-breakdown multivariate location and scatter.

DetMCD: six deterministic starts, each concentrated with C-steps to a local
minimum of the h-subset covariance determinant; the smallest determinant wins.
DetS: the same starts, iterated to a fixed point of the biweight S-estimating
equations. Raw (initial) estimates only; no reweighting step.
"""

import logging
import math
from dataclasses import dataclass, field, replace
from typing import List, Optional

import numpy as np
from scipy import stats

from src import biweight, config
from src.classical import RegressionFit, fit_summary
from src.errors import (
    DegenerateCoordinateError,
    DegenerateDataError,
    InsufficientDataError,
    ParameterError,
    RankCollapseError,
    SingularDesignError,
    SingularSystemError,
)
from src.numerics import (
    as_data_matrix,
    as_symmetric,
    eigh,
    inverse_spd,
    log_det,
    mahalanobis_sq_rows,
    median_abs_dev,
    sample_covariance,
    solve_spd,
)

logger = logging.getLogger(__name__)

START_NAMES = ("tanh", "spearman", "normal-scores", "spatial-sign", "half-norm", "ogk")


@dataclass
class ScatterEstimate:
    location: np.ndarray
    # consistency-corrected when consistency_applied, else equal to raw_scatter
    scatter: np.ndarray
    raw_scatter: np.ndarray
    support: np.ndarray
    # determinant of raw_scatter
    determinant: float
    log_determinant: float
    h: int
    consistency_applied: bool = False
    degenerate: bool = False
    method: str = "DetMCD"
    start_index: int = -1
    iterations: int = 0
    history: tuple = field(default=(), repr=False)


def h_subset_size(n: int, p: int, alpha: float = 0.5) -> int:
    """h(alpha) = floor(2*n2 - n + 2*(n - n2)*alpha), n2 = floor((n+p+1)/2)."""
    if not 0.5 <= alpha <= 1.0:
        raise ParameterError(f"alpha must lie in [0.5, 1], got {alpha}")
    n2 = (n + p + 1) // 2
    h = int(math.floor(2 * n2 - n + 2 * (n - n2) * alpha))
    return min(max(h, n2), n)


def consistency_factor(h: int, n: int, p: int) -> float:
    """Gaussian consistency factor (h/n) / P(chi2_{p+2} <= chi2_p quantile at h/n)."""
    if h >= n:
        return 1.0
    q = stats.chi2.ppf(h / n, p)
    return float((h / n) / stats.chi2.cdf(q, p + 2))


def _floor_spectrum(s: np.ndarray) -> tuple[np.ndarray, bool]:
    values, vectors = eigh(s)
    floor = config.EIGEN_FLOOR * max(float(np.trace(s)), np.finfo(float).tiny)
    if values.min() >= floor:
        return s, False
    values = np.maximum(values, floor)
    return as_symmetric(vectors @ np.diag(values) @ vectors.T), True


def subset_estimate(m: np.ndarray, support: np.ndarray, h: int, **kwargs) -> ScatterEstimate:
    """Mean and covariance of the rows in `support`; singular covariance raises RankCollapseError."""
    support = np.sort(np.asarray(support, dtype=np.int64))
    rows = m[support]
    location = rows.mean(axis=0)
    scatter = sample_covariance(rows)
    values, _ = eigh(scatter)
    if values.min() <= config.EIGEN_FLOOR * max(float(np.trace(scatter)), np.finfo(float).tiny):
        raise RankCollapseError(f"Subset covariance of {support.size} rows is singular", subset=support)
    logdet = log_det(scatter)
    return ScatterEstimate(
        location=location,
        scatter=scatter,
        raw_scatter=scatter,
        support=support,
        determinant=float(np.exp(logdet)),
        log_determinant=float(logdet),
        h=h,
        **kwargs,
    )


def c_step(m, current: ScatterEstimate) -> ScatterEstimate:
    """
    One concentration step: keep the h rows closest to (location, raw scatter)
    and re-estimate from them. Never increases the determinant.
    """
    m = as_data_matrix(m)
    try:
        s_inv = inverse_spd(current.raw_scatter)
    except SingularSystemError as e:
        raise RankCollapseError(str(e), subset=current.support) from e
    d2 = mahalanobis_sq_rows(m, current.location, s_inv)
    support = np.argsort(d2, kind="stable")[: current.h]
    return subset_estimate(
        m, support, current.h,
        method=current.method,
        start_index=current.start_index,
        degenerate=current.degenerate,
    )


def concentrate(
    m,
    start: ScatterEstimate,
    max_iter: int = config.CSTEP_MAX_ITER,
    tol: float = config.CSTEP_REL_TOL,
) -> ScatterEstimate:
    """Iterates C-steps until the support repeats or the determinant stops falling."""
    m = as_data_matrix(m)
    current = start
    history = [start.determinant]
    iterations = 0
    for iterations in range(1, max_iter + 1):
        new = c_step(m, current)
        history.append(new.determinant)
        if np.array_equal(new.support, current.support):
            current = new
            break
        # log-determinant gap is the relative decrease to first order
        decrease = current.log_determinant - new.log_determinant
        current = new
        if decrease < tol:
            break
    return replace(current, iterations=iterations, history=tuple(history))


def _standardize(m: np.ndarray) -> np.ndarray:
    med = np.median(m, axis=0)
    mad = np.array([median_abs_dev(col) for col in m.T])
    zero = np.flatnonzero(mad == 0)
    if zero.size:
        raise DegenerateCoordinateError(f"Zero MAD in coordinate(s) {zero.tolist()}")
    return (m - med) / mad


def _corr(a: np.ndarray) -> np.ndarray:
    return np.atleast_2d(np.corrcoef(a, rowvar=False))


def _initial_scatters(z: np.ndarray) -> List[np.ndarray]:
    n, p = z.shape
    ranks = stats.rankdata(z, axis=0)
    norms = np.linalg.norm(z, axis=1)

    signs = np.zeros_like(z)
    nonzero = norms > 0
    signs[nonzero] = z[nonzero] / norms[nonzero, None]

    half = np.argsort(norms, kind="stable")[: int(math.ceil(n / 2))]

    ogk = np.eye(p)
    for j in range(p):
        for k in range(j + 1, p):
            plus = median_abs_dev(z[:, j] + z[:, k])
            minus = median_abs_dev(z[:, j] - z[:, k])
            ogk[j, k] = ogk[k, j] = (plus**2 - minus**2) / 4.0

    return [
        _corr(np.tanh(z)),
        _corr(ranks),
        _corr(stats.norm.ppf((ranks - 1.0 / 3.0) / (n + 1.0 / 3.0))),
        as_symmetric(signs.T @ signs / n),
        sample_covariance(z[half]),
        ogk,
    ]


def _start_support(z: np.ndarray, s: np.ndarray, h: int) -> tuple[np.ndarray, bool]:
    """
    Turns a raw start scatter into an h-subset: robust eigen-rescaling, a
    half-sample refinement, then the h rows of smallest distance.
    """
    n, p = z.shape
    _, vectors = eigh(s)
    projected = z @ vectors
    lam = np.array([median_abs_dev(col) ** 2 for col in projected.T])
    sigma, flagged = _floor_spectrum(as_symmetric(vectors @ np.diag(lam) @ vectors.T))

    values, vecs = eigh(sigma)
    root = vecs @ np.diag(np.sqrt(values)) @ vecs.T
    inv_root = vecs @ np.diag(1.0 / np.sqrt(values)) @ vecs.T
    location = np.median(z @ inv_root, axis=0) @ root

    d2 = mahalanobis_sq_rows(z, location, inverse_spd(sigma))
    h0 = int(math.ceil(n / 2))
    half = np.argsort(d2, kind="stable")[:h0]
    half_scatter, flagged_half = _floor_spectrum(sample_covariance(z[half]))
    d2 = mahalanobis_sq_rows(z, z[half].mean(axis=0), inverse_spd(half_scatter))
    return np.sort(np.argsort(d2, kind="stable")[:h]), flagged or flagged_half


def six_starts(m, h: Optional[int] = None, method: str = "DetMCD") -> List[ScatterEstimate]:
    """
    Six deterministic initial h-subset estimates computed on median/MAD
    standardized data. Near-singular start scatters are floored at
    1e-12 * trace and flagged `degenerate`.
    """
    m = as_data_matrix(m)
    n, p = m.shape
    if n <= 2 * p:
        raise InsufficientDataError(f"Need n > 2p (n={n}, p={p})")
    h = h if h is not None else h_subset_size(n, p)
    z = _standardize(m)

    starts = []
    for index, s in enumerate(_initial_scatters(z)):
        support, flagged = _start_support(z, s, h)
        try:
            est = subset_estimate(m, support, h, method=method, start_index=index, degenerate=flagged)
        except RankCollapseError:
            rows = m[support]
            scatter, _ = _floor_spectrum(sample_covariance(rows))
            logdet = log_det(scatter)
            est = ScatterEstimate(
                location=rows.mean(axis=0),
                scatter=scatter,
                raw_scatter=scatter,
                support=support,
                determinant=float(np.exp(logdet)),
                log_determinant=float(logdet),
                h=h,
                method=method,
                start_index=index,
                degenerate=True,
            )
        if est.degenerate:
            logger.warning(f"Start {START_NAMES[index]} is near-singular; eigenvalues floored")
        starts.append(est)
    return starts


def detmcd(m, alpha: float = 0.5, h: Optional[int] = None) -> ScatterEstimate:
    """
    Deterministic MCD. Returns the smallest-determinant C-step fixed point over
    the six starts (ties broken by start index), with the scatter rescaled by
    the Gaussian consistency factor.
    """
    m = as_data_matrix(m)
    n, p = m.shape
    if n <= 2 * p:
        raise InsufficientDataError(f"DetMCD needs n > 2p (n={n}, p={p})")
    if h is None:
        h = h_subset_size(n, p, alpha)
    elif not (n + p + 1) // 2 <= h <= n:
        raise ParameterError(f"h={h} outside [{(n + p + 1) // 2}, {n}]")

    fixed_points = []
    for start in six_starts(m, h):
        try:
            fixed_points.append(concentrate(m, start))
        except RankCollapseError as e:
            logger.warning(f"DetMCD start {START_NAMES[start.start_index]} collapsed: {e}")
    if not fixed_points:
        raise DegenerateDataError("Every DetMCD start collapsed to a singular subset")

    best = min(fixed_points, key=lambda est: (est.log_determinant, est.start_index))
    factor = consistency_factor(h, n, p)
    return replace(best, scatter=as_symmetric(factor * best.raw_scatter), consistency_applied=True)


def _s_fixed_point(m: np.ndarray, start: ScatterEstimate, c: float, b: float) -> ScatterEstimate:
    n, p = m.shape
    location = start.location
    shape = start.raw_scatter / math.exp(start.log_determinant / p)
    d = np.sqrt(mahalanobis_sq_rows(m, location, inverse_spd(shape)))
    sigma = biweight.m_scale(d, c, b)
    if sigma == 0:
        raise RankCollapseError("Half or more rows sit exactly on the start location", subset=start.support)

    iterations = 0
    history = [sigma ** (2 * p)]
    for iterations in range(1, config.S_MAX_ITER + 1):
        w = biweight.weight(d / sigma, c)
        active = np.flatnonzero(w > 0)
        if active.size <= p:
            raise RankCollapseError("Too few rows keep positive weight", subset=active)
        location = w @ m / w.sum()
        diff = m - location
        cov = as_symmetric((diff * w[:, None]).T @ diff / w.sum())
        if np.linalg.eigvalsh(cov).min() <= config.EIGEN_FLOOR * np.trace(cov):
            raise RankCollapseError("Weighted covariance is singular", subset=active)
        logdet = log_det(cov)
        shape = cov / math.exp(logdet / p)
        d = np.sqrt(mahalanobis_sq_rows(m, location, inverse_spd(shape)))
        new_sigma = biweight.m_scale(d, c, b)
        history.append(new_sigma ** (2 * p))
        done = abs(sigma - new_sigma) <= config.S_REL_TOL * sigma
        sigma = new_sigma
        if done:
            break

    scatter = as_symmetric(sigma**2 * shape)
    support = np.flatnonzero(d / sigma < c)
    return ScatterEstimate(
        location=location,
        scatter=scatter,
        raw_scatter=scatter,
        support=support,
        determinant=sigma ** (2 * p),
        log_determinant=2 * p * math.log(sigma),
        h=int(support.size),
        method="DetS",
        start_index=start.start_index,
        iterations=iterations,
        history=tuple(history),
    )


def dets(m) -> ScatterEstimate:
    """
    Deterministic S-estimate with a 50%-breakdown biweight, tuned for Gaussian
    consistency in dimension p.
    """
    m = as_data_matrix(m)
    n, p = m.shape
    if n <= 2 * p:
        raise InsufficientDataError(f"DetS needs n > 2p (n={n}, p={p})")
    c = biweight.breakdown_constant(p)
    b = biweight.breakdown_b(c, p)

    fixed_points = []
    for start in six_starts(m, method="DetS"):
        try:
            fixed_points.append(_s_fixed_point(m, start, c, b))
        except (RankCollapseError, SingularSystemError) as e:
            logger.warning(f"DetS start {START_NAMES[start.start_index]} collapsed: {e}")
    if not fixed_points:
        raise DegenerateDataError("Every DetS start collapsed to a singular subset")
    return min(fixed_points, key=lambda est: (est.log_determinant, est.start_index))


def scatter_to_regression(est: ScatterEstimate, dep: int = -1, data=None) -> RegressionFit:
    """
    Regression coefficients implied by a scatter matrix: slopes = C_xx^-1 c_xy,
    intercept = mu_dep - slopes . mu_x. Residuals are filled when `data` (the
    joined matrix the estimate came from) is given.
    """
    scatter = as_symmetric(est.scatter)
    k = scatter.shape[0]
    if k < 2:
        raise ParameterError("Need at least one regressor and one response column")
    dep = dep % k
    regressors = [j for j in range(k) if j != dep]
    try:
        slopes = solve_spd(scatter[np.ix_(regressors, regressors)], scatter[regressors, dep])
    except SingularSystemError as e:
        raise SingularDesignError(f"Regressor block of the scatter is singular: {e}") from e
    intercept = float(est.location[dep] - slopes @ est.location[regressors])
    if data is None:
        return RegressionFit(intercept=intercept, slopes=slopes, method=est.method)
    data = as_data_matrix(data)
    return fit_summary(data[:, regressors], data[:, dep], intercept, slopes, est.method)


POINT_LABELS = ("regular", "vertical_outlier", "good_leverage", "bad_leverage")


@dataclass
class PointTaxonomy:
    labels: np.ndarray
    # robust distance of each row's regressors from the fitted regressor center
    distances: np.ndarray
    # residuals from the scatter-implied regression over its residual sd
    std_residuals: np.ndarray
    distance_cutoff: float
    residual_cutoff: float

    def counts(self) -> dict:
        return {label: int(np.sum(self.labels == label)) for label in POINT_LABELS}

    def rows(self, label: str) -> np.ndarray:
        if label not in POINT_LABELS:
            raise ParameterError(f"Unknown point label '{label}'. Choose from {', '.join(POINT_LABELS)}")
        return np.flatnonzero(self.labels == label)


def classify_points(
    est: ScatterEstimate,
    data,
    dep: int = -1,
    level: float = 0.975,
    residual_cutoff: float = 2.5,
) -> PointTaxonomy:
    """
    Labels every row of the joined matrix as a regular point, vertical outlier,
    good leverage point or bad leverage point. A row is a leverage point when
    its regressor distance exceeds sqrt(chi2_p quantile at `level`), and an
    outlier in y when its standardized residual exceeds `residual_cutoff`.
    """
    data = as_data_matrix(data)
    scatter = as_symmetric(est.scatter)
    k = scatter.shape[0]
    if data.shape[1] != k:
        raise ParameterError(f"Data has {data.shape[1]} columns, estimate has {k}")
    if not 0.0 < level < 1.0:
        raise ParameterError(f"level must lie in (0, 1), got {level}")
    if residual_cutoff <= 0:
        raise ParameterError(f"residual_cutoff must be > 0, got {residual_cutoff}")
    dep = dep % k
    regressors = [j for j in range(k) if j != dep]

    fit = scatter_to_regression(est, dep=dep)
    s_xx = scatter[np.ix_(regressors, regressors)]
    try:
        d2 = mahalanobis_sq_rows(data[:, regressors], est.location[regressors], inverse_spd(s_xx))
    except SingularSystemError as e:
        raise SingularDesignError(f"Regressor block of the scatter is singular: {e}") from e
    residual_var = float(scatter[dep, dep] - scatter[regressors, dep] @ fit.slopes)
    if residual_var <= config.EIGEN_FLOOR * scatter[dep, dep]:
        raise DegenerateDataError("Scatter leaves no residual variance; residuals cannot be standardized")

    residuals = data[:, dep] - fit.intercept - data[:, regressors] @ fit.slopes
    std_residuals = residuals / math.sqrt(residual_var)
    distances = np.sqrt(d2)
    distance_cutoff = math.sqrt(stats.chi2.ppf(level, len(regressors)))

    leverage = distances > distance_cutoff
    outlying = np.abs(std_residuals) > residual_cutoff
    labels = np.select(
        [leverage & outlying, leverage, outlying],
        ["bad_leverage", "good_leverage", "vertical_outlier"],
        default="regular",
    )
    return PointTaxonomy(labels, distances, std_residuals, distance_cutoff, residual_cutoff)
