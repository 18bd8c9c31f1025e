"""
Dense linear-algebra and order-statistic primitives shared by every estimator.

A DataMatrix is a finite float64 ndarray of shape (rows, cols); a
SymmetricMatrix is a square float64 ndarray whose lower triangle mirrors the
upper one. Both are validated here rather than wrapped in classes so the
estimators can use plain numpy throughout.
"""

import logging

import numpy as np
import scipy.linalg
from scipy import stats
from sklearn.utils import check_array

from src.errors import (
    DegenerateSampleError,
    NumericalFailure,
    ShapeError,
    SingularSystemError,
)

logger = logging.getLogger(__name__)

MAD_CONSISTENCY = 1.4826


def as_data_matrix(values) -> np.ndarray:
    """
    Validates and returns an (n, p) float64 matrix. A 1-d input becomes a
    single column. Raises DegenerateSampleError on empty or non-finite input.
    """
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    if arr.ndim != 2:
        raise ShapeError(f"Expected a 2-d matrix, got shape {arr.shape}")
    try:
        return check_array(arr, dtype=np.float64, ensure_all_finite=True, copy=False)
    except ValueError as e:
        raise DegenerateSampleError(str(e)) from e


def as_vector(values) -> np.ndarray:
    vec = np.asarray(values, dtype=np.float64).ravel()
    if vec.size == 0:
        raise DegenerateSampleError("Empty vector")
    if not np.all(np.isfinite(vec)):
        raise DegenerateSampleError("Vector contains non-finite values")
    return vec


def as_symmetric(values) -> np.ndarray:
    """Mirrors the upper triangle onto the lower one."""
    s = np.atleast_2d(np.asarray(values, dtype=np.float64))
    if s.shape[0] != s.shape[1]:
        raise ShapeError(f"Symmetric matrix must be square, got {s.shape}")
    upper = np.triu(s)
    return upper + np.triu(s, 1).T


def column_means(m) -> np.ndarray:
    return as_data_matrix(m).mean(axis=0)


def sample_covariance(m) -> np.ndarray:
    """Unbiased (divisor rows - 1) covariance matrix of the columns of m."""
    m = as_data_matrix(m)
    if m.shape[0] < 2:
        raise DegenerateSampleError("Covariance needs at least 2 rows")
    centered = m - m.mean(axis=0)
    cov = centered.T @ centered / (m.shape[0] - 1)
    return as_symmetric(cov)


def eigh(s) -> tuple[np.ndarray, np.ndarray]:
    """
    Eigen-decomposition of a symmetric matrix.
    Returns (eigenvalues ascending, eigenvectors as columns).
    """
    s = as_symmetric(s)
    if not np.all(np.isfinite(s)):
        raise NumericalFailure("eigh: matrix has non-finite entries")
    try:
        values, vectors = np.linalg.eigh(s)
    except np.linalg.LinAlgError as e:
        raise NumericalFailure(f"eigh did not converge: {e}") from e
    return values, vectors


def solve_spd(a, b) -> np.ndarray:
    """Solves a·x = b for symmetric positive definite a via Cholesky."""
    a = as_symmetric(a)
    b = np.asarray(b, dtype=np.float64)
    if b.shape[0] != a.shape[0]:
        raise ShapeError(f"solve_spd: a is {a.shape}, b has {b.shape[0]} rows")
    try:
        factor = scipy.linalg.cho_factor(a, lower=True, check_finite=True)
    except (np.linalg.LinAlgError, ValueError) as e:
        raise SingularSystemError(f"Non-positive pivot in Cholesky factorization: {e}") from e
    return scipy.linalg.cho_solve(factor, b)


def inverse_spd(a) -> np.ndarray:
    a = as_symmetric(a)
    return as_symmetric(solve_spd(a, np.eye(a.shape[0])))


def log_det(s) -> float:
    """Log-determinant of an SPD matrix; raises SingularSystemError otherwise."""
    sign, logdet = np.linalg.slogdet(as_symmetric(s))
    if sign <= 0 or not np.isfinite(logdet):
        raise SingularSystemError("Matrix is not positive definite")
    return float(logdet)


def quantile(v, q: float) -> float:
    """Type-7 (linear interpolation, h = (n-1)q) quantile."""
    vec = np.asarray(v, dtype=np.float64).ravel()
    if vec.size == 0:
        raise DegenerateSampleError("quantile of an empty vector")
    if not 0.0 <= q <= 1.0:
        raise ShapeError(f"quantile level must lie in [0, 1], got {q}")
    return float(np.quantile(vec, q, method="linear"))


def median_abs_dev(v) -> float:
    """Gaussian-consistent MAD: 1.4826 * median(|v - median(v)|)."""
    vec = as_vector(v)
    return MAD_CONSISTENCY * float(stats.median_abs_deviation(vec, scale=1.0))


def mahalanobis_sq(x, mu, s_inv) -> float:
    x = np.asarray(x, dtype=np.float64).ravel()
    mu = np.asarray(mu, dtype=np.float64).ravel()
    s_inv = as_symmetric(s_inv)
    if not (x.shape == mu.shape and s_inv.shape == (x.size, x.size)):
        raise ShapeError(
            f"mahalanobis_sq: x {x.shape}, mu {mu.shape}, s_inv {s_inv.shape} disagree"
        )
    diff = x - mu
    return float(diff @ s_inv @ diff)


def mahalanobis_sq_rows(m: np.ndarray, mu, s_inv) -> np.ndarray:
    """Squared distances of every row of m; vectorized form of mahalanobis_sq."""
    m = np.asarray(m, dtype=np.float64)
    mu = np.asarray(mu, dtype=np.float64).ravel()
    s_inv = as_symmetric(s_inv)
    if m.shape[1] != mu.size or s_inv.shape != (mu.size, mu.size):
        raise ShapeError(
            f"mahalanobis_sq_rows: data {m.shape}, mu {mu.shape}, s_inv {s_inv.shape} disagree"
        )
    diff = m - mu
    return np.einsum("ij,jk,ik->i", diff, s_inv, diff)
