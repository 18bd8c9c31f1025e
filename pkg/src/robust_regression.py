"""
Regression S-estimator (the MM initial fit) and the fixed-scale MM step.
"""

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

from src import biweight, config
from src.classical import RegressionFit, fit_summary, with_intercept
from src.errors import DegenerateDesignError, InsufficientDataError, ParameterError
from src.numerics import as_data_matrix, as_vector
from src.randgen import RngStream

logger = logging.getLogger(__name__)

# 50% breakdown biweight constant for a univariate residual scale
S_TUNING = biweight.breakdown_constant(1)


@dataclass
class SRegressionState:
    coefficients: np.ndarray  # intercept first
    scale: float
    objective: float
    converged: bool = True
    iterations: int = 0


def residual_mscale(residuals, c: float = S_TUNING) -> float:
    """M-scale of residuals with b0 = rho(c)/2; 0 when residuals are (mostly) zero."""
    return biweight.m_scale(residuals, c)


def _weighted_ls(design: np.ndarray, y: np.ndarray, w: np.ndarray) -> Optional[np.ndarray]:
    root = np.sqrt(w)
    coef, _, rank, _ = np.linalg.lstsq(design * root[:, None], y * root, rcond=None)
    if rank < design.shape[1]:
        return None
    return coef


def _irwls_s(
    design: np.ndarray,
    y: np.ndarray,
    coef: np.ndarray,
    scale: float,
    max_steps: int,
    exact_scale: bool,
) -> tuple[np.ndarray, float, bool, int]:
    """
    S iterations: reweight by the biweight at the current scale, refit, rescale.
    exact_scale=False uses the one-step scale update of the local search.
    """
    c = S_TUNING
    b = 0.5 * biweight.rho_max(c)
    steps = 0
    for steps in range(1, max_steps + 1):
        if scale == 0:
            return coef, 0.0, True, steps
        w = biweight.weight((y - design @ coef) / scale, c)
        new = _weighted_ls(design, y, w)
        if new is None:
            return coef, scale, False, steps
        residuals = y - design @ new
        if exact_scale:
            new_scale = residual_mscale(residuals, c)
        else:
            new_scale = scale * np.sqrt(np.mean(biweight.rho(residuals / scale, c)) / b)
        shift = np.max(np.abs(new - coef)) / (1.0 + np.max(np.abs(coef)))
        coef, scale = new, float(new_scale)
        if exact_scale and shift < config.IRWLS_TOL:
            return coef, scale, True, steps
    return coef, scale, not exact_scale, steps


def s_regression(
    x,
    y,
    n_subsets: int = config.DEFAULT_SUBSETS,
    rng: Optional[RngStream] = None,
) -> SRegressionState:
    """
    Fast-S search: random (p+1)-row elemental fits, two local improvement
    steps each, full refinement of the best five, smallest M-scale wins.
    """
    x = as_data_matrix(x)
    y = as_vector(y)
    n, p = x.shape
    if n != y.size:
        raise ParameterError(f"x has {n} rows but y has {y.size} entries")
    if n <= 2 * (p + 1):
        raise InsufficientDataError(f"S-regression needs n > 2(p+1) (n={n}, p={p})")
    rng = rng or RngStream(config.DEFAULT_SEED, 0)
    design = with_intercept(x)
    k = p + 1

    candidates = []
    for index in range(n_subsets):
        rows = rng.choice(n, k)
        sub = design[rows]
        if np.linalg.matrix_rank(sub) < k:
            continue
        coef = np.linalg.solve(sub, y[rows])
        residuals = y - design @ coef
        scale = float(np.median(np.abs(residuals)) / 0.6745)
        if scale == 0:
            scale = residual_mscale(residuals)
        coef, scale, _, _ = _irwls_s(design, y, coef, scale, config.S_LOCAL_STEPS, exact_scale=False)
        # ranked by the one-step scale approximation, as in the fast-S search
        candidates.append((scale, index, coef))

    if not candidates:
        raise DegenerateDesignError(f"All {n_subsets} elemental subsets were singular")

    candidates.sort(key=lambda item: (item[0], item[1]))
    best: Optional[SRegressionState] = None
    for scale, index, coef in candidates[: config.S_BEST_CANDIDATES]:
        coef, scale, converged, steps = _irwls_s(
            design, y, coef, scale, config.IRWLS_MAX_ITER, exact_scale=True
        )
        if best is None or scale < best.scale:
            best = SRegressionState(coef, scale, scale, converged, steps)
    if not best.converged:
        logger.warning("S-regression refinement hit the iteration cap")
    return best


def mm_step(
    x,
    y,
    initial: SRegressionState,
    efficiency: float = config.DEFAULT_MM_EFFICIENCY,
    history: Optional[list] = None,
) -> RegressionFit:
    """
    IRWLS with a biweight tuned to `efficiency`, scale held at initial.scale.
    Returns the last iterate with converged=False after IRWLS_MAX_ITER.
    When `history` is a list, the objective at every iterate is appended to it.
    """
    x = as_data_matrix(x)
    y = as_vector(y)
    design = with_intercept(x)
    coef = np.asarray(initial.coefficients, dtype=np.float64)
    if initial.scale <= 0:
        return fit_summary(x, y, coef[0], coef[1:], "MM")

    c = biweight.efficiency_constant(efficiency)
    converged = False
    for _ in range(config.IRWLS_MAX_ITER):
        if history is not None:
            history.append(mm_objective(x, y, coef, initial.scale, efficiency))
        w = biweight.weight((y - design @ coef) / initial.scale, c)
        new = _weighted_ls(design, y, w)
        if new is None:
            logger.warning("MM step: weighted design lost rank; keeping last iterate")
            break
        shift = np.max(np.abs(new - coef)) / (1.0 + np.max(np.abs(coef)))
        coef = new
        if shift < config.IRWLS_TOL:
            converged = True
            break
    if history is not None:
        history.append(mm_objective(x, y, coef, initial.scale, efficiency))
    if not converged:
        logger.warning("MM step did not converge")
    return fit_summary(x, y, coef[0], coef[1:], "MM", converged=converged)


def mm_objective(x, y, coefficients, scale: float, efficiency: float = config.DEFAULT_MM_EFFICIENCY) -> float:
    """Fixed-scale M-objective sum(rho(r_i / scale)) that the MM step descends."""
    design = with_intercept(as_data_matrix(x))
    c = biweight.efficiency_constant(efficiency)
    return float(np.sum(biweight.rho((as_vector(y) - design @ coefficients) / scale, c)))


def s_fit(x, y, n_subsets: int = config.DEFAULT_SUBSETS, rng: Optional[RngStream] = None) -> RegressionFit:
    """The S initial estimate packaged as a RegressionFit."""
    state = s_regression(x, y, n_subsets=n_subsets, rng=rng)
    return fit_summary(x, y, state.coefficients[0], state.coefficients[1:], "MM", converged=state.converged)
