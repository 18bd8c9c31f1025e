"""Estimator registry shared by the simulation engine and the data pipeline."""

import logging
from dataclasses import dataclass
from typing import Callable, Dict, Iterable, List, Optional

import numpy as np

from src import config
from src.classical import (
    RegressionFit,
    geom_fit,
    group_means_fit,
    moment_iv_fit,
    ols_fit,
    orthogonal_fit,
    rank_iv_fit,
)
from src.errors import ParameterError
from src.numerics import as_data_matrix, as_vector
from src.randgen import RngStream
from src.robust_regression import mm_step, s_fit, s_regression
from src.robust_scatter import detmcd, dets, scatter_to_regression

logger = logging.getLogger(__name__)

# Display order follows the tables: classical first, then the robust trio
ESTIMATOR_TAGS = ("OLS", "MM", "DetMCD", "DetS", "OR", "GEOM", "IV", "RANK", "GROUP")
BIVARIATE_ONLY = frozenset({"OR", "GEOM", "IV", "RANK", "GROUP"})


@dataclass
class FitOptions:
    n_subsets: int = config.DEFAULT_SUBSETS
    # None keeps the raw S estimate for MM; a fraction adds the efficiency step
    mm_efficiency: Optional[float] = None
    rng: Optional[RngStream] = None


def resolve_tag(tag: str) -> str:
    lookup = {t.lower(): t for t in ESTIMATOR_TAGS}
    try:
        return lookup[tag.strip().lower()]
    except KeyError:
        raise ParameterError(f"Unknown estimator '{tag}'. Choose from {', '.join(ESTIMATOR_TAGS)}") from None


def resolve_tags(tags: Iterable[str]) -> List[str]:
    return [resolve_tag(t) for t in tags]


def robust_scatter_fit(x, y, method: str = "DetMCD") -> RegressionFit:
    """Fits DetMCD or DetS on the joined (x, y) matrix and converts the scatter to a regression."""
    x = as_data_matrix(x)
    joined = np.column_stack([x, as_vector(y)])
    est = detmcd(joined) if method == "DetMCD" else dets(joined)
    return scatter_to_regression(est, dep=-1, data=joined)


def _fit_mm(x, y, options: FitOptions) -> RegressionFit:
    if options.mm_efficiency is None:
        return s_fit(x, y, n_subsets=options.n_subsets, rng=options.rng)
    state = s_regression(x, y, n_subsets=options.n_subsets, rng=options.rng)
    return mm_step(x, y, state, efficiency=options.mm_efficiency)


_REGISTRY: Dict[str, Callable[[np.ndarray, np.ndarray, FitOptions], RegressionFit]] = {
    "OLS": lambda x, y, o: ols_fit(x, y),
    "MM": _fit_mm,
    "DetMCD": lambda x, y, o: robust_scatter_fit(x, y, "DetMCD"),
    "DetS": lambda x, y, o: robust_scatter_fit(x, y, "DetS"),
    "OR": lambda x, y, o: orthogonal_fit(x, y),
    "GEOM": lambda x, y, o: geom_fit(x, y),
    "IV": lambda x, y, o: moment_iv_fit(x, y),
    "RANK": lambda x, y, o: rank_iv_fit(x, y),
    "GROUP": lambda x, y, o: group_means_fit(x, y),
}


def fit_estimator(tag: str, x, y, options: Optional[FitOptions] = None) -> RegressionFit:
    tag = resolve_tag(tag)
    x = as_data_matrix(x)
    if tag in BIVARIATE_ONLY and x.shape[1] != 1:
        raise ParameterError(f"{tag} supports a single regressor only (got {x.shape[1]})")
    return _REGISTRY[tag](x, y, options or FitOptions())
