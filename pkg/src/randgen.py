"""
Seeded random draws for the simulation designs.

Every stream is a Philox (counter-based) generator keyed by
(master seed, stream id) through a SeedSequence spawn key, so replication r
always sees the same draws no matter which worker runs it.
"""

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from src.errors import ParameterError

LN2 = math.log(2.0)


@dataclass
class RngStream:
    seed: int
    stream_id: int = 0
    generator: np.random.Generator = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.seed < 0 or self.stream_id < 0:
            raise ParameterError("seed and stream_id must be non-negative")
        seq = np.random.SeedSequence(entropy=self.seed, spawn_key=(self.stream_id,))
        self.generator = np.random.Generator(np.random.Philox(seq))

    def integers(self, high: int, size: int) -> np.ndarray:
        return self.generator.integers(0, high, size=size)

    def choice(self, n: int, size: int) -> np.ndarray:
        """Draws size distinct indices from range(n)."""
        return self.generator.choice(n, size=size, replace=False)


def normal(rng: RngStream, mu: float, sigma: float, n: int) -> np.ndarray:
    """n draws of N(mu, sigma); sigma is a standard deviation."""
    if sigma < 0:
        raise ParameterError(f"normal: sigma must be >= 0, got {sigma}")
    if sigma == 0:
        return np.full(n, float(mu))
    return rng.generator.normal(mu, sigma, size=n)


def chisq(rng: RngStream, df: int, n: int) -> np.ndarray:
    if df < 1:
        raise ParameterError(f"chisq: df must be >= 1, got {df}")
    return rng.generator.chisquare(df, size=n)


def exp_median_zero(rng: RngStream, n: int) -> np.ndarray:
    """Unit-rate exponential shifted by -ln 2: median 0, mean 1 - ln 2, variance 1."""
    return rng.generator.exponential(1.0, size=n) - LN2


def bivariate_correlated(rng: RngStream, sd: float, r: float, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Two N(0, sd) columns with population correlation r."""
    if not -1.0 < r < 1.0:
        raise ParameterError(f"bivariate_correlated: |r| must be < 1, got {r}")
    if sd <= 0:
        raise ParameterError(f"bivariate_correlated: sd must be > 0, got {sd}")
    x = rng.generator.normal(0.0, sd, size=n)
    w = rng.generator.normal(0.0, sd, size=n)
    z = r * x + math.sqrt(1.0 - r * r) * w
    return x, z


def mask_size(n: int, fraction: float) -> int:
    """Nearest integer to fraction*n, ties rounded up."""
    return int(math.floor(fraction * n + 0.5))


def contamination_mask(
    rng: RngStream,
    n: int,
    fraction: float,
    exclude: Optional[np.ndarray] = None,
) -> np.ndarray:
    """
    A uniformly random set of round(fraction*n) row indices, sorted.
    Indices in `exclude` are never chosen, which lets masks of one disjoint
    group be drawn sequentially without overlap.
    """
    if not 0.0 <= fraction < 0.5:
        raise ParameterError(
            f"contamination fraction {fraction} must lie in [0, 0.5): "
            "errors must affect less than half of the sample"
        )
    m = mask_size(n, fraction)
    if m == 0:
        return np.empty(0, dtype=np.int64)
    pool = np.arange(n)
    if exclude is not None and len(exclude):
        pool = np.setdiff1d(pool, exclude, assume_unique=False)
    if m > pool.size:
        raise ParameterError(f"Cannot draw {m} rows from {pool.size} remaining rows")
    picked = rng.generator.choice(pool, size=m, replace=False)
    return np.sort(picked).astype(np.int64)
