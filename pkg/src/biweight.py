"""
Tukey biweight rho/psi/weight functions and their tuning constants.

rho is unnormalized: rho(u) = u^2/2 - u^4/(2c^2) + u^6/(6c^4) for |u| <= c and
c^2/6 beyond, so the 50% breakdown constraint reads b = rho(c)/2.
"""

from functools import lru_cache

import numpy as np
from scipy import integrate, optimize, stats

from src.errors import ParameterError


def rho(u, c: float) -> np.ndarray:
    u = np.asarray(u, dtype=np.float64)
    t = (u / c) ** 2
    inside = u * u / 2.0 * (1.0 - t + t * t / 3.0)
    return np.where(np.abs(u) <= c, inside, c * c / 6.0)


def rho_max(c: float) -> float:
    return c * c / 6.0


def psi(u, c: float) -> np.ndarray:
    u = np.asarray(u, dtype=np.float64)
    t = (u / c) ** 2
    return np.where(np.abs(u) <= c, u * (1.0 - t) ** 2, 0.0)


def psi_prime(u, c: float) -> np.ndarray:
    u = np.asarray(u, dtype=np.float64)
    t = (u / c) ** 2
    return np.where(np.abs(u) <= c, (1.0 - t) * (1.0 - 5.0 * t), 0.0)


def weight(u, c: float) -> np.ndarray:
    """psi(u)/u, with the removable singularity at 0 filled by 1."""
    u = np.asarray(u, dtype=np.float64)
    t = (u / c) ** 2
    return np.where(np.abs(u) <= c, (1.0 - t) ** 2, 0.0)


def expected_rho_chi(c: float, p: int) -> float:
    """E[rho(||Z||)] for Z ~ N(0, I_p), via partial moments of chi-square laws."""
    t = c * c
    f = stats.chi2.cdf
    return float(
        p / 2.0 * f(t, p + 2)
        - p * (p + 2) / (2.0 * t) * f(t, p + 4)
        + p * (p + 2) * (p + 4) / (6.0 * t * t) * f(t, p + 6)
        + t / 6.0 * (1.0 - f(t, p))
    )


@lru_cache(maxsize=None)
def breakdown_constant(p: int, breakdown: float = 0.5) -> float:
    """
    The c for which E[rho(||Z||)] / rho(c) equals the breakdown point under the
    p-variate standard normal law. p = 1 gives the regression constant 1.5476.
    """
    def gap(c):
        return expected_rho_chi(c, p) / rho_max(c) - breakdown

    return float(optimize.brentq(gap, 0.05, 60.0, xtol=1e-12))


def breakdown_b(c: float, p: int) -> float:
    """Right-hand side b of the M-scale equation, Gaussian-consistent for dimension p."""
    return expected_rho_chi(c, p)


def _gaussian_efficiency(c: float) -> float:
    pdf = stats.norm.pdf
    num, _ = integrate.quad(lambda u: psi_prime(u, c) * pdf(u), -c, c)
    den, _ = integrate.quad(lambda u: psi(u, c) ** 2 * pdf(u), -c, c)
    return num * num / den


@lru_cache(maxsize=None)
def efficiency_constant(efficiency: float) -> float:
    """The c giving the requested asymptotic efficiency at the normal law (0.85 -> 3.4437)."""
    if not 0.5 < efficiency < 1.0:
        raise ParameterError(f"efficiency must lie in (0.5, 1), got {efficiency}")
    return float(optimize.brentq(lambda c: _gaussian_efficiency(c) - efficiency, 1.0, 30.0, xtol=1e-10))


def m_scale(values, c: float, b: float | None = None) -> float:
    """
    The sigma solving mean(rho(v_i / sigma)) = b by bracketed root finding.
    b defaults to rho(c)/2 (50% breakdown). Returns 0 when half or more of the
    values are exactly zero.
    """
    r = np.abs(np.asarray(values, dtype=np.float64)).ravel()
    if b is None:
        b = 0.5 * rho_max(c)
    nonzero = r[r > 0]
    if nonzero.size == 0 or nonzero.size / r.size * rho_max(c) <= b:
        return 0.0

    def gap(sigma):
        return float(np.mean(rho(r / sigma, c))) - b

    # every nonzero |v|/lo >= c, so the mean of rho exceeds b
    lo = float(nonzero.min()) / c
    # rho(u) <= u^2/2 bounds the mean of rho at hi by b/2
    hi = float(np.sqrt(np.mean(r * r) / b))
    if hi <= lo:
        hi = 2.0 * lo
        while gap(hi) > 0:
            hi *= 2.0
    return float(optimize.brentq(gap, lo, hi, xtol=lo * 1e-15, rtol=1e-12))
