import os
from dataclasses import dataclass
from typing import Optional

from src.errors import ParameterError

# Defaults. Environment variables (EIV_*) override these, CLI flags override both.
DEFAULT_SEED = 20200301
DEFAULT_REPS = 1000
DEFAULT_BOOT = 1000
DEFAULT_SUBSETS = 500
DEFAULT_MM_EFFICIENCY = 0.85
DEFAULT_LOG_LEVEL = "INFO"

# Failure caps
MAX_REPLICATION_FAILURE_SHARE = 0.02
MAX_BOOTSTRAP_FAILURE_SHARE = 0.05

# C-steps
CSTEP_MAX_ITER = 100
CSTEP_REL_TOL = 1e-12

# Multivariate S iterations
S_MAX_ITER = 200
S_REL_TOL = 1e-10

# Regression S / MM
S_LOCAL_STEPS = 2
S_BEST_CANDIDATES = 5
IRWLS_MAX_ITER = 500
IRWLS_TOL = 1e-10

EIGEN_FLOOR = 1e-12


def _env_int(name: str, default: Optional[int]) -> Optional[int]:
    raw = os.environ.get(name)
    if raw is None or raw.strip() == "":
        return default
    try:
        return int(raw)
    except ValueError:
        raise ParameterError(f"{name} must be an integer, got {raw!r}") from None


@dataclass(frozen=True)
class Settings:
    # None: scenario seed for simulations, DEFAULT_SEED for analyze
    seed: Optional[int] = None
    threads: int = 1
    # None keeps each scenario's own replication count
    reps: Optional[int] = None
    n_boot: int = DEFAULT_BOOT
    n_subsets: int = DEFAULT_SUBSETS
    log_level: str = DEFAULT_LOG_LEVEL

    @classmethod
    def from_env(cls) -> "Settings":
        """
        Builds settings from EIV_* environment variables, falling back to the
        module defaults. Thread count defaults to the available CPUs.
        """
        return cls(
            seed=_env_int("EIV_SEED", None),
            threads=_env_int("EIV_THREADS", os.cpu_count() or 1),
            reps=_env_int("EIV_REPS", None),
            n_boot=_env_int("EIV_BOOT", DEFAULT_BOOT),
            n_subsets=_env_int("EIV_SUBSETS", DEFAULT_SUBSETS),
            log_level=os.environ.get("EIV_LOG_LEVEL", DEFAULT_LOG_LEVEL).upper(),
        )
