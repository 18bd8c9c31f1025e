import glob
import json
import logging
import os
from dataclasses import asdict, dataclass, field, fields
from typing import Any, Dict, List, Optional

import numpy as np

from src import config
from src.errors import ParameterError
from src.estimators import BIVARIATE_ONLY, resolve_tags

logger = logging.getLogger(__name__)

BUILTIN_ORDER = ["table2", "table3", "table4", "table5", "table6", "table7", "appendix"]
REGRESSOR_KINDS = ("normal", "chisq")
ERROR_KINDS = ("normal", "exp_median_zero")
HETERO_MULTIPLIERS = ("exp(-x)",)


def _strict(cls, data: Dict[str, Any], where: str) -> Dict[str, Any]:
    """Rejects keys that are not fields of the dataclass."""
    if not isinstance(data, dict):
        raise ParameterError(f"{where}: expected an object, got {type(data).__name__}")
    allowed = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - allowed)
    if unknown:
        raise ParameterError(f"{where}: unknown key(s) {unknown}")
    return data


@dataclass
class RegressorLaw:
    kind: str = "normal"
    mean: float = 0.0
    sd: float = 1.0
    df: Optional[int] = None

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "RegressorLaw":
        law = cls(**_strict(cls, data, "regressor_law"))
        if law.kind not in REGRESSOR_KINDS:
            raise ParameterError(f"regressor_law.kind must be one of {REGRESSOR_KINDS}, got {law.kind!r}")
        if law.kind == "chisq" and (law.df is None or law.df < 1):
            raise ParameterError("chisq regressor needs df >= 1")
        return law

    @property
    def variance(self) -> float:
        return 2.0 * self.df if self.kind == "chisq" else self.sd**2

    @property
    def expectation(self) -> float:
        return float(self.df) if self.kind == "chisq" else self.mean


@dataclass
class ErrorLaw:
    kind: str = "normal"
    mean: float = 0.0
    sd: float = 1.0

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ErrorLaw":
        law = cls(**_strict(cls, data, "law"))
        if law.kind not in ERROR_KINDS:
            raise ParameterError(f"law.kind must be one of {ERROR_KINDS}, got {law.kind!r}")
        if law.sd < 0:
            raise ParameterError("law.sd must be >= 0")
        return law

    @property
    def moments(self) -> tuple[float, float]:
        """(E[u], E[u^2])."""
        if self.kind == "exp_median_zero":
            m = self.sd * (1.0 - np.log(2.0))
            return m, self.sd**2 + m * m
        return self.mean, self.sd**2 + self.mean**2


@dataclass
class Contamination:
    target: int
    fraction: float
    law: ErrorLaw
    disjoint_group: Optional[str] = None

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "Contamination":
        data = dict(_strict(cls, data, "contamination"))
        data["law"] = ErrorLaw.from_dict(data.get("law", {}))
        return cls(**data)


@dataclass
class HeteroRule:
    fraction: float
    multiplier: str = "exp(-x)"

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "HeteroRule":
        rule = cls(**_strict(cls, data, "hetero_rule"))
        if rule.multiplier not in HETERO_MULTIPLIERS:
            raise ParameterError(f"hetero_rule.multiplier must be one of {HETERO_MULTIPLIERS}")
        return rule


@dataclass
class ScenarioConfig:
    name: str
    n: int
    replications: int = config.DEFAULT_REPS
    beta: List[float] = field(default_factory=lambda: [1.0])
    alpha: float = 0.0
    regressor_law: List[RegressorLaw] = field(default_factory=lambda: [RegressorLaw()])
    regressor_correlation: float = 0.0
    noise_sd: float = 1.0
    noise_law: str = "normal"
    contamination: List[Contamination] = field(default_factory=list)
    hetero_rule: Optional[HeteroRule] = None
    estimators: List[str] = field(default_factory=lambda: ["OLS"])
    seed: int = config.DEFAULT_SEED
    n_options: List[int] = field(default_factory=list)
    mm_efficiency: Optional[float] = None
    description: str = ""

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ScenarioConfig":
        data = dict(_strict(cls, data, "scenario"))
        if "regressor_law" in data:
            data["regressor_law"] = [RegressorLaw.from_dict(d) for d in data["regressor_law"]]
        data["contamination"] = [Contamination.from_dict(d) for d in data.get("contamination", [])]
        if data.get("hetero_rule") is not None:
            data["hetero_rule"] = HeteroRule.from_dict(data["hetero_rule"])
        cfg = cls(**data)
        cfg.validate()
        return cfg

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @property
    def p(self) -> int:
        return len(self.beta)

    @property
    def sizes(self) -> List[int]:
        return list(self.n_options) if self.n_options else [self.n]

    def validate(self) -> None:
        if self.replications < 1:
            raise ParameterError("replications must be >= 1")
        if len(self.beta) != len(self.regressor_law):
            raise ParameterError(
                f"beta has {len(self.beta)} entries but regressor_law has {len(self.regressor_law)}"
            )
        for size in self.sizes:
            if size < 3:
                raise ParameterError(f"sample size {size} is too small")
        if self.noise_law not in ERROR_KINDS:
            raise ParameterError(f"noise_law must be one of {ERROR_KINDS}")
        if self.noise_sd < 0:
            raise ParameterError("noise_sd must be >= 0")
        if self.regressor_correlation != 0.0:
            if not -1.0 < self.regressor_correlation < 1.0:
                raise ParameterError("regressor_correlation must lie in (-1, 1)")
            if any(law.kind != "normal" for law in self.regressor_law):
                raise ParameterError("correlated regressors must all be normal")
        totals = np.zeros(self.p)
        for spec in self.contamination:
            if not 0 <= spec.target < self.p:
                raise ParameterError(f"contamination target {spec.target} outside 0..{self.p - 1}")
            totals[spec.target] += spec.fraction
        if np.any(totals >= 0.5):
            raise ParameterError(
                "total contamination per regressor must stay below 0.5 "
                f"(got {totals.tolist()})"
            )
        if self.hetero_rule is not None and not 0.0 <= self.hetero_rule.fraction < 0.5:
            raise ParameterError("hetero_rule.fraction must lie in [0, 0.5)")
        self.estimators = resolve_tags(self.estimators)
        bivariate = [tag for tag in self.estimators if tag in BIVARIATE_ONLY]
        if self.p > 1 and bivariate:
            raise ParameterError(f"{', '.join(bivariate)} support a single regressor only; this design has {self.p}")

    def with_overrides(self, **changes) -> "ScenarioConfig":
        data = self.to_dict()
        data.update({k: v for k, v in changes.items() if v is not None})
        if changes.get("n") is not None:
            data["n_options"] = []
        return ScenarioConfig.from_dict(data)


class ScenarioLoader:
    def __init__(self, scenarios_dir: str = "scenarios"):
        # Resolve absolute path relative to this file
        base_path = os.path.dirname(os.path.abspath(__file__))
        self.scenarios_dir = os.path.join(base_path, scenarios_dir)
        self.scenarios: Dict[str, ScenarioConfig] = {}

    def load_scenarios(self) -> Dict[str, ScenarioConfig]:
        """Loads every *.json scenario in the scenarios directory."""
        logger.debug(f"Scanning for scenarios in: {self.scenarios_dir}")
        self.scenarios = {}
        for file_path in sorted(glob.glob(os.path.join(self.scenarios_dir, "*.json"))):
            cfg = load_scenario_file(file_path)
            self.scenarios[cfg.name] = cfg
            logger.debug(f"Loaded scenario: {cfg.name}")
        return self.scenarios

    def ordered(self) -> List[ScenarioConfig]:
        if not self.scenarios:
            self.load_scenarios()

        def rank(cfg):
            return (BUILTIN_ORDER.index(cfg.name) if cfg.name in BUILTIN_ORDER else len(BUILTIN_ORDER), cfg.name)

        return sorted(self.scenarios.values(), key=rank)


def load_scenario_file(path: str) -> ScenarioConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except json.JSONDecodeError as e:
        raise ParameterError(f"{path}: invalid JSON ({e})") from e
    return ScenarioConfig.from_dict(data)


def builtin_scenarios() -> List[ScenarioConfig]:
    return ScenarioLoader().ordered()


def resolve_scenario(name_or_path: str) -> ScenarioConfig:
    """A builtin by name ('table2', '2', 'appendix') or a scenario JSON file."""
    if name_or_path.endswith(".json") or os.path.sep in name_or_path:
        if not os.path.exists(name_or_path):
            raise ParameterError(f"Scenario file not found: {name_or_path}")
        return load_scenario_file(name_or_path)
    key = name_or_path.strip().lower()
    if key.isdigit():
        key = f"table{key}"
    for cfg in builtin_scenarios():
        if cfg.name == key:
            return cfg
    names = ", ".join(c.name for c in builtin_scenarios())
    raise ParameterError(f"Unknown scenario '{name_or_path}'. Builtins: {names}")
