import json

import pytest

from src.scenarios import ScenarioConfig


def scenario_dict(**overrides):
    data = {
        "name": "clean",
        "n": 400,
        "replications": 20,
        "beta": [1.0],
        "alpha": 0.0,
        "regressor_law": [{"kind": "normal", "mean": 0.0, "sd": 2.0}],
        "noise_sd": 1.0,
        "contamination": [],
        "estimators": ["OLS"],
        "seed": 7,
    }
    data.update(overrides)
    return data


@pytest.fixture
def make_scenario():
    def _make(**overrides):
        return ScenarioConfig.from_dict(scenario_dict(**overrides))

    return _make


@pytest.fixture
def scenario_file(tmp_path):
    def _write(**overrides):
        path = tmp_path / "scenario.json"
        path.write_text(json.dumps(scenario_dict(**overrides)), encoding="utf-8")
        return str(path)

    return _write
