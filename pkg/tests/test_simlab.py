import json

import numpy as np
import pytest

from src.classical import ols_fit
from src.errors import NumericalFailure, ParameterError, ReplicationFailureError
from src.scenarios import resolve_scenario
from src.simlab import (
    TABLE_COLUMNS,
    MetricsRow,
    check_disjoint,
    emit_sample,
    emit_table,
    generate_sample,
    generate_sample_with_masks,
    population_diagnostics,
    rows_from_json,
    run_scenario,
    run_scenario_result,
    sample_frame,
    summarize_estimates,
)


def test_clean_sample_recovers_the_line(make_scenario):
    cfg = make_scenario(n=20000)
    x, y = generate_sample(cfg, rep=0)
    fit = ols_fit(x, y)
    assert fit.intercept == pytest.approx(0.0, abs=0.03)
    assert fit.slope == pytest.approx(1.0, abs=0.02)


def test_samples_are_reproducible_per_replication(make_scenario):
    cfg = make_scenario()
    a = generate_sample(cfg, rep=3)
    b = generate_sample(cfg, rep=3)
    c = generate_sample(cfg, rep=4)
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])
    assert not np.array_equal(a[0], c[0])


def test_contamination_touches_exactly_the_masked_rows():
    cfg = resolve_scenario("table2")
    sample = generate_sample_with_masks(cfg, rep=0, n=2000)
    mask = sample.masks[0]
    assert mask.size == 500
    changed = np.flatnonzero(sample.x[:, 0] != sample.x_true[:, 0])
    assert np.array_equal(changed, mask)


def test_disjoint_masks_in_the_two_regressor_design():
    cfg = resolve_scenario("table5")
    sample = generate_sample_with_masks(cfg, rep=0)
    mx, mz = sample.masks
    assert mx.size == mz.size == 125
    assert np.intersect1d(mx, mz).size == 0
    check_disjoint(cfg, sample)


def test_hetero_rule_mask():
    cfg = resolve_scenario("appendix")
    sample = generate_sample_with_masks(cfg, rep=0)
    assert sample.hetero_mask.size == 500
    assert sample.masks == []


def test_metrics_identities():
    rng = np.random.default_rng(5)
    est = rng.normal(0.8, 0.1, size=250)
    row = summarize_estimates(est, 1.0, "OLS", "x", seed=1, n=100)
    r = row.replications
    assert row.bias == pytest.approx(est.mean() - 1.0)
    assert row.rmse**2 == pytest.approx(row.bias**2 + row.sd_estimate**2 * (r - 1) / r, rel=1e-9)
    assert row.rmse >= abs(row.bias)
    assert row.ci_low <= row.mean_estimate <= row.ci_high
    assert row.mc_se == pytest.approx(row.sd_estimate / np.sqrt(r))


def test_empty_estimate_vector_fails():
    with pytest.raises(ReplicationFailureError):
        summarize_estimates([], 1.0, "OLS", "x", seed=1)


def test_run_scenario_rows(make_scenario):
    cfg = make_scenario(estimators=["OLS", "DetMCD"], replications=12, n=300)
    result = run_scenario_result(cfg, threads=1)
    rows = result.rows
    assert [(r.estimator, r.coefficient) for r in rows] == [("OLS", "x"), ("DetMCD", "x")]
    for row in rows:
        assert row.replications == 12
        assert row.failures == 0
        assert row.ci_low <= row.ci_high
        assert abs(row.bias) < 0.1
    assert rows[0].mean_se is not None and rows[0].mean_se_hc3 is not None
    assert rows[1].mean_se is None
    assert result.metadata["mean_ols_r_squared"]["300"] == pytest.approx(0.8, abs=0.05)


def test_worker_count_does_not_change_results(make_scenario):
    cfg = make_scenario(estimators=["OLS", "DetMCD"], replications=8, n=200)
    serial = run_scenario(cfg, threads=1)
    parallel = run_scenario(cfg, threads=8)
    assert serial == parallel


def test_table_rows_follow_n_then_estimator_order():
    cfg = resolve_scenario("table2").with_overrides(replications=3)
    rows = run_scenario(cfg, threads=1, n_subsets=20)
    assert [(r.n, r.estimator) for r in rows] == [
        (200, "OLS"), (200, "MM"), (200, "DetMCD"), (200, "DetS"),
        (2000, "OLS"), (2000, "MM"), (2000, "DetMCD"), (2000, "DetS"),
    ]


def test_failures_under_the_cap_are_counted(make_scenario, monkeypatch):
    import src.simlab as simlab

    real = simlab.fit_estimator
    calls = {"n": 0}

    def flaky(tag, x, y, options=None):
        calls["n"] += 1
        if calls["n"] == 1:
            raise NumericalFailure("planted")
        return real(tag, x, y, options)

    monkeypatch.setattr(simlab, "fit_estimator", flaky)
    rows = run_scenario(make_scenario(replications=60, n=100), threads=1)
    assert rows[0].failures == 1
    assert rows[0].replications == 59


def test_failures_over_the_cap_abort_with_diagnostics(make_scenario, monkeypatch):
    import src.simlab as simlab

    def broken(tag, x, y, options=None):
        raise NumericalFailure("planted")

    monkeypatch.setattr(simlab, "fit_estimator", broken)
    with pytest.raises(ReplicationFailureError) as info:
        run_scenario(make_scenario(replications=10, n=100), threads=1)
    assert "OLS" in info.value.diagnostics
    assert len(info.value.diagnostics["OLS"]) == 10


def test_emit_table_csv_and_json(make_scenario):
    rows = run_scenario(make_scenario(replications=5, n=100), threads=1)
    csv = emit_table(rows, "csv")
    lines = csv.strip().split("\n")
    assert lines[0].split(",") == TABLE_COLUMNS
    assert len(lines) == 2
    doc = json.loads(emit_table(rows, "json", metadata={"scenario": "clean"}))
    assert doc["metadata"]["scenario"] == "clean"
    assert rows_from_json(emit_table(rows, "json")) == rows
    with pytest.raises(ParameterError):
        emit_table(rows, "xlsx")
    with pytest.raises(ParameterError):
        emit_table([], "csv")


def test_rows_with_missing_values_survive_json():
    row = MetricsRow(
        estimator="IV", coefficient="x", bias=0.01, rmse=0.2, ci_low=0.6, ci_high=1.4,
        mean_estimate=1.01, sd_estimate=0.2, replications=1, seed=3, n=100,
        mc_se=float("nan"), mean_se=None, mean_se_hc3=float("nan"),
    )
    doc = json.loads(emit_table([row], "json"))
    assert doc["rows"][0]["mc_se"] is None
    back = rows_from_json(emit_table([row], "json"))
    assert back == [row]
    assert np.isnan(back[0].mc_se)
    assert back[0] != MetricsRow(**{**back[0].__dict__, "bias": 0.02})


def test_sample_frame_labels_the_mismeasured_rows():
    cfg = resolve_scenario("table2")
    frame = sample_frame(cfg, rep=2, n=400)
    assert list(frame.columns) == [
        "row", "x_true", "x", "y", "contaminated", "distance", "std_residual", "label",
    ]
    assert len(frame) == 400
    assert frame["contaminated"].sum() == 100
    sample = generate_sample_with_masks(cfg, rep=2, n=400)
    assert np.array_equal(frame["x"].to_numpy(), sample.x[:, 0])
    assert np.array_equal(np.flatnonzero(frame["contaminated"].to_numpy()), sample.masks[0])

    dirty = frame[frame["contaminated"]]
    clean = frame[~frame["contaminated"]]
    assert (dirty["label"] == "bad_leverage").mean() > 0.7
    assert (clean["label"] == "regular").mean() > 0.85


def test_sample_frame_export_formats():
    cfg = resolve_scenario("appendix")
    frame = sample_frame(cfg, rep=0, n=300)
    assert "hetero" in frame.columns
    assert frame["hetero"].sum() == 75
    lines = emit_sample(frame, "csv").strip().split("\n")
    assert lines[0].split(",") == list(frame.columns)
    assert len(lines) == 301
    doc = json.loads(emit_sample(frame, "json", metadata={"rep": 0}))
    assert doc["metadata"] == {"rep": 0}
    assert len(doc["rows"]) == 300
    assert isinstance(doc["rows"][0]["contaminated"], bool)
    with pytest.raises(ParameterError):
        emit_sample(frame, "xlsx")
    with pytest.raises(ParameterError):
        sample_frame(cfg, rep=-1)


def test_population_limits():
    t2 = population_diagnostics(resolve_scenario("table2"))
    assert t2["ols_limit"][0] == pytest.approx(4 / 26.75, rel=1e-9)

    t4 = population_diagnostics(resolve_scenario("table4"))
    assert t4["ols_limit"][0] == pytest.approx(0.4565, abs=1e-4)
    assert t4["ols_limit"][1] == pytest.approx(1.2174, abs=1e-4)
    assert t4["clean_r_squared"] == pytest.approx(11.2 / 27.2)

    t6 = population_diagnostics(resolve_scenario("table6"))
    assert t6["ols_limit"][0] == pytest.approx(4 / 6.25)

    t7 = population_diagnostics(resolve_scenario("table7"))
    assert t7["ols_limit"][0] == pytest.approx(8 / 12)

    app = population_diagnostics(resolve_scenario("appendix"))
    assert app["ols_limit"][0] == pytest.approx(1 - 0.25 * (1 - np.log(2)) * np.exp(2), rel=1e-9)


def _run(name, **overrides):
    cfg = resolve_scenario(name).with_overrides(replications=200, **overrides)
    return {(r.estimator, r.coefficient): r for r in run_scenario(cfg, threads=2)}


@pytest.mark.slow
def test_table2_robust_estimators_are_nearly_unbiased():
    rows = _run("table2", n=2000)
    assert rows["OLS", "x"].mean_estimate == pytest.approx(0.1495, abs=0.02)
    for tag in ("DetMCD", "DetS", "MM"):
        assert -0.06 <= rows[tag, "x"].bias <= 0.04, tag
        assert rows[tag, "x"].ci_low <= 1.0 <= rows[tag, "x"].ci_high, tag


@pytest.mark.slow
def test_table3_low_fit_breaks_the_s_estimate_first():
    rows = _run("table3", n=2000)
    assert -0.12 <= rows["DetMCD", "x"].bias <= 0.04
    assert -0.14 <= rows["DetS", "x"].bias <= 0.0
    assert rows["MM", "x"].bias <= rows["DetMCD", "x"].bias - 0.3


@pytest.mark.slow
def test_table4_two_regressors():
    rows = _run("table4", estimators=["OLS", "DetMCD"])
    limit = population_diagnostics(resolve_scenario("table4"))["ols_limit"][0]
    assert rows["OLS", "x"].bias == pytest.approx(-0.54, abs=0.04)
    assert rows["OLS", "x"].bias == pytest.approx(limit - 1.0, abs=3 * rows["OLS", "x"].mc_se + 0.01)
    assert -0.25 <= rows["DetMCD", "x"].bias <= 0.0
    for coef in ("x", "z"):
        assert rows["DetMCD", coef].ci_low <= 1.0 <= rows["DetMCD", coef].ci_high


@pytest.mark.slow
def test_table5_disjoint_errors_on_both_regressors():
    cfg = resolve_scenario("table5").with_overrides(replications=200)
    for rep in range(cfg.replications):
        check_disjoint(cfg, generate_sample_with_masks(cfg, rep))
    rows = {(r.estimator, r.coefficient): r for r in run_scenario(cfg, threads=2)}
    for coef in ("x", "z"):
        assert abs(rows["DetMCD", coef].bias) <= 0.10
        assert abs(rows["DetS", coef].bias) <= 0.12


@pytest.mark.slow
def test_table6_classical_fixes_overshoot():
    rows = _run("table6")
    assert rows["OLS", "x"].mean_estimate == pytest.approx(0.64, abs=0.02)
    assert rows["OR", "x"].bias == pytest.approx(1.15, abs=0.08)
    assert rows["GEOM", "x"].bias == pytest.approx(np.sqrt(13) / 2.5 - 1, abs=0.04)
    assert -0.20 <= rows["DetMCD", "x"].bias <= 0.0


@pytest.mark.slow
def test_table7_instrument_against_detmcd():
    rows = _run("table7")
    assert rows["OLS", "x"].mean_estimate == pytest.approx(8 / 12, abs=0.02)
    # u is symmetric and independent of x, so cov((w - mean w)^2, u) = 0 and IV stays consistent
    iv = rows["IV", "x"]
    assert abs(iv.bias) <= 3 * iv.mc_se + 0.02
    assert abs(iv.bias) < abs(rows["OLS", "x"].bias)
    assert -0.20 <= rows["DetMCD", "x"].bias <= 0.0


@pytest.mark.slow
def test_appendix_mm_with_efficiency_step():
    rows = _run("appendix")
    assert rows["OLS", "x"].mean_estimate == pytest.approx(0.45, abs=0.05)
    assert rows["MM", "x"].mean_estimate == pytest.approx(1.0, abs=0.02)
    assert np.isfinite(rows["OLS", "x"].mean_se_hc3)
