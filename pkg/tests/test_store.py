import pytest

from src.simlab import run_scenario
from src.store import ResultsStore


@pytest.fixture
def store(tmp_path):
    s = ResultsStore(str(tmp_path / "results.db"))
    yield s
    s.close()


def test_summarize_matches_the_run(store, make_scenario):
    cfg = make_scenario(estimators=["OLS", "DetMCD"], replications=10, n=150)
    rows = run_scenario(cfg, threads=1, store=store)
    stored = store.summarize(cfg.name, beta=cfg.beta, estimator_order=cfg.estimators)
    assert len(stored) == len(rows)
    for a, b in zip(rows, stored):
        assert (a.estimator, a.coefficient, a.n, a.seed) == (b.estimator, b.coefficient, b.n, b.seed)
        assert b.bias == pytest.approx(a.bias, rel=1e-12)
        assert b.rmse == pytest.approx(a.rmse, rel=1e-12)
        assert b.ci_low == pytest.approx(a.ci_low, rel=1e-12)
        assert b.replications == a.replications
    assert stored[0].mean_se == pytest.approx(rows[0].mean_se)


def test_rerun_replaces_rows(store, make_scenario):
    cfg = make_scenario(replications=4, n=100)
    run_scenario(cfg, threads=1, store=store)
    run_scenario(cfg, threads=1, store=store)
    frame = store.get_estimates(cfg.name)
    assert len(frame) == 4
    assert store.scenarios() == ["clean"]


def test_two_regressor_rows(store, make_scenario):
    cfg = make_scenario(
        beta=[1.0, 1.0],
        regressor_law=[{"kind": "normal", "sd": 2.0}, {"kind": "normal", "sd": 2.0}],
        replications=3,
        n=100,
    )
    run_scenario(cfg, threads=1, store=store)
    stored = store.summarize(cfg.name)
    assert [r.coefficient for r in stored] == ["x", "z"]


def test_empty_store(store):
    assert store.summarize("missing") == []
    store.drop_tables()
    assert store.scenarios() == []
