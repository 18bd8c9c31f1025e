import numpy as np
import pytest

from src import randgen
from src.errors import ParameterError
from src.estimators import ESTIMATOR_TAGS, FitOptions, fit_estimator, resolve_tag, resolve_tags
from src.randgen import RngStream


def test_resolve_tags_case_insensitive():
    assert resolve_tag("detmcd") == "DetMCD"
    assert resolve_tags(["ols", " MM ", "dets"]) == ["OLS", "MM", "DetS"]
    with pytest.raises(ParameterError):
        resolve_tag("LASSO")


def test_every_tag_fits_clean_skewed_data():
    rng = RngStream(1)
    x = randgen.chisq(rng, 4, 600)
    y = 2.0 + x + randgen.normal(rng, 0.0, 1.0, 600)
    options = FitOptions(n_subsets=100, rng=RngStream(1, 1))
    for tag in ESTIMATOR_TAGS:
        fit = fit_estimator(tag, x, y, options)
        assert fit.method == tag
        assert fit.slope == pytest.approx(1.0, abs=0.25), tag


def test_bivariate_only_tags_reject_two_regressors():
    x = np.random.default_rng(0).normal(size=(50, 2))
    y = x.sum(axis=1)
    for tag in ("OR", "GEOM", "IV", "RANK", "GROUP"):
        with pytest.raises(ParameterError):
            fit_estimator(tag, x, y)
    assert fit_estimator("OLS", x, y).slopes == pytest.approx([1.0, 1.0])


def test_mm_efficiency_option_runs_the_mm_step():
    rng = RngStream(2)
    x = randgen.normal(rng, 0.0, 2.0, 300)
    y = x + randgen.normal(rng, 0.0, 1.0, 300)
    raw = fit_estimator("MM", x, y, FitOptions(n_subsets=50, rng=RngStream(2, 1)))
    tuned = fit_estimator("MM", x, y, FitOptions(n_subsets=50, mm_efficiency=0.85, rng=RngStream(2, 1)))
    assert raw.method == tuned.method == "MM"
    assert not np.array_equal(raw.coefficients, tuned.coefficients)
    assert tuned.slope == pytest.approx(1.0, abs=0.1)
