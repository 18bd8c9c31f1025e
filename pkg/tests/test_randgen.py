import math

import numpy as np
import pytest

from src import randgen
from src.errors import ParameterError
from src.randgen import RngStream


def test_same_stream_same_draws():
    a = randgen.normal(RngStream(42, 3), 0.0, 1.0, 50)
    b = randgen.normal(RngStream(42, 3), 0.0, 1.0, 50)
    assert np.array_equal(a, b)
    c = randgen.normal(RngStream(42, 4), 0.0, 1.0, 50)
    assert not np.array_equal(a, c)


def test_distinct_streams_look_independent():
    a = randgen.normal(RngStream(1, 0), 0.0, 1.0, 20000)
    b = randgen.normal(RngStream(1, 1), 0.0, 1.0, 20000)
    assert abs(np.corrcoef(a, b)[0, 1]) < 0.03


def test_normal_moments_and_degenerate_sigma():
    assert np.all(randgen.normal(RngStream(1), 3.5, 0.0, 4) == 3.5)
    draws = randgen.normal(RngStream(2), 10.0, 4.0, 100000)
    assert draws.mean() == pytest.approx(10.0, abs=0.05)
    assert draws.std(ddof=1) == pytest.approx(4.0, abs=0.05)


def test_chisq_moments_and_support():
    draws = randgen.chisq(RngStream(3), 4, 200000)
    assert draws.mean() == pytest.approx(4.0, abs=0.03)
    assert draws.var(ddof=1) == pytest.approx(8.0, abs=0.15)
    assert np.all(randgen.chisq(RngStream(3), 1, 1000) >= 0)
    with pytest.raises(ParameterError):
        randgen.chisq(RngStream(3), 0, 10)


def test_exp_median_zero():
    draws = randgen.exp_median_zero(RngStream(4), 200000)
    assert np.median(draws) == pytest.approx(0.0, abs=0.01)
    assert draws.mean() == pytest.approx(1.0 - math.log(2.0), abs=0.01)
    assert draws.min() >= -math.log(2.0)


@pytest.mark.parametrize("r", [0.0, 0.4])
def test_bivariate_correlated(r):
    x, z = randgen.bivariate_correlated(RngStream(5), 2.0, r, 100000)
    assert np.corrcoef(x, z)[0, 1] == pytest.approx(r, abs=0.01)
    assert x.std(ddof=1) == pytest.approx(2.0, abs=0.02)
    assert z.std(ddof=1) == pytest.approx(2.0, abs=0.02)


def test_bivariate_near_collinear():
    x, z = randgen.bivariate_correlated(RngStream(6), 1.0, 0.99, 100000)
    assert np.corrcoef(x, z)[0, 1] >= 0.985


def test_contamination_mask_sizes():
    rng = RngStream(7)
    assert randgen.contamination_mask(rng, 100, 0.0).size == 0
    mask = randgen.contamination_mask(rng, 2000, 0.25)
    assert mask.size == 500
    assert np.unique(mask).size == 500
    assert np.all(np.diff(mask) > 0)


def test_disjoint_masks():
    rng = RngStream(8)
    first = randgen.contamination_mask(rng, 1000, 0.125)
    second = randgen.contamination_mask(rng, 1000, 0.125, exclude=first)
    assert first.size == second.size == 125
    assert np.intersect1d(first, second).size == 0


@pytest.mark.parametrize("fraction", [-0.1, 0.5, 0.7])
def test_contamination_mask_rejects_majority(fraction):
    with pytest.raises(ParameterError):
        randgen.contamination_mask(RngStream(9), 100, fraction)


def test_mask_size_rounds_half_up():
    assert randgen.mask_size(10, 0.25) == 3
    assert randgen.mask_size(200, 0.125) == 25
