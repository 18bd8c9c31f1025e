from itertools import combinations

import numpy as np
import pytest
from sklearn.covariance import MinCovDet

from src import randgen
from src.errors import InsufficientDataError, ParameterError
from src.randgen import RngStream
from src.robust_scatter import (
    POINT_LABELS,
    ScatterEstimate,
    c_step,
    classify_points,
    concentrate,
    consistency_factor,
    detmcd,
    dets,
    h_subset_size,
    scatter_to_regression,
    six_starts,
    subset_estimate,
)


def _gaussian(n, p=2, seed=1):
    rng = RngStream(seed)
    return np.column_stack([randgen.normal(rng, 0.0, 1.0, n) for _ in range(p)])


def _contaminated(n=400, frac=0.2, seed=2):
    m = _gaussian(n, seed=seed)
    rows = randgen.contamination_mask(RngStream(seed, 1), n, frac)
    m[rows] += np.array([12.0, -9.0])
    return m, rows


def _estimate(location, scatter):
    scatter = np.asarray(scatter, dtype=float)
    return ScatterEstimate(
        location=np.asarray(location, dtype=float),
        scatter=scatter,
        raw_scatter=scatter,
        support=np.arange(3),
        determinant=float(np.linalg.det(scatter)),
        log_determinant=float(np.log(np.linalg.det(scatter))),
        h=3,
    )


def test_h_subset_size():
    assert h_subset_size(10, 2) == 6
    assert h_subset_size(2000, 1) == 1001
    assert h_subset_size(100, 2, alpha=1.0) == 100
    assert h_subset_size(100, 2, alpha=0.75) == 75
    with pytest.raises(ParameterError):
        h_subset_size(100, 2, alpha=0.4)


def test_consistency_factor():
    assert consistency_factor(10, 10, 2) == 1.0
    assert consistency_factor(50, 100, 2) == pytest.approx(0.5 / 0.15343, rel=1e-3)


def test_c_step_expels_planted_outlier():
    m = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [-1.0, 0.0], [0.0, -1.0], [50.0, 50.0]])
    full = subset_estimate(m, np.arange(6), h=5)
    step = c_step(m, full)
    assert 5 not in step.support
    assert step.support.size == 5
    assert step.determinant < full.determinant


def test_c_step_fixed_point_is_idempotent():
    m, _ = _contaminated()
    fixed = concentrate(m, six_starts(m)[0])
    again = c_step(m, fixed)
    assert np.array_equal(again.support, fixed.support)
    assert again.determinant == pytest.approx(fixed.determinant, rel=1e-12)


def test_determinant_path_never_increases():
    m, _ = _contaminated(frac=0.3, seed=5)
    for start in six_starts(m):
        path = np.array(concentrate(m, start).history)
        assert np.all(np.diff(path) <= 1e-12 * path[:-1])


def test_six_starts_shape():
    m, _ = _contaminated()
    starts = six_starts(m)
    assert len(starts) == 6
    assert [s.start_index for s in starts] == list(range(6))
    for s in starts:
        assert s.support.size == h_subset_size(400, 2)
        assert np.all(np.linalg.eigvalsh(s.raw_scatter) > 0)


def test_six_starts_flags_collinear_data():
    m = _gaussian(60, p=2, seed=3)
    collinear = np.column_stack([m[:, 0], m[:, 0], m[:, 1]])
    starts = six_starts(collinear)
    assert len(starts) == 6
    assert any(s.degenerate for s in starts)


def test_starts_agree_on_clean_data():
    m = _gaussian(1000, seed=4)
    fixed = [concentrate(m, s) for s in six_starts(m)]
    best = min(fixed, key=lambda e: e.log_determinant)
    for est in fixed:
        overlap = np.intersect1d(est.support, best.support).size / best.h
        assert overlap >= 0.9


def test_detmcd_is_consistent_on_clean_gaussian():
    n = 5000
    est = detmcd(_gaussian(n, seed=6))
    # raw MCD location at alpha = 0.5, p = 2 has efficiency about 0.15
    tol = 3.0 * np.sqrt(1.0 / (0.15 * n))
    assert est.location == pytest.approx([0.0, 0.0], abs=tol)
    assert est.scatter == pytest.approx(np.eye(2), abs=0.1)
    assert est.consistency_applied
    assert est.support.size == est.h


def test_detmcd_matches_exhaustive_search():
    m = np.array([
        [0.0, 0.0], [0.3, 0.1], [-0.2, 0.25], [0.1, -0.3], [-0.25, -0.1], [0.2, 0.35],
        [8.0, 9.0], [-7.0, 6.0], [9.0, -8.0], [-6.0, -9.0],
    ])
    est = detmcd(m, h=6)
    dets_all = {
        subset: np.linalg.det(np.cov(m[list(subset)], rowvar=False))
        for subset in combinations(range(10), 6)
    }
    assert len(dets_all) == 210
    best_subset = min(dets_all, key=dets_all.get)
    assert tuple(est.support) == best_subset
    assert est.determinant == pytest.approx(dets_all[best_subset], rel=1e-8)


def test_detmcd_ignores_contamination_like_sklearn():
    m, rows = _contaminated()
    est = detmcd(m)
    assert np.intersect1d(est.support, rows).size == 0
    ref = MinCovDet(random_state=0).fit(m)
    assert est.location == pytest.approx(ref.raw_location_, abs=0.2)


def test_detmcd_needs_more_rows_than_twice_the_dimension():
    with pytest.raises(InsufficientDataError):
        detmcd(_gaussian(4))


def test_dets_is_consistent_on_clean_gaussian():
    est = dets(_gaussian(5000, seed=7))
    assert est.method == "DetS"
    assert est.scatter == pytest.approx(np.eye(2), abs=0.1)
    # biweight S location at 50% breakdown, p = 2 has efficiency about 0.5
    tol = 3.0 * np.sqrt(1.0 / (0.5 * 5000))
    assert est.location == pytest.approx([0.0, 0.0], abs=tol)


def test_dets_and_detmcd_bounded_under_point_mass():
    m = _gaussian(500, seed=8)
    rows = randgen.contamination_mask(RngStream(8, 1), 500, 0.2)
    m[rows] = 1e6
    assert np.cov(m, rowvar=False).max() > 1e10
    for est in (dets(m), detmcd(m)):
        assert np.abs(est.scatter).max() < 10.0
        assert np.abs(est.location).max() < 1.0


def test_scatter_to_regression():
    fit = scatter_to_regression(_estimate([0.0, 0.0], [[4.0, 4.0], [4.0, 13.0]]))
    assert fit.slope == pytest.approx(1.0)
    assert fit.intercept == pytest.approx(0.0)

    fit = scatter_to_regression(_estimate([1.0, 2.0, 3.0], np.diag([1.0, 2.0, 3.0])))
    assert fit.slopes == pytest.approx([0.0, 0.0])
    assert fit.intercept == pytest.approx(3.0)

    table4 = [[4.0, 1.6, 5.6], [1.6, 4.0, 5.6], [5.6, 5.6, 27.2]]
    assert scatter_to_regression(_estimate([0.0, 0.0, 0.0], table4)).slopes == pytest.approx([1.0, 1.0])


def test_scatter_to_regression_residuals_with_data():
    m, _ = _contaminated()
    est = detmcd(m)
    fit = scatter_to_regression(est, data=m)
    assert fit.residuals.size == m.shape[0]
    assert fit.method == "DetMCD"


def _small_instance(seed):
    rng = RngStream(seed)
    m = np.column_stack([randgen.normal(rng, 0.0, 1.0, 10) for _ in range(2)])
    rows = randgen.contamination_mask(rng, 10, 0.3)
    m[rows] += randgen.normal(rng, 0.0, 6.0, 2)
    return m


def test_detmcd_against_exhaustive_search_on_random_instances():
    exact = 0
    for seed in range(300, 325):
        m = _small_instance(seed)
        est = detmcd(m, h=6)
        best = min(np.linalg.det(np.cov(m[list(s)], rowvar=False)) for s in combinations(range(10), 6))
        assert est.determinant <= 1.01 * best, seed
        exact += bool(est.determinant <= best * (1 + 1e-9))
    assert exact >= 23


@pytest.mark.parametrize("seed", range(100))
def test_c_steps_never_increase_the_determinant(seed):
    rng = RngStream(1000 + seed)
    m = np.column_stack([randgen.normal(rng, 0.0, 1.0, 40) for _ in range(2)])
    rows = randgen.contamination_mask(rng, 40, 0.25)
    m[rows] += randgen.normal(rng, 5.0, 3.0, 2)
    for start in six_starts(m):
        current = start
        for _ in range(20):
            step = c_step(m, current)
            assert step.determinant <= current.determinant * (1 + 1e-12)
            if np.array_equal(step.support, current.support):
                break
            assert step.determinant < current.determinant
            current = step


@pytest.mark.parametrize("p", [2, 3])
def test_subset_estimate_transforms_with_affine_maps(p):
    rng = np.random.default_rng(40 + p)
    m = rng.normal(size=(30, p))
    a = rng.normal(size=(p, p)) + 2.0 * np.eye(p)
    b = rng.normal(size=p)
    support = np.arange(0, 30, 2)
    base = subset_estimate(m, support, h=support.size)
    moved = subset_estimate(m @ a + b, support, h=support.size)
    assert moved.location == pytest.approx(base.location @ a + b, rel=1e-6, abs=1e-12)
    assert moved.raw_scatter == pytest.approx(a.T @ base.raw_scatter @ a, rel=1e-6, abs=1e-12)
    assert moved.log_determinant == pytest.approx(base.log_determinant + 2 * np.log(abs(np.linalg.det(a))), rel=1e-9)


def _three_column_sample(n=200, seed=12):
    rng = RngStream(seed)
    m = np.column_stack([randgen.normal(rng, 0.0, 1.0, n) for _ in range(3)])
    rows = randgen.contamination_mask(rng, n, 0.2)
    m[rows] += np.array([6.0, -4.0, 5.0])
    return m


@pytest.mark.parametrize("estimator", [detmcd, dets])
def test_support_survives_permuting_and_scaling_coordinates(estimator):
    m = _three_column_sample()
    base = estimator(m).support
    assert np.array_equal(estimator(m[:, [2, 0, 1]]).support, base)
    assert np.array_equal(estimator(m * np.array([10.0, 0.01, 3.0])).support, base)


@pytest.mark.parametrize("estimator", [detmcd, dets])
def test_support_follows_a_row_permutation(estimator):
    m = _three_column_sample(seed=13)
    perm = np.random.default_rng(5).permutation(m.shape[0])
    base = estimator(m)
    shuffled = estimator(m[perm])
    assert np.array_equal(np.sort(perm[shuffled.support]), base.support)
    assert shuffled.location == pytest.approx(base.location, rel=1e-7)


def test_detmcd_slope_survives_a_quarter_of_remote_rows():
    rng = RngStream(21)
    n = 2000
    x = randgen.normal(rng, 0.0, 2.0, n)
    m = np.column_stack([x, x + randgen.normal(rng, 0.0, 1.0, n)])
    clean = scatter_to_regression(detmcd(m)).slope

    rows = randgen.contamination_mask(RngStream(21, 1), n, 0.25)
    m[rows] = np.array([1e6, 0.0])
    est = detmcd(m)
    broken = scatter_to_regression(est).slope
    assert 0.5 * clean <= broken <= 1.5 * clean
    assert np.intersect1d(est.support, rows).size == 0


def _planted_taxonomy():
    rng = RngStream(31)
    n = 400
    x = randgen.normal(rng, 0.0, 2.0, n)
    y = x + randgen.normal(rng, 0.0, 1.0, n)
    x[:3] = [0.0, 20.0, 20.0]
    y[:3] = [15.0, 20.0, -20.0]
    m = np.column_stack([x, y])
    return m, classify_points(detmcd(m), m)


def test_classify_points_labels_planted_rows():
    m, taxonomy = _planted_taxonomy()
    assert list(taxonomy.labels[:3]) == ["vertical_outlier", "good_leverage", "bad_leverage"]
    assert taxonomy.distance_cutoff == pytest.approx(np.sqrt(5.023886), rel=1e-5)
    counts = taxonomy.counts()
    assert set(counts) == set(POINT_LABELS)
    assert sum(counts.values()) == m.shape[0]
    assert counts["regular"] >= 0.9 * m.shape[0]
    assert 2 in taxonomy.rows("bad_leverage")


def test_classify_points_argument_checks():
    m, _ = _planted_taxonomy()
    est = detmcd(m)
    with pytest.raises(ParameterError):
        classify_points(est, m[:, :1])
    with pytest.raises(ParameterError):
        classify_points(est, m, level=1.0)
    with pytest.raises(ParameterError):
        classify_points(est, m).rows("outlier")
