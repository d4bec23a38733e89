import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from numpy.testing import assert_allclose, assert_array_equal

from oedpm import dpgm, ensemble
from oedpm.data_io import evaluate
from oedpm.dpgm import MixtureEstimate
from oedpm.ensemble import (
    OEDPM,
    EnsembleComponent,
    EnsembleConfig,
    build_component,
    component_log_density,
    component_seed,
    fit_detector,
    prune_components,
    sample_subsample_size,
    score,
    threshold_from,
    vote,
    with_thresholds,
)
from oedpm.errors import ComponentFitError, ConfigError, NumericError, UsageError
from oedpm.projection import ProjectionMatrix
from oedpm.synthetic import make_contaminated_clusters


def _estimate(weights, active):
    w = np.asarray(weights, dtype=float)
    K = len(w)
    return MixtureEstimate(weights=w, means=np.zeros((K, 1)), covariances=np.ones((K, 1)),
                           assignments=np.zeros(3, dtype=int), active_count=active)


def _component(weights, means, variances, threshold=0.0, p=None):
    means = np.atleast_2d(np.asarray(means, dtype=float))
    d = means.shape[1]
    p = d if p is None else p
    w = np.asarray(weights, dtype=float)
    return EnsembleComponent(
        index=0, component_seed=0, projection=ProjectionMatrix.identity(d),
        subsample_indices=np.arange(3), retained=np.arange(len(w)), weights=w, means=means,
        covariances=np.atleast_2d(np.asarray(variances, dtype=float)), raw_weights=w,
        active_count=len(w), train_log_density=np.zeros(3), threshold=threshold)


# -- config -----------------------------------------------------------------

def test_config_defaults():
    c = EnsembleConfig()
    assert (c.ensemble_size, c.contamination, c.threshold_mode, c.covariance_mode,
            c.truncation) == (100, 0.1, "quantile", "diagonal", 30)


@pytest.mark.parametrize("kwargs", [
    dict(ensemble_size=0), dict(contamination=0.0), dict(contamination=1.0),
    dict(contamination=1.5), dict(contamination=None), dict(threshold_mode="mad"),
    dict(covariance_mode="tied"), dict(truncation=0), dict(master_seed=-1),
])
def test_config_validation(kwargs):
    with pytest.raises(ConfigError):
        EnsembleConfig(**kwargs)


def test_config_iqr_needs_no_contamination():
    assert EnsembleConfig(threshold_mode="iqr", contamination=None).contamination is None


# -- seeds and sizes ----------------------------------------------------------

def test_component_seed_is_stable_and_distinct():
    seeds = [component_seed(7, m) for m in range(1000)]
    assert len(set(seeds)) == 1000
    assert seeds[5] == component_seed(7, 5)
    assert component_seed(7, 5) != component_seed(8, 5)
    assert all(0 <= s < 2**64 for s in seeds)


@pytest.mark.parametrize("N, lo, hi", [(30, 30, 30), (148, 50, 148), (5000, 50, 1000),
                                       (1, 1, 1), (50, 50, 50)])
def test_subsample_size_bounds(N, lo, hi):
    rng = np.random.default_rng(0)
    vals = [sample_subsample_size(N, rng) for _ in range(3000)]
    assert min(vals) == lo and max(vals) == hi


def test_subsample_size_rejects_zero():
    with pytest.raises(UsageError):
        sample_subsample_size(0, np.random.default_rng(0))


# -- pruning --------------------------------------------------------------------

def test_prune_keeps_only_heavy():
    kept, w = prune_components(_estimate([0.5, 0.3, 0.2], 3))
    assert_array_equal(kept, [0])
    assert_array_equal(w, [1.0])


def test_prune_boundary_equality_retained():
    kept, w = prune_components(_estimate([0.25] * 4, 4))
    assert_array_equal(kept, [0, 1, 2, 3])
    assert_allclose(w, [0.25] * 4, rtol=0, atol=1e-15)


def test_prune_argmax_fallback():
    kept, w = prune_components(_estimate([0.45, 0.40], 2))
    assert_array_equal(kept, [0])
    assert_array_equal(w, [1.0])


def test_prune_compares_raw_weights():
    # the truncated weights sum to < 1; comparison is against 1/K_hat unnormalised
    kept, w = prune_components(_estimate([0.3, 0.3, 0.1, 0.05], 3))
    assert_array_equal(kept, [0])
    kept, w = prune_components(_estimate([0.34, 0.34, 0.1, 0.05], 3))
    assert_array_equal(kept, [0, 1])
    assert_allclose(w, [0.5, 0.5])


@given(st.lists(st.floats(1e-6, 1.0), min_size=1, max_size=30), st.data())
def test_prune_invariants(raw, data):
    w = np.array(raw) / (sum(raw) * 1.01)
    active = data.draw(st.integers(1, len(w)))
    kept, norm = prune_components(_estimate(w, active))
    assert kept.size >= 1
    assert abs(norm.sum() - 1.0) <= 1e-12
    assert int(np.argmax(w)) in kept
    heavy = set(np.flatnonzero(w >= 1.0 / active))
    assert set(kept) == heavy | {int(np.argmax(w))}


# -- thresholds -----------------------------------------------------------------

def test_threshold_quantile_and_iqr():
    ld = np.arange(1.0, 5.0)
    assert threshold_from(ld, "quantile", 0.25) == 1.75
    q1, q3 = 1.75, 3.25
    assert threshold_from(ld, "iqr") == pytest.approx(q1 - 1.5 * (q3 - q1))


def test_threshold_monotone_in_phi():
    ld = np.random.default_rng(0).normal(size=200)
    phis = [0.01, 0.05, 0.1, 0.2, 0.5, 0.9]
    t = [threshold_from(ld, "quantile", p) for p in phis]
    assert all(a <= b for a, b in zip(t, t[1:]))


def test_threshold_bad_mode():
    with pytest.raises(ConfigError):
        threshold_from(np.ones(3), "zscore")


# -- component density ----------------------------------------------------------

def test_density_singleton_is_gaussian():
    c = _component([1.0], [[0.0]], [[1.0]])
    assert component_log_density(np.array([0.0]), c) == pytest.approx(-0.9189385, abs=1e-7)
    assert component_log_density(np.array([1.3]), c) == pytest.approx(
        -0.5 * math.log(2 * math.pi) - 0.5 * 1.3 ** 2, abs=1e-14)


def test_density_duplicate_components_collapse():
    one = _component([1.0], [[0.5, -1.0]], [[2.0, 0.5]])
    two = _component([0.5, 0.5], [[0.5, -1.0]] * 2, [[2.0, 0.5]] * 2)
    x = np.random.default_rng(0).normal(size=(10, 2))
    assert_allclose(component_log_density(x, two), component_log_density(x, one),
                    rtol=0, atol=1e-12)


def test_density_dimension_mismatch():
    c = _component([1.0], [[0.0, 0.0]], [[1.0, 1.0]])
    with pytest.raises(UsageError):
        component_log_density(np.zeros(3), c)


def test_density_full_covariance_component():
    cov = np.array([[[2.0, 0.3], [0.3, 1.0]]])
    c = _component([1.0], [[0.0, 0.0]], cov)
    x = np.array([0.4, -0.2])
    want = -math.log(2 * math.pi) - 0.5 * np.linalg.slogdet(cov[0])[1] \
        - 0.5 * x @ np.linalg.solve(cov[0], x)
    assert component_log_density(x, c) == pytest.approx(want, abs=1e-12)


# -- voting ---------------------------------------------------------------------

def test_vote_examples():
    ld = np.array([[0.0, 5.0, 0.0],
                   [0.0, 5.0, 0.0],
                   [0.0, 5.0, 5.0],
                   [5.0, 5.0, 5.0]])
    votes, scores, members = vote(ld, np.full(4, 1.0))
    assert_array_equal(votes, [3, 0, 2])
    assert_array_equal(scores, [0.75, 0.0, 0.5])
    assert_array_equal(members, [1, 0, 0])


def test_vote_strict_inequality():
    votes, _, _ = vote(np.array([[1.0], [0.999]]), np.array([1.0, 1.0]))
    assert votes[0] == 1


def test_score_with_handmade_components():
    comps = [_component([1.0], [[0.0]], [[1.0]], threshold=-3.0) for _ in range(4)]
    rep = score(np.array([[0.0], [10.0]]), comps)
    assert_array_equal(rep.votes, [0, 4])
    assert_array_equal(rep.memberships, [0, 1])
    assert rep.ensemble_size == 4


def test_score_column_mismatch():
    comps = [_component([1.0], [[0.0]], [[1.0]])]
    with pytest.raises(UsageError):
        score(np.zeros((2, 3)), comps)
    with pytest.raises(UsageError):
        score(np.zeros((2, 1)), [])


# -- build_component ------------------------------------------------------------

def test_build_small_data_no_reduction():
    X = np.random.default_rng(0).normal(size=(50, 2))
    c = build_component(X, EnsembleConfig(), 0)
    assert c.dim == 2 and c.subsample_indices.size == 50
    assert_array_equal(c.subsample_indices, np.arange(50))


def test_build_deterministic():
    X = np.random.default_rng(1).normal(size=(300, 6))
    cfg = EnsembleConfig(master_seed=5)
    a, b = build_component(X, cfg, 3), build_component(X, cfg, 3)
    assert a.component_seed == b.component_seed
    for f in ("subsample_indices", "retained", "weights", "means", "covariances",
              "train_log_density"):
        assert getattr(a, f).tobytes() == getattr(b, f).tobytes()
    assert a.projection.entries.tobytes() == b.projection.entries.tobytes()
    assert a.threshold == b.threshold


def test_build_threshold_separates_far_points():
    rng = np.random.default_rng(2)
    core = rng.normal(size=(200, 2))
    far = np.array([[20.0, 0.0], [-20.0, 0.0], [0.0, 20.0], [0.0, -20.0], [14.0, 14.0]])
    X = np.vstack([core, far])
    for m in range(5):
        c = build_component(X, EnsembleConfig(contamination=0.1), m)
        ld_far = component_log_density(ensemble.project(far, c.projection), c)
        central = core[np.linalg.norm(core, axis=1) < 1.0]
        ld_central = component_log_density(ensemble.project(central, c.projection), c)
        assert np.all(ld_far < c.threshold)
        assert np.all(ld_central > c.threshold)


def test_build_weights_sum_to_one_and_retention_rule():
    X, _ = _synthetic_small()
    for m in range(10):
        c = build_component(X, EnsembleConfig(), m)
        assert abs(c.weights.sum() - 1.0) <= 1e-12
        raw = c.raw_weights
        ok = raw[c.retained] >= 1.0 / c.active_count
        assert np.all(ok) or (c.retained.size == 1 and c.retained[0] == np.argmax(raw))


def test_build_failure_carries_index(monkeypatch):
    X = np.random.default_rng(0).normal(size=(60, 3))
    real_fit = dpgm.fit

    def flaky(data, hyper, rng, **kw):
        if data.shape[0] == flaky.bad_n:
            raise NumericError("boom")
        return real_fit(data, hyper, rng, **kw)

    cfg = EnsembleConfig(ensemble_size=4)
    flaky.bad_n = build_component(X, cfg, 2).subsample_indices.size
    sizes = [build_component(X, cfg, m).subsample_indices.size for m in range(4)]
    first_bad = sizes.index(flaky.bad_n)
    monkeypatch.setattr(dpgm, "fit", flaky)
    with pytest.raises(ComponentFitError) as info:
        fit_detector(X, cfg)
    assert info.value.index == first_bad
    assert isinstance(info.value.cause, NumericError)


def test_build_full_mode_too_few_rows_is_config_error():
    X = np.random.default_rng(0).normal(size=(3, 40))
    with pytest.raises(ConfigError):
        build_component(X, EnsembleConfig(covariance_mode="full"), 0)


# -- fit_detector / score -----------------------------------------------------

def _synthetic_small(seed=0):
    ds = make_contaminated_clusters(n_inliers=270, n_outliers=30, dim=5, seed=seed)
    return ds.features, ds.labels


def test_fit_detector_m1_equals_build_component():
    X, _ = _synthetic_small()
    cfg = EnsembleConfig(ensemble_size=1, master_seed=3)
    [a] = fit_detector(X, cfg)
    b = build_component(X, cfg, 0)
    assert a.means.tobytes() == b.means.tobytes() and a.threshold == b.threshold


def test_concurrent_equals_sequential():
    X, _ = _synthetic_small(1)
    cfg = EnsembleConfig(ensemble_size=6, master_seed=11)
    seq = score(X, fit_detector(X, cfg, n_jobs=1), cfg)
    par = score(X, fit_detector(X, cfg, n_jobs=2), cfg)
    assert seq.scores.tobytes() == par.scores.tobytes()
    assert seq.thresholds.tobytes() == par.thresholds.tobytes()


def test_component_independent_of_ensemble_size():
    X, _ = _synthetic_small(2)
    small = fit_detector(X, EnsembleConfig(ensemble_size=3, master_seed=4))
    big = fit_detector(X, EnsembleConfig(ensemble_size=8, master_seed=4))
    for a, b in zip(small, big):
        assert a.threshold == b.threshold


def test_scores_are_multiples_of_one_over_m():
    X, y = _synthetic_small(3)
    cfg = EnsembleConfig(ensemble_size=15)
    rep = score(X, fit_detector(X, cfg), cfg)
    om = rep.scores * 15
    assert np.all(np.abs(om - np.round(om)) < 1e-12)
    assert_array_equal(np.round(om).astype(int), rep.votes)
    assert_array_equal(rep.memberships, (rep.scores > 0.5).astype(int))
    assert rep.config == cfg.to_dict()


def test_estimated_fraction_within_three_phi():
    X, y = _synthetic_small(4)
    cfg = EnsembleConfig(ensemble_size=25, contamination=0.1)
    rep = score(X, fit_detector(X, cfg), cfg)
    assert 0 <= rep.memberships.mean() <= 0.3
    assert evaluate(rep, y)["f1"] >= 0.8


def test_with_thresholds_reuses_fit_and_is_monotone():
    X, _ = _synthetic_small(5)
    comps = fit_detector(X, EnsembleConfig(ensemble_size=5))
    lo = with_thresholds(comps, "quantile", 0.05)
    hi = with_thresholds(comps, "quantile", 0.2)
    for a, b, c in zip(comps, lo, hi):
        assert a.means is b.means is c.means
        assert b.threshold <= c.threshold
    again = with_thresholds(comps, "quantile", 0.1)
    assert [c.threshold for c in again] == [c.threshold for c in comps]


def test_estimator_wrapper():
    X, y = _synthetic_small(6)
    det = OEDPM(EnsembleConfig(ensemble_size=5))
    with pytest.raises(UsageError):
        det.score(X)
    rep = det.fit_score(X)
    assert rep.scores.shape == (len(X),)
