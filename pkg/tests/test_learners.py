import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import expit, logit

from dropintmle.learners import (
    FitError,
    cv_fold_ids,
    fit_binary_glm,
    fit_constant,
    fit_discrete_super_learner,
    fit_intercept_fluctuation,
)


def test_intercept_only_closed_form():
    # weighted mean 0.75 -> coefficient logit(0.75) = ln 3; the ridge jitter
    # on the normal equations perturbs the root at the ~1e-8 scale
    X = np.ones((4, 1))
    y = np.array([1.0, 1.0, 1.0, 0.0])
    m = fit_binary_glm(X, y)
    assert m.converged
    assert m.coef[0] == pytest.approx(np.log(3.0), abs=2e-7)


def test_symmetric_data_zero_intercept():
    X = np.ones((2, 1))
    m = fit_binary_glm(X, np.array([0.0, 1.0]))
    assert m.coef[0] == pytest.approx(0.0, abs=1e-8)


def test_weighted_score_zero_at_convergence():
    rng = np.random.default_rng(3)
    X = np.column_stack([np.ones(500), rng.standard_normal(500), rng.standard_normal(500)])
    beta = np.array([-0.3, 0.8, -0.5])
    y = (rng.random(500) < expit(X @ beta)).astype(float)
    w = rng.uniform(0.2, 3.0, 500)
    off = rng.standard_normal(500) * 0.3
    m = fit_binary_glm(X, y, w, off)
    assert m.converged
    mu = m.predict(X, off)
    score = X.T @ (w * (y - mu))
    assert np.max(np.abs(score)) <= 1e-6


def test_separated_data_predictions_bounded():
    x = np.array([-2.0, -1.0, -0.5, 0.5, 1.0, 2.0])
    X = np.column_stack([np.ones(6), x])
    y = (x > 0).astype(float)
    m = fit_binary_glm(X, y)
    p = m.predict(X)
    assert np.all((p > 0) & (p < 1))
    assert (not m.converged) or m.n_iter <= 50


def test_offset_shifts_fit():
    X = np.ones((200, 1))
    rng = np.random.default_rng(4)
    y = (rng.random(200) < 0.3).astype(float)
    off = np.full(200, 1.0)
    m = fit_binary_glm(X, y, offset=off)
    # intercept absorbs the offset: expit(off + coef) = mean(y)
    assert expit(1.0 + m.coef[0]) == pytest.approx(y.mean(), abs=1e-8)


def test_errors():
    with pytest.raises(FitError):
        fit_binary_glm(np.ones((3, 1)), np.array([0.0, 1.0, 1.0]), np.zeros(3))
    with pytest.raises(FitError):
        fit_binary_glm(np.ones((0, 1)), np.array([]))
    with pytest.raises(FitError):
        fit_binary_glm(np.ones((2, 1)), np.array([0.0, 2.0]))


def test_rescaled_feature_predictions_invariant():
    rng = np.random.default_rng(9)
    X = np.column_stack([np.ones(300), rng.standard_normal(300)])
    y = (rng.random(300) < expit(0.4 * X[:, 1])).astype(float)
    m1 = fit_binary_glm(X, y)
    X2 = X.copy()
    X2[:, 1] *= 7.0
    m2 = fit_binary_glm(X2, y)
    assert np.allclose(m1.predict(X), m2.predict(X2), atol=1e-8)
    assert m2.coef[1] == pytest.approx(m1.coef[1] / 7.0, rel=1e-6)


def test_fluctuation_one_point_closed_form():
    eps, ok = fit_intercept_fluctuation(np.array([0.8]), np.array([0.0]), np.array([1.0]))
    assert ok
    assert eps == pytest.approx(logit(0.8), abs=1e-9)


def test_fluctuation_stationary_at_zero():
    rng = np.random.default_rng(5)
    p = rng.uniform(0.2, 0.8, 50)
    # offsets already solve the weighted score: residuals exactly zero
    eps, ok = fit_intercept_fluctuation(p, logit(p), np.ones(50))
    assert ok
    assert eps == pytest.approx(0.0, abs=1e-9)


def test_fluctuation_weight_scale_invariance():
    rng = np.random.default_rng(6)
    y = rng.uniform(0.05, 0.95, 80)
    off = rng.standard_normal(80)
    w = rng.uniform(0.5, 4.0, 80)
    e1, _ = fit_intercept_fluctuation(y, off, w)
    e2, _ = fit_intercept_fluctuation(y, off, 2.0 * w)
    assert e1 == pytest.approx(e2, abs=1e-9)


def test_fluctuation_no_weights_warns():
    with pytest.warns(UserWarning):
        eps, ok = fit_intercept_fluctuation(np.array([0.4]), np.array([0.0]), np.array([0.0]))
    assert eps == 0.0 and ok


def test_fluctuation_matches_intercept_glm_with_offset():
    rng = np.random.default_rng(7)
    y = rng.uniform(0.0, 1.0, 120)
    off = rng.standard_normal(120) * 0.5
    w = rng.uniform(0.2, 2.0, 120)
    eps, _ = fit_intercept_fluctuation(y, off, w)
    m = fit_binary_glm(np.ones((120, 1)), y, w, off)
    assert eps == pytest.approx(m.coef[0], abs=1e-6)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(0.01, 0.99), min_size=2, max_size=30),
       st.integers(0, 10_000))
def test_fluctuation_solves_score(ys, seed):
    rng = np.random.default_rng(seed)
    y = np.array(ys)
    off = rng.standard_normal(y.size)
    w = rng.uniform(0.1, 5.0, y.size)
    eps, ok = fit_intercept_fluctuation(y, off, w)
    if ok:
        assert abs(np.sum(w * (y - expit(off + eps)))) <= 1e-8 * max(1.0, w.sum())


def test_fit_constant_exact():
    m = fit_constant(np.array([0.0, 0.0, 0.0]))
    assert m.constant == 0.0
    assert np.all(m.predict(np.ones((2, 1))) == 0.0)


def test_cv_folds_deterministic_and_balanced():
    f1 = cv_fold_ids(103, 10, 42)
    f2 = cv_fold_ids(103, 10, 42)
    assert np.array_equal(f1, f2)
    assert not np.array_equal(f1, cv_fold_ids(103, 10, 43))
    counts = np.bincount(f1, minlength=10)
    assert counts.max() - counts.min() <= 1


def test_super_learner_singleton():
    rng = np.random.default_rng(8)
    X = np.column_stack([np.ones(100), rng.standard_normal(100)])
    y = (rng.random(100) < 0.4).astype(float)
    sel = fit_discrete_super_learner([("only", X)], y, n_folds=5, seed=0)
    assert sel.name == "only"
    assert sel.cv_risks.keys() == {"only"}


def test_super_learner_argmin_property():
    # intercept-only truth: the selected member attains the minimal CV risk
    rng = np.random.default_rng(10)
    n = 200
    y = (rng.random(n) < 0.3).astype(float)
    cands = [
        ("intercept", np.ones((n, 1))),
        ("noise10", np.column_stack([np.ones(n), rng.standard_normal((n, 10))])),
    ]
    sel = fit_discrete_super_learner(cands, y, n_folds=10, seed=3)
    assert sel.cv_risks[sel.name] == min(sel.cv_risks.values())


def test_super_learner_deterministic_and_tie_break():
    rng = np.random.default_rng(11)
    n = 120
    X = np.column_stack([np.ones(n), rng.standard_normal(n)])
    y = (rng.random(n) < expit(X[:, 1])).astype(float)
    cands = [("a", X), ("b", X.copy())]  # identical designs: tie -> earliest
    s1 = fit_discrete_super_learner(cands, y, n_folds=4, seed=5)
    s2 = fit_discrete_super_learner(cands, y, n_folds=4, seed=5)
    assert s1.name == s2.name == "a"
    assert s1.cv_risks == s2.cv_risks


def test_super_learner_signal_detected():
    # data generated from a main-effects truth: the informative member wins
    rng = np.random.default_rng(12)
    n = 400
    x = rng.standard_normal(n)
    y = (rng.random(n) < expit(1.5 * x)).astype(float)
    cands = [
        ("main", np.column_stack([np.ones(n), x])),
        ("intercept", np.ones((n, 1))),
    ]
    sel = fit_discrete_super_learner(cands, y, n_folds=10, seed=1)
    assert sel.name == "main"


def test_super_learner_rejects_degenerate_inputs():
    with pytest.raises(FitError):
        fit_discrete_super_learner([], np.array([0.0, 1.0]))
    with pytest.raises(FitError):
        fit_discrete_super_learner([("x", np.ones((3, 1)))], np.array([0.0, 1.0, 1.0]),
                                   n_folds=5)
