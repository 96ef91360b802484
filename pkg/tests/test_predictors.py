import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from amdprog.cohort import Grade4
from amdprog.labeling import LabeledExample, ProgressionLabel
from amdprog.predictors import (
    LogisticModel,
    _design,
    as_distribution,
    lr_fit,
    lr_objective,
    lr_score,
    manual_grade4_score,
    manual_step_score,
    two_phase_mode_score,
)
from oracles import central_difference, logistic_nll


def random_problem(seed, n=60, d=5):
    rng = np.random.default_rng(seed)
    X = rng.dirichlet(np.ones(d), size=n)
    y = (rng.random(n) < 0.2 + 0.6 * X[:, -1]).astype(float)
    y[:2] = (0.0, 1.0)
    return X, y


def max_rel_err(a, b):
    return float(np.max(np.abs(a - b) / np.maximum(1e-8, np.abs(a) + np.abs(b))))


@pytest.mark.parametrize("seed", range(10))
def test_lr_gradient_matches_finite_difference(seed):
    X, y = random_problem(seed)
    rng = np.random.default_rng(100 + seed)
    w = rng.normal(0, 1.5, X.shape[1] + 1)
    l2 = 10 ** rng.uniform(-4, -1)
    value, grad = lr_objective(w, _design(X), y, l2)
    assert value == pytest.approx(logistic_nll(w, X, y, l2), rel=1e-12)
    fd = central_difference(lambda v: logistic_nll(v, X, y, l2), w, 1e-6)
    assert max_rel_err(grad, fd) < 1e-5


def test_lr_fit_reaches_stationary_point():
    X, y = random_problem(3, n=200)
    m = lr_fit(X, y, l2=1e-3, tol=1e-9)
    _, g = lr_objective(m.weights, _design(X), y, 1e-3)
    assert np.max(np.abs(g)) < 1e-9
    assert m.trained and m.n_iters > 0


def test_lr_fit_decreases_objective_from_zero():
    X, y = random_problem(4)
    m = lr_fit(X, y, max_iters=5)
    f0, _ = lr_objective(np.zeros(X.shape[1] + 1), _design(X), y, 1e-4)
    f1, _ = lr_objective(m.weights, _design(X), y, 1e-4)
    assert f1 < f0


def test_lr_bias_is_unregularized():
    # all-positive feature-free problem: only the bias can move, and strong l2 must not hold it back
    X = np.zeros((50, 2))
    y = np.r_[np.ones(40), np.zeros(10)]
    m = lr_fit(X, y, l2=10.0, tol=1e-12)
    assert lr_score(m, np.zeros(2)) == pytest.approx(0.8, abs=1e-8)


def test_lr_errors():
    with pytest.raises(ValueError):
        lr_fit(np.zeros((3, 2)), [1, 1, 1])
    with pytest.raises(ValueError):
        lr_fit(np.zeros((3, 2)), [1, 0])
    with pytest.raises(ValueError):
        lr_score(LogisticModel(np.zeros(3)), [0.5, 0.5])
    m = LogisticModel(np.zeros(3), trained=True)
    with pytest.raises(ValueError):
        lr_score(m, [0.2, 0.3, 0.5])


def test_lr_score_vectorized_and_monotone_in_weighted_feature():
    m = LogisticModel(np.array([0.0, 3.0, -1.0]), trained=True)
    rows = np.array([[1.0, 0.0], [0.5, 0.5], [0.0, 1.0]])
    s = lr_score(m, rows)
    assert s.shape == (3,) and np.all(np.diff(s) > 0)
    assert lr_score(m, rows[1]) == s[1]


def test_model_json_round_trip(tmp_path):
    X, y = random_problem(5)
    m = lr_fit(X, y, feature_labels=[f"p{i}" for i in range(5)])
    m.save(tmp_path / "m.json")
    m2 = LogisticModel.load(tmp_path / "m.json")
    np.testing.assert_array_equal(m.weights, m2.weights)
    assert m2.feature_labels == m.feature_labels and m2.trained


def test_model_rejects_non_finite(tmp_path):
    with pytest.raises(ValueError):
        LogisticModel.from_json('{"weights": [NaN, 1.0], "l2": 0.0, "trained": true}')


def _example(grade4, step):
    return LabeledExample("P", "OD", 0, grade4, step, ProgressionLabel.NOT_PROGRESSED)


def test_manual_scores():
    assert manual_grade4_score(_example(Grade4.NONE, 1)) == 0.0
    assert manual_grade4_score(_example(Grade4.INTERMEDIATE, 7)) == 2.0
    assert manual_step_score(_example(Grade4.EARLY, 4)) == 4.0


def test_manual_score_is_constant_within_iamd_cohort():
    scores = {manual_grade4_score(_example(Grade4.INTERMEDIATE, s)) for s in range(5, 10)}
    assert scores == {2.0}


@given(st.lists(st.floats(0, 1), min_size=2, max_size=12))
def test_mode_is_argmax_lowest_on_ties(raw):
    p = np.asarray(raw) + 1e-3
    p /= p.sum()
    k = int(two_phase_mode_score(p))
    assert p[k] == p.max() and all(p[j] < p[k] for j in range(k))


def test_distribution_validation():
    as_distribution([0.2, 0.8])
    with pytest.raises(ValueError):
        as_distribution([0.5, 0.6])
    with pytest.raises(ValueError):
        as_distribution([-0.1, 1.1])


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10**6))
def test_lr_separates_planted_signal(seed):
    rng = np.random.default_rng(seed)
    X = rng.dirichlet(np.ones(3), size=300)
    y = (X[:, 2] > 0.4).astype(float)
    if y.min() == y.max():
        return
    m = lr_fit(X, y, max_iters=3000)
    s = lr_score(m, X)
    assert s[y == 1].mean() > s[y == 0].mean()


def test_manual_step_examples():
    from amdprog.metrics import auc, roc_curve

    assert manual_step_score(_example(Grade4.INTERMEDIATE, 7)) == 7.0
    cga = type("V", (), {"step": 10})()
    with pytest.raises(ValueError):
        manual_step_score(cga)
    with pytest.raises(ValueError):
        manual_grade4_score(type("V", (), {"grade4": Grade4.NVAMD})())
    steps = list(range(1, 10)) * 3
    labels = [s >= 8 and i % 2 == 0 for i, s in enumerate(steps)]
    assert auc(roc_curve(steps, labels)) > 0.5


def test_mode_examples():
    assert two_phase_mode_score([0.1, 0.7, 0.2]) == 1.0
    assert two_phase_mode_score(np.full(5, 0.2)) == 0.0
    assert two_phase_mode_score(np.eye(12)[8]) == 8.0


@given(st.lists(st.floats(0.01, 1), min_size=2, max_size=12), st.floats(0.1, 100))
def test_mode_invariant_to_positive_rescaling(raw, c):
    p = np.asarray(raw)
    assert two_phase_mode_score(p / p.sum()) == two_phase_mode_score(c * p / (c * p).sum())


def test_lr_separable_toy_reaches_auc_one():
    from amdprog.metrics import auc, roc_curve

    X = np.array([[0.9, 0.1], [0.8, 0.2], [0.7, 0.3], [0.3, 0.7], [0.2, 0.8], [0.1, 0.9]])
    y = np.array([0, 0, 0, 1, 1, 1])
    m = lr_fit(X, y)
    assert auc(roc_curve(lr_score(m, X), y == 1)) == 1.0


def test_lr_permutation_null():
    from amdprog.metrics import auc, roc_curve

    rng = np.random.default_rng(21)
    X = rng.dirichlet(np.ones(5), size=1000)
    y = rng.permutation(np.r_[np.ones(300), np.zeros(700)])
    m = lr_fit(X, y)
    assert abs(auc(roc_curve(lr_score(m, X), y == 1)) - 0.5) <= 0.1


def test_lr_score_examples():
    z = LogisticModel(np.zeros(4), trained=True)
    assert lr_score(z, [0.1, 0.2, 0.7]) == 0.5
    b = LogisticModel(np.r_[np.zeros(3), 20.0], trained=True)
    assert lr_score(b, [0.1, 0.2, 0.7]) > 0.999
    lo = LogisticModel(np.array([0.5, 0.0, 0.0, -1.0]), trained=True)
    hi = LogisticModel(np.array([1.5, 0.0, 0.0, -1.0]), trained=True)
    assert lr_score(hi, [0.3, 0.3, 0.4]) > lr_score(lo, [0.3, 0.3, 0.4])


def test_l2_shrinks_weights_monotonically():
    X, y = random_problem(7, n=300)
    norms = [np.linalg.norm(lr_fit(X, y, l2=l2, tol=1e-9).weights[:-1]) for l2 in (1e-3, 1e-1, 10.0)]
    assert norms[0] > norms[1] > norms[2]


def test_end_to_end_score_examples():
    from amdprog.predictors import end_to_end_score
    from amdprog.vision.net import NetConfig, init_net

    net = init_net(NetConfig(in_size=16, widths=(4, 4)), seed=1)
    rng = np.random.default_rng(0)
    a, b = rng.random((16, 16, 3)), rng.random((16, 16, 3))
    s = end_to_end_score(net, a, b)
    assert 0.0 < s < 1.0
    assert end_to_end_score(net, b, a) == s
    with pytest.raises(ValueError):
        end_to_end_score(net, a, None)
