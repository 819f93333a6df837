import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.base import clone

from conftest import make_dataset

from semisurv.boosting import BoostConfig, train_ensemble
from semisurv.exceptions import FoldTooSmall, InputError, NoUsefulWeakLearner, SingleClassInput
from semisurv.self_training import (
    DEFAULT_GRID,
    SelfTrainConfig,
    SelfTrainingBoostClassifier,
    majority_threshold,
    normalize_mode,
    select_confidence_threshold,
    self_train_loop,
    train_model,
)
from semisurv.synthetic import make_classification
from semisurv.tree import TreeConfig

ADA = BoostConfig(algorithm="adaboost", rounds_cap=15)
STUMP = TreeConfig(max_depth=1)


def _split_pool(seed, n=90, n_lab=40, noise=0.1):
    X, y, _ = make_classification(n, 4, 2, label_noise=noise, seed=seed)
    return X[:n_lab], y[:n_lab], X[n_lab:], [4] * 6


def test_default_grid():
    assert DEFAULT_GRID == (0.5, 0.55, 0.6, 0.65, 0.7, 0.75, 0.8, 0.85, 0.9, 0.95)


@pytest.mark.parametrize("kwargs", [
    {"threshold_grid": ()}, {"threshold_grid": (0.6, 0.5)}, {"threshold_grid": (0.5, 1.0)},
    {"cv_folds": 1}, {"iteration_cap": -1},
])
def test_config_validation(kwargs):
    with pytest.raises(InputError):
        SelfTrainConfig(**kwargs)


def test_majority_vote_ties_go_to_larger_threshold():
    assert majority_threshold([0.5, 0.7, 0.5, 0.7, 0.6]) == 0.7
    assert majority_threshold([0.5, 0.5, 0.9]) == 0.5


def test_mode_names():
    assert normalize_mode("semi-supervised") == "semi_supervised"
    assert normalize_mode("Supervised") == "supervised"
    with pytest.raises(InputError):
        normalize_mode("transductive")


def test_single_element_grid_is_returned():
    X_lab, y_lab, X_unl, levels = _split_pool(0)
    theta, records = select_confidence_threshold(
        X_lab, y_lab, X_unl, levels, SelfTrainConfig((0.7,), cv_folds=3), ADA, STUMP)
    assert theta == 0.7 and records == [0.7] * 3


def test_selected_thresholds_belong_to_grid():
    X_lab, y_lab, X_unl, levels = _split_pool(1)
    cfg = SelfTrainConfig((0.3, 0.6, 0.9), cv_folds=3, seed=4)
    theta, records = select_confidence_threshold(X_lab, y_lab, X_unl, levels, cfg, ADA, STUMP)
    assert theta in cfg.threshold_grid
    assert len(records) == 3 and set(records) <= set(cfg.threshold_grid)
    assert theta == majority_threshold(records)


def test_fold_too_small():
    X_lab, y_lab, X_unl, levels = _split_pool(2, n_lab=12)
    y_lab = np.array([1] * 10 + [-1] * 2)
    with pytest.raises(FoldTooSmall):
        select_confidence_threshold(X_lab, y_lab, X_unl, levels, SelfTrainConfig(cv_folds=5))


def test_single_class_labeled_pool():
    X_lab, _, X_unl, levels = _split_pool(3)
    with pytest.raises(SingleClassInput):
        self_train_loop(X_lab, np.ones(len(X_lab)), X_unl, 0.5, levels)


def _simulate(X_lab, y_lab, X_unl, theta, levels, boost, tree):
    """Re-run the absorption loop from scratch with direct ensemble training."""
    X_tr, y_tr = X_lab.copy(), y_lab.copy()
    remaining = list(range(len(X_unl)))
    counts = []
    while True:
        model = train_ensemble(X_tr, y_tr, levels, boost, tree, 0)
        if not remaining:
            counts.append(0)
            return model, counts
        s = model.score(X_unl[remaining])
        take = [i for i, v in zip(remaining, s) if abs(v) >= theta]
        counts.append(len(take))
        if not take:
            return model, counts
        labels = np.where(model.score(X_unl[take]) >= 0, 1, -1)
        X_tr = np.vstack([X_tr, X_unl[take]])
        y_tr = np.concatenate([y_tr, labels])
        remaining = [i for i in remaining if i not in take]


def test_separated_clusters_absorb_everything():
    rng = np.random.default_rng(0)
    X = rng.integers(0, 3, (80, 3))
    X[:, 0] = np.repeat([0, 1], 40)
    y = np.where(X[:, 0] == 0, 1, -1)
    lab = np.r_[0:10, 40:50]
    unl = np.setdiff1d(np.arange(80), lab)
    model, trace = self_train_loop(X[lab], y[lab], X[unl], 0.5, [2, 3, 3], ADA, STUMP)
    assert trace.n_absorbed == len(unl)
    assert len(trace.iterations) <= len(unl) + 1
    ref_model, counts = _simulate(X[lab], y[lab], X[unl], 0.5, [2, 3, 3], ADA, STUMP)
    assert [it["absorbed"] for it in trace.iterations] == counts
    assert json.dumps(model.to_dict()) == json.dumps(ref_model.to_dict())
    np.testing.assert_array_equal(model.predict(X[unl]), y[unl])


@pytest.mark.parametrize("seed", range(4))
def test_trace_matches_simulation_on_noisy_pool(seed):
    X_lab, y_lab, X_unl, levels = _split_pool(10 + seed, noise=0.2)
    model, trace = self_train_loop(X_lab, y_lab, X_unl, 0.6, levels, ADA, STUMP)
    ref_model, counts = _simulate(X_lab, y_lab, X_unl, 0.6, levels, ADA, STUMP)
    assert [it["absorbed"] for it in trace.iterations] == counts
    # rows are appended in a different order, so sums may differ in the last bit
    np.testing.assert_allclose(model.score(X_unl), ref_model.score(X_unl), rtol=0, atol=1e-12)


def test_empty_pool_equals_supervised():
    X, y, _ = make_classification(60, 4, 2, label_noise=0.1, seed=5)
    ds = make_dataset(X, y)
    sup, _ = train_model(ds, "supervised", seed=3)
    semi, trace = train_model(ds, "semi_supervised", st_cfg=SelfTrainConfig(cv_folds=3), seed=3)
    assert json.dumps(sup.to_dict()) == json.dumps(semi.to_dict())
    assert trace.n_absorbed == 0


def test_unattainable_threshold_equals_supervised():
    for seed in range(20):
        X_lab, y_lab, X_unl, levels = _split_pool(seed, noise=0.25)
        sup = train_ensemble(X_lab, y_lab, levels, ADA, STUMP, 0)
        top = float(np.abs(sup.score(X_unl)).max())
        if top < 0.99:
            break
    else:
        pytest.fail("no instance with bounded confidence")
    theta = (top + 1) / 2
    model, trace = self_train_loop(X_lab, y_lab, X_unl, theta, levels, ADA, STUMP,
                                   SelfTrainConfig(seed=0))
    assert trace.n_absorbed == 0 and len(trace.iterations) == 1
    assert json.dumps(model.to_dict()) == json.dumps(sup.to_dict())


def test_supervised_mode_ignores_unlabeled_pool():
    X, y, _ = make_classification(80, 4, 2, seed=6)
    labels = y.copy()
    labels[50:] = 0
    with_pool, _ = train_model(make_dataset(X, labels), "supervised", seed=1)
    without, _ = train_model(make_dataset(X[:50], labels[:50]), "supervised", seed=1)
    assert with_pool.to_dict()["learners"] == without.to_dict()["learners"]


def test_semi_supervised_is_deterministic():
    X, y, _ = make_classification(70, 4, 2, label_noise=0.1, seed=7)
    labels = y.copy()
    labels[40:] = 0
    ds = make_dataset(X, labels)
    cfg = SelfTrainConfig((0.5, 0.8), cv_folds=3)
    a, ta = train_model(ds, "semi", ADA, STUMP, cfg, seed=2)
    b, tb = train_model(ds, "semi", ADA, STUMP, cfg, seed=2)
    assert json.dumps(a.to_dict()) == json.dumps(b.to_dict())
    assert ta.to_dict() == tb.to_dict()


def test_iteration_cap_limits_rounds():
    X_lab, y_lab, X_unl, levels = _split_pool(8)
    _, trace = self_train_loop(X_lab, y_lab, X_unl, 0.0, levels, ADA, STUMP,
                               SelfTrainConfig(iteration_cap=0))
    assert trace.n_absorbed == 0


def _fail_above(limit, monkeypatch):
    import semisurv.self_training as mod

    def fit(X, y, *args):
        if len(y) > limit:
            raise NoUsefulWeakLearner("first weak learner is no better than chance")
        return train_ensemble(X, y, *args)
    monkeypatch.setattr(mod, "train_ensemble", fit)


def test_failed_retrain_keeps_previous_model(monkeypatch):
    X_lab, y_lab, X_unl, levels = _split_pool(8)
    base = train_ensemble(X_lab, y_lab, levels, ADA, STUMP, 0)
    _fail_above(len(y_lab), monkeypatch)
    model, trace = self_train_loop(X_lab, y_lab, X_unl, 0.0, levels, ADA, STUMP)
    assert json.dumps(model.to_dict()) == json.dumps(base.to_dict())
    assert trace.n_absorbed == 0
    assert trace.iterations[-1]["retrain_failed"]
    assert trace.iterations[-1]["remaining"] == len(X_unl)


def test_untrainable_folds_cast_no_vote(monkeypatch):
    X_lab, y_lab, X_unl, levels = _split_pool(8)
    _fail_above(0, monkeypatch)
    cfg = SelfTrainConfig((0.5, 0.7, 0.9), cv_folds=4)
    theta, records = select_confidence_threshold(X_lab, y_lab, X_unl, levels, cfg, ADA, STUMP)
    assert records == [] and theta == 0.9


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10 ** 6), st.integers(0, 12), st.sampled_from([0.0, 0.3, 0.6, 0.9]),
       st.sampled_from(["adaboost", "robustboost"]))
def test_loop_terminates_with_decreasing_pool(seed, n_unl, theta, algorithm):
    rng = np.random.default_rng(seed)
    n_lab = int(rng.integers(4, 16))
    X = rng.integers(-1, 3, (n_lab + n_unl, 3))
    y = np.where(rng.random(n_lab) < 0.5, 1, -1)
    y[:2] = [1, -1]
    boost = BoostConfig(algorithm=algorithm, rounds_cap=5)
    try:
        _, trace = self_train_loop(X[:n_lab], y, X[n_lab:], theta, [3, 3, 3], boost, STUMP)
    except Exception as exc:  # a useless first learner is a legitimate outcome
        assert type(exc).__name__ == "NoUsefulWeakLearner"
        return
    remaining = [it["remaining"] for it in trace.iterations]
    assert len(trace.iterations) <= n_unl + 1
    assert trace.iterations[-1]["absorbed"] == 0
    assert all(b < a for a, b in zip(remaining[:-1], remaining[1:-1]))
    for it in trace.iterations:
        assert it["absorbed"] == it["pseudo_pos"] + it["pseudo_neg"]


def test_estimator_api():
    X, y, _ = make_classification(80, 4, 2, label_noise=0.1, seed=9)
    y_semi = y.copy()
    y_semi[50:] = 0
    clf = SelfTrainingBoostClassifier(threshold_grid=(0.5, 0.9), cv_folds=3, algorithm="adaboost",
                                      n_rounds=10, max_depth=1, n_levels=[4] * 6)
    clf.fit(X, y_semi)
    assert clf.threshold_ in (0.5, 0.9)
    assert set(clf.predict(X)) <= {-1, 1}
    assert clone(clf).get_params() == clf.get_params()
    fixed = SelfTrainingBoostClassifier(threshold=0.8, algorithm="adaboost", n_rounds=10,
                                        n_levels=[4] * 6).fit(X, y_semi)
    assert fixed.threshold_ == 0.8 and fixed.trace_.fold_thresholds == []
