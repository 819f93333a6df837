"""Confidence-thresholded self-training around a boosted ensemble.

The loop trains on the labeled pool, scores the unlabeled pool, and moves
every sample whose confidence ``|score|`` reaches the threshold into the
training set under its predicted label.  It stops once a round absorbs
nothing.  The threshold is picked from a grid: within each of several
stratified folds of the labeled pool, the grid value whose self-trained
model is most accurate on the held-out fold is recorded, and the final
threshold is the most frequent record (larger value on ties).
"""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.model_selection import StratifiedKFold

from .boosting import BoostConfig, Ensemble, train_ensemble
from .data import SurvivalDataset
from .exceptions import FoldTooSmall, InputError, NoUsefulWeakLearner, SingleClassInput
from .tree import TreeConfig, _check_X, _resolve_levels

DEFAULT_GRID = tuple(round(0.5 + 0.05 * i, 2) for i in range(10))
MODES = ("supervised", "semi_supervised")


@dataclass(frozen=True)
class SelfTrainConfig:
    threshold_grid: tuple = DEFAULT_GRID
    cv_folds: int = 10
    iteration_cap: int | None = None
    seed: int = 0

    def __post_init__(self):
        grid = tuple(float(g) for g in self.threshold_grid)
        object.__setattr__(self, "threshold_grid", grid)
        if not grid:
            raise InputError("threshold grid is empty")
        if any(b <= a for a, b in zip(grid, grid[1:])):
            raise InputError("threshold grid must be strictly ascending")
        if grid[0] < 0 or grid[-1] >= 1:
            raise InputError("thresholds must lie in [0, 1)")
        if self.cv_folds < 2:
            raise InputError("cv_folds must be at least 2")
        if self.iteration_cap is not None and self.iteration_cap < 0:
            raise InputError("iteration_cap must be non-negative")


@dataclass
class SelfTrainTrace:
    threshold: float
    fold_thresholds: list = field(default_factory=list)
    iterations: list = field(default_factory=list)

    @property
    def n_absorbed(self) -> int:
        return sum(it["absorbed"] for it in self.iterations)

    def to_dict(self) -> dict:
        return {"threshold": self.threshold,
                "fold_thresholds": list(self.fold_thresholds),
                "iterations": list(self.iterations)}


class _ModelCache:
    """Ensembles keyed by the exact training set (absorbed indices and labels)."""

    def __init__(self, X_lab, y_lab, X_unl, n_levels, boost_cfg, tree_cfg, seed):
        self.X_lab, self.y_lab, self.X_unl = X_lab, y_lab, X_unl
        self.args = (n_levels, boost_cfg, tree_cfg, seed)
        self.store = {}

    def fit(self, absorbed_idx: np.ndarray, pseudo: np.ndarray) -> Ensemble:
        key = (absorbed_idx.tobytes(), pseudo.tobytes())
        model = self.store.get(key)
        if model is None:
            X = np.vstack([self.X_lab, self.X_unl[absorbed_idx]])
            y = np.concatenate([self.y_lab, pseudo])
            n_levels, boost_cfg, tree_cfg, seed = self.args
            model = train_ensemble(X, y, n_levels, boost_cfg, tree_cfg, seed)
            self.store[key] = model
        return model


def _check_labeled(y):
    y = np.asarray(y, dtype=np.int64)
    if len(np.unique(y)) < 2:
        raise SingleClassInput("labeled pool must contain both classes")
    return y


def _loop(cache: _ModelCache, threshold: float, iteration_cap: int):
    n_unl = len(cache.X_unl)
    pseudo_all = np.zeros(n_unl, dtype=np.int64)  # 0 = still unlabeled
    iterations = []
    model = cache.fit(np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64))
    rounds = 0
    while True:
        pool = np.flatnonzero(pseudo_all == 0)
        passed = np.empty(0, dtype=np.int64)
        labels = np.empty(0, dtype=np.int64)
        if len(pool) and rounds < iteration_cap:
            score = model.score(cache.X_unl[pool])
            hit = np.abs(score) >= threshold
            passed = pool[hit]
            labels = np.where(score[hit] >= 0, 1, -1)
        iterations.append({
            "iteration": len(iterations),
            "absorbed": int(len(passed)),
            "pseudo_pos": int(np.sum(labels == 1)),
            "pseudo_neg": int(np.sum(labels == -1)),
            "remaining": int(len(pool) - len(passed)),
        })
        if len(passed) == 0:
            return model, iterations
        pseudo_all[passed] = labels
        absorbed = np.flatnonzero(pseudo_all != 0)
        try:
            model = cache.fit(absorbed, pseudo_all[absorbed])
        except NoUsefulWeakLearner:
            # the enlarged set cannot be boosted; keep the previous model
            pseudo_all[passed] = 0
            iterations[-1].update(absorbed=0, pseudo_pos=0, pseudo_neg=0,
                                  remaining=int(len(pool)), retrain_failed=True)
            return model, iterations
        rounds += 1


def self_train_loop(X_lab, y_lab, X_unl, threshold: float, n_levels,
                    boost_cfg: BoostConfig = BoostConfig(), tree_cfg: TreeConfig = TreeConfig(),
                    cfg: SelfTrainConfig = SelfTrainConfig(), *, _cache=None) -> tuple:
    """Absorb confident pseudo-labels until none pass; return ``(model, trace)``.

    Pseudo-labels are never revised and pseudo-labeled samples carry the
    same unit weight as labeled ones.
    """
    y_lab = _check_labeled(y_lab)
    X_unl = np.asarray(X_unl, dtype=np.int64).reshape(-1, len(n_levels))
    cache = _cache or _ModelCache(np.asarray(X_lab, dtype=np.int64), y_lab, X_unl,
                                  tuple(n_levels), boost_cfg, tree_cfg, cfg.seed)
    cap = len(X_unl) if cfg.iteration_cap is None else cfg.iteration_cap
    model, iterations = _loop(cache, threshold, cap)
    return model, SelfTrainTrace(float(threshold), [], iterations)


def select_confidence_threshold(X_lab, y_lab, X_unl, n_levels,
                                cfg: SelfTrainConfig = SelfTrainConfig(),
                                boost_cfg: BoostConfig = BoostConfig(),
                                tree_cfg: TreeConfig = TreeConfig()) -> tuple:
    """Return ``(threshold, per_fold_records)`` chosen by cross-validated vote."""
    X_lab = np.asarray(X_lab, dtype=np.int64)
    y_lab = _check_labeled(y_lab)
    X_unl = np.asarray(X_unl, dtype=np.int64).reshape(-1, len(n_levels))
    grid = cfg.threshold_grid
    counts = Counter(y_lab.tolist())
    if min(counts.values()) < cfg.cv_folds:
        raise FoldTooSmall(
            f"a class has {min(counts.values())} samples, fewer than {cfg.cv_folds} folds")
    if len(grid) == 1 or len(X_unl) == 0:
        # every grid value yields the same model, so all tie and the largest wins
        return grid[-1], [grid[-1]] * cfg.cv_folds

    folds = StratifiedKFold(cfg.cv_folds, shuffle=True, random_state=cfg.seed)
    records = []
    for train, test in folds.split(X_lab, y_lab):
        cache = _ModelCache(X_lab[train], y_lab[train], X_unl, tuple(n_levels),
                            boost_cfg, tree_cfg, cfg.seed)
        cap = len(X_unl) if cfg.iteration_cap is None else cfg.iteration_cap
        best = None
        try:
            cache.fit(np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64))
        except NoUsefulWeakLearner:
            continue  # this fold cannot train a base model and casts no vote
        for theta in grid:
            model, _ = _loop(cache, theta, cap)
            acc = float(np.mean(model.predict(X_lab[test]) == y_lab[test]))
            if best is None or acc >= best[0]:
                best = (acc, theta)
        records.append(best[1])
    if not records:
        return grid[-1], records
    return majority_threshold(records), records


def majority_threshold(records) -> float:
    """Most frequent recorded threshold; the largest one among ties."""
    tally = Counter(records)
    top = max(tally.values())
    return max(th for th, c in tally.items() if c == top)


def train_model(dataset: SurvivalDataset, mode: str = "supervised",
                boost_cfg: BoostConfig = BoostConfig(), tree_cfg: TreeConfig = TreeConfig(),
                st_cfg: SelfTrainConfig = SelfTrainConfig(), seed: int = 0) -> tuple:
    """Train in ``supervised`` or ``semi_supervised`` mode; returns ``(model, trace)``."""
    mode = normalize_mode(mode)
    X_lab, y_lab = dataset.labeled_xy()
    n_levels = dataset.schema.n_levels
    names = list(dataset.schema.names)
    if mode == "supervised":
        model = train_ensemble(X_lab, _check_labeled(y_lab), n_levels, boost_cfg, tree_cfg,
                               seed, feature_names=names)
        return model, None
    st_cfg = SelfTrainConfig(st_cfg.threshold_grid, st_cfg.cv_folds, st_cfg.iteration_cap, seed)
    X_unl = dataset.unlabeled_x()
    theta, records = select_confidence_threshold(X_lab, y_lab, X_unl, n_levels, st_cfg,
                                                 boost_cfg, tree_cfg)
    model, trace = self_train_loop(X_lab, y_lab, X_unl, theta, n_levels, boost_cfg,
                                   tree_cfg, st_cfg)
    model.feature_names = names
    trace.fold_thresholds = list(records)
    return model, trace


def normalize_mode(mode: str) -> str:
    mode = mode.replace("-", "_").lower()
    if mode in ("semi", "semisupervised"):
        mode = "semi_supervised"
    if mode not in MODES:
        raise InputError(f"mode must be one of {MODES}, got {mode!r}")
    return mode


class SelfTrainingBoostClassifier(BaseEstimator, ClassifierMixin):
    """Self-trained boosted trees.

    ``fit(X, y)`` takes labels in {-1, +1} with ``0`` marking unlabeled rows.
    When ``threshold`` is ``None`` it is selected by cross-validation over
    ``threshold_grid``.
    """

    def __init__(self, threshold=None, threshold_grid=DEFAULT_GRID, cv_folds=10,
                 iteration_cap=None, algorithm="robustboost", n_rounds=100,
                 target_error=0.1, goal_margin=0.0, final_sigma=0.1, tol=1e-6,
                 max_depth=3, min_leaf_weight=1.0, max_surrogates=5, n_levels=None,
                 random_state=0):
        self.threshold = threshold
        self.threshold_grid = threshold_grid
        self.cv_folds = cv_folds
        self.iteration_cap = iteration_cap
        self.algorithm = algorithm
        self.n_rounds = n_rounds
        self.target_error = target_error
        self.goal_margin = goal_margin
        self.final_sigma = final_sigma
        self.tol = tol
        self.max_depth = max_depth
        self.min_leaf_weight = min_leaf_weight
        self.max_surrogates = max_surrogates
        self.n_levels = n_levels
        self.random_state = random_state

    def fit(self, X, y):
        X = np.asarray(X, dtype=np.int64)
        y = np.asarray(y, dtype=np.int64)
        n_levels = _resolve_levels(X, self.n_levels)
        boost_cfg = BoostConfig(self.algorithm, self.n_rounds, self.target_error,
                                self.goal_margin, self.final_sigma, self.tol)
        tree_cfg = TreeConfig(self.max_depth, self.min_leaf_weight, self.max_surrogates)
        seed = 0 if self.random_state is None else int(self.random_state)
        st_cfg = SelfTrainConfig(tuple(self.threshold_grid), self.cv_folds,
                                 self.iteration_cap, seed)
        lab = y != 0
        if self.threshold is None:
            theta, records = select_confidence_threshold(X[lab], y[lab], X[~lab], n_levels,
                                                         st_cfg, boost_cfg, tree_cfg)
        else:
            theta, records = float(self.threshold), []
        self.ensemble_, self.trace_ = self_train_loop(X[lab], y[lab], X[~lab], theta,
                                                      n_levels, boost_cfg, tree_cfg, st_cfg)
        self.trace_.fold_thresholds = list(records)
        self.threshold_ = theta
        self.classes_ = np.array([-1, 1])
        self.n_features_in_ = X.shape[1]
        return self

    def decision_function(self, X):
        return self.ensemble_.score(_check_X(X, self.ensemble_.n_levels))

    def predict(self, X):
        return np.where(self.decision_function(X) >= 0, 1, -1)

