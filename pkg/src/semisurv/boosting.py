"""Boosted ensembles of surrogate-split trees.

Two weight-update rules are available:

``robustboost``
    Margins ``m_i`` and a boosting clock ``t`` in [0, 1].  Sample weights are
    ``exp(-(m - mu(t))**2 / (2 sigma2(t)))`` with

        sigma2(t) = (final_sigma**2 + 1) * exp(2 (1 - t)) - 1
        mu(t)     = (goal_margin - 2 rho) * exp(1 - t) + 2 rho

    and the potential ``erfc((m - mu(t)) / sqrt(2 sigma2(t)))``, whose margin
    derivative is proportional to the weight.  ``rho`` makes the starting
    potential (all margins 0, t = 0) equal to ``target_error``.  Each round
    advances the clock by ``dt`` and the margins by ``alpha * y * h(x)``, with
    ``(dt, alpha)`` chosen so the new learner is uncorrelated with the
    advanced weights and the mean potential is unchanged.

``adaboost``
    The classic exponential reweighting, kept as an exactly checkable baseline.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy.special import erfc, erfinv
from sklearn.base import BaseEstimator, ClassifierMixin

from .exceptions import (
    InputError,
    NoSolution,
    NoUsefulWeakLearner,
    SingleClassInput,
    TimeExhausted,
)
from .tree import (
    Tree,
    TreeConfig,
    _check_X,
    _Encoded,
    _resolve_levels,
    grow_tree,
    strip_surrogates,
    tree_importances,
)

ALGORITHMS = ("robustboost", "adaboost")
_PERFECT_ERR = 1e-10
_DT_SCAN = 16
_ALPHA_REACH = 1e6
_SEGMENT = 256


@dataclass(frozen=True)
class BoostConfig:
    algorithm: str = "robustboost"
    rounds_cap: int = 100
    target_error: float = 0.1
    goal_margin: float = 0.0
    final_sigma: float = 0.1
    tolerance: float = 1e-6

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise InputError(f"algorithm must be one of {ALGORITHMS}")
        if not 0 < self.target_error < 0.5:
            raise InputError("target_error must lie in (0, 0.5)")
        if self.goal_margin < 0:
            raise InputError("goal_margin must be non-negative")
        if self.final_sigma <= 0:
            raise InputError("final_sigma must be positive")
        if self.rounds_cap < 1:
            raise InputError("rounds_cap must be at least 1")
        if self.tolerance <= 0:
            raise InputError("tolerance must be positive")


# --------------------------------------------------------------------------
# RobustBoost closed forms

def rb_rho(cfg: BoostConfig) -> float:
    s0 = math.sqrt((cfg.final_sigma ** 2 + 1) * math.e ** 2 - 1)
    return ((cfg.goal_margin * math.e + math.sqrt(2) * s0 * float(erfinv(1 - cfg.target_error)))
            / (2 * (math.e - 1)))


def rb_sigma2(t, cfg: BoostConfig):
    return (cfg.final_sigma ** 2 + 1) * np.exp(2 * (1 - t)) - 1


def rb_mu(t, cfg: BoostConfig, rho: float | None = None):
    rho = rb_rho(cfg) if rho is None else rho
    return (cfg.goal_margin - 2 * rho) * np.exp(1 - t) + 2 * rho


def rb_potential(margins, t, cfg: BoostConfig, rho: float | None = None):
    mu = rb_mu(t, cfg, rho)
    return erfc((np.asarray(margins, dtype=float) - mu) / np.sqrt(2 * rb_sigma2(t, cfg)))


def _weights(m, t, cfg, rho):
    d = m - rb_mu(t, cfg, rho)
    return np.exp(-d * d / (2 * rb_sigma2(t, cfg)))


def robustboost_weights(margins, t: float, cfg: BoostConfig = BoostConfig()) -> np.ndarray:
    if t >= 1:
        raise TimeExhausted("boosting time reached 1")
    return _weights(np.asarray(margins, dtype=float), t, cfg, rb_rho(cfg))


@dataclass(frozen=True)
class RobustBoostState:
    t: float
    margins: np.ndarray

    def mu(self, cfg: BoostConfig) -> float:
        return float(rb_mu(self.t, cfg))

    def sigma2(self, cfg: BoostConfig) -> float:
        return float(rb_sigma2(self.t, cfg))


class _StepProblem:
    def __init__(self, m, u, t, cfg):
        self.m = np.asarray(m, dtype=float)
        self.u = np.asarray(u, dtype=float)
        self.t = float(t)
        self.cfg = cfg
        self.rho = rb_rho(cfg)
        self.phi0 = float(rb_potential(self.m, self.t, cfg, self.rho).sum())

    def correlation(self, alpha, s):
        """Weighted correlation and weight sum, both scaled by the largest weight."""
        d = self.m + alpha * self.u - rb_mu(s, self.cfg, self.rho)
        d2 = d * d
        w = np.exp(-(d2 - d2.min()) / (2 * rb_sigma2(s, self.cfg)))
        return float(w @ self.u), float(w.sum())

    def alpha_at(self, s) -> float:
        """First alpha >= 0 where the learner decorrelates under time-``s`` weights."""
        f0, _ = self.correlation(0.0, s)
        if f0 <= 0:
            return 0.0
        mu = float(rb_mu(s, self.cfg, self.rho))
        sigma = math.sqrt(float(rb_sigma2(s, self.cfg)))
        reach = max(mu - self.m.min(), self.m.max() - mu, 0.0) + 10 * sigma
        reach = max(reach, _ALPHA_REACH * sigma)
        # near the end of the clock mu approaches 0 and the root moves out
        # roughly like 1 / |mu|; scan fixed-size segments of doubling spacing
        h, start = sigma / 4, 0.0
        while True:
            grid = start + np.arange(1, _SEGMENT + 1) * h
            d = self.m[:, None] + grid[None, :] * self.u[:, None] - mu
            d2 = d * d
            f = self.u @ np.exp(-(d2 - d2.min(axis=0)) / (2 * sigma * sigma))
            cross = np.flatnonzero(f <= 0)
            if len(cross) or grid[-1] >= reach:
                break
            start, h = float(grid[-1]), 2 * h
        if len(cross) == 0:
            # the correlation stays positive however far the margins move
            raise NoSolution(f"no alpha decorrelates the learner at time {s:.6g}")
        i = cross[0]
        lo = float(grid[i - 1]) if i > 0 else start
        hi = float(grid[i])
        tol = self.cfg.tolerance
        while hi - lo > 1e-15 * max(1.0, hi):
            mid = 0.5 * (lo + hi)
            fm, wsum = self.correlation(mid, s)
            if fm > 0:
                lo = mid
            else:
                hi = mid
            if abs(fm) <= tol * wsum * 1e-3:
                return mid
        return hi

    def potential_gap(self, dt) -> tuple:
        s = self.t + dt
        alpha = self.alpha_at(s)
        phi = float(rb_potential(self.m + alpha * self.u, s, self.cfg, self.rho).sum())
        return phi - self.phi0, alpha


def solve_step(margins, u, t: float, cfg: BoostConfig = BoostConfig()) -> tuple:
    """Return ``(dt, alpha)`` for one robust boosting round.

    ``u`` holds ``y_i * h(x_i)``.  A coarse scan over ``(0, 1 - t]`` brackets
    the first time the mean potential would rise, then bisection on ``dt``;
    for each trial ``dt`` an inner bisection finds ``alpha``.  When even the
    whole remaining time keeps the mean potential below its current value
    the step runs the clock out (``dt = 1 - t``), keeping the alpha of the
    last scanned time if none exists at the end point itself.  ``NoSolution``
    is raised when the learner is uncorrelated with the current weights, or
    when no ``alpha`` decorrelates it at a time before the step would end.
    """
    tol = cfg.tolerance
    if 1 - t < tol:
        raise TimeExhausted(f"remaining time {1 - t:.3g} below tolerance")
    prob = _StepProblem(margins, u, t, cfg)
    f0, wsum = prob.correlation(0.0, t)
    if f0 <= 1e-12 * max(wsum, 1e-300):
        raise NoSolution("weak learner is not positively correlated with the weights")

    remaining = 1.0 - t
    # the potential gap need not be monotone in dt: bracket its first upward crossing
    lo = hi = None
    prev, alpha = 0.0, None
    for k in range(1, _DT_SCAN + 1):
        dt = remaining * k / _DT_SCAN
        try:
            gap, next_alpha = prob.potential_gap(dt)
        except NoSolution:
            if k < _DT_SCAN or alpha is None:
                raise
            # the potential never rises; only the end point itself is degenerate
            # (mu = 0 there), so run the clock out with the last attainable alpha
            return remaining, alpha
        if gap > 0:
            lo, hi = prev, dt
            break
        prev, alpha = dt, next_alpha
    if hi is None:
        return remaining, alpha
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        gap, _ = prob.potential_gap(mid)
        if gap <= 0:
            lo = mid
        else:
            hi = mid
    dt = 0.5 * (lo + hi)
    return dt, prob.alpha_at(t + dt)


# --------------------------------------------------------------------------
# ensembles

class Ensemble:
    def __init__(self, trees, alphas, n_levels, algorithm, config=None, final_t=None,
                 seed=None, feature_names=None):
        self.trees = list(trees)
        self.alphas = [float(a) for a in alphas]
        if len(self.trees) != len(self.alphas):
            raise InputError("one weight per weak learner required")
        self.n_levels = tuple(int(k) for k in n_levels)
        self.algorithm = algorithm
        self.config = dict(config or {})
        self.final_t = final_t
        self.seed = seed
        self.feature_names = list(feature_names) if feature_names is not None else None

    def __len__(self):
        return len(self.trees)

    def votes(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.int64)
        return np.array([tree.predict(X) for tree in self.trees]).reshape(len(self.trees), len(X))

    def score(self, X) -> np.ndarray:
        """Normalized weighted vote in [-1, 1]."""
        a = np.asarray(self.alphas)
        return a @ self.votes(X) / a.sum()

    def predict(self, X) -> np.ndarray:
        return np.where(self.score(X) >= 0, 1, -1)

    def importances(self) -> np.ndarray:
        return ensemble_importances(self)

    def without_surrogates(self) -> "Ensemble":
        """Same learners with majority-child routing only."""
        return Ensemble([strip_surrogates(t) for t in self.trees], self.alphas, self.n_levels,
                        self.algorithm, self.config, self.final_t, self.seed, self.feature_names)

    def to_dict(self) -> dict:
        imp = self.importances()
        names = self.feature_names or [f"x{j}" for j in range(len(self.n_levels))]
        return {
            "algorithm": self.algorithm,
            "config": self.config,
            "seed": self.seed,
            "final_t": self.final_t,
            "n_levels": list(self.n_levels),
            "feature_names": self.feature_names,
            "learners": [{"alpha": a, "tree": t.to_dict()} for a, t in zip(self.alphas, self.trees)],
            "importances": {names[j]: float(imp[j]) for j in range(len(names))},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Ensemble":
        return cls([Tree.from_dict(x["tree"]) for x in d["learners"]],
                   [x["alpha"] for x in d["learners"]], d["n_levels"], d["algorithm"],
                   d.get("config"), d.get("final_t"), d.get("seed"), d.get("feature_names"))


def score_sample(ensemble: Ensemble, sample) -> float:
    return float(ensemble.score(np.asarray(sample).reshape(1, -1))[0])


def ensemble_importances(ensemble: Ensemble) -> np.ndarray:
    """Alpha-weighted mean of per-tree importances, normalized to sum to 1."""
    total = np.zeros(len(ensemble.n_levels))
    for a, tree in zip(ensemble.alphas, ensemble.trees):
        total += a * tree_importances(tree)
    if ensemble.alphas:
        total /= sum(ensemble.alphas)
    s = total.sum()
    return total / s if s > 0 else total


def _validate_training(X, y):
    y = np.asarray(y)
    if len(y) != len(X):
        raise InputError("X and y differ in length")
    if not np.all(np.isin(y, (-1, 1))):
        raise InputError("labels must be -1 or +1")
    if len(y) < 2 or len(np.unique(y)) < 2:
        raise SingleClassInput("training data must contain both classes")
    return y.astype(np.int64)


def train_ensemble(X, y, n_levels, boost_cfg: BoostConfig = BoostConfig(),
                   tree_cfg: TreeConfig = TreeConfig(), seed=None, callback=None,
                   feature_names=None) -> Ensemble:
    """Fit a boosted ensemble on labeled samples (labels in {-1, +1}).

    ``callback``, if given, receives one dict per accepted round with the
    weights the tree was grown on, its training predictions and its alpha.
    """
    X = _check_X(X, n_levels)
    y = _validate_training(X, y)
    enc = _Encoded(X, n_levels)
    if boost_cfg.algorithm == "adaboost":
        trees, alphas, final_t = _adaboost(enc, y, boost_cfg, tree_cfg, callback)
    else:
        trees, alphas, final_t = _robustboost(enc, y, boost_cfg, tree_cfg, callback)
    return Ensemble(trees, alphas, n_levels, boost_cfg.algorithm,
                    {"boost": asdict(boost_cfg), "tree": asdict(tree_cfg)},
                    final_t, seed, feature_names)


def _adaboost(enc, y, cfg, tree_cfg, callback):
    n = len(y)
    D = np.full(n, 1.0 / n)
    trees, alphas = [], []
    for r in range(cfg.rounds_cap):
        tree = grow_tree(enc.X, y, D, enc.n_levels, tree_cfg, _encoded=enc)
        h = tree.predict(enc.X)
        err = float(D[h != y].sum() / D.sum())
        if err >= 0.5:
            if not trees:
                raise NoUsefulWeakLearner("first weak learner is no better than chance")
            break
        perfect = err == 0
        e = max(err, _PERFECT_ERR)
        alpha = 0.5 * math.log((1 - e) / e)
        if callback is not None:
            callback({"round": r, "weights": D.copy(), "predictions": h, "alpha": alpha})
        trees.append(tree)
        alphas.append(alpha)
        if perfect:
            break
        D = D * np.exp(-alpha * y * h)
        D = D / D.sum()
    return trees, alphas, None


def _robustboost(enc, y, cfg, tree_cfg, callback):
    n = len(y)
    m = np.zeros(n)
    t = 0.0
    rho = rb_rho(cfg)
    trees, alphas = [], []
    for r in range(cfg.rounds_cap):
        if 1 - t < cfg.tolerance:
            break
        d2 = (m - rb_mu(t, cfg, rho)) ** 2
        # relative weights only; shift in log space so the tree never sees all zeros
        w = np.exp(-(d2 - d2.min()) / (2 * rb_sigma2(t, cfg)))
        tree = grow_tree(enc.X, y, w, enc.n_levels, tree_cfg, _encoded=enc)
        u = (y * tree.predict(enc.X)).astype(float)
        if np.all(u > 0):
            # perfect learner: lift every margin safely past the goal and finish
            alpha = max(cfg.goal_margin + 2 * cfg.final_sigma - m.min(), cfg.tolerance)
            dt = 1.0 - t
        else:
            try:
                dt, alpha = solve_step(m, u, t, cfg)
            except NoSolution:
                if not trees:
                    raise NoUsefulWeakLearner(
                        "first weak learner is no better than chance") from None
                break
        if callback is not None:
            callback({"round": r, "weights": w, "predictions": u * y, "alpha": alpha,
                      "t": t, "dt": dt})
        if alpha > 0:
            trees.append(tree)
            alphas.append(alpha)
            m = m + alpha * u
        t = t + dt
    if not trees:
        raise NoUsefulWeakLearner("no weak learner received positive weight")
    return trees, alphas, min(t, 1.0)


class BoostedTreesClassifier(BaseEstimator, ClassifierMixin):
    """Boosted surrogate-split trees for level-coded data with labels in {-1, +1}."""

    def __init__(self, algorithm="robustboost", n_rounds=100, target_error=0.1,
                 goal_margin=0.0, final_sigma=0.1, tol=1e-6, max_depth=3,
                 min_leaf_weight=1.0, max_surrogates=5, n_levels=None, random_state=None):
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

    def _configs(self):
        return (BoostConfig(self.algorithm, self.n_rounds, self.target_error,
                            self.goal_margin, self.final_sigma, self.tol),
                TreeConfig(self.max_depth, self.min_leaf_weight, self.max_surrogates))

    def fit(self, X, y):
        X = np.asarray(X, dtype=np.int64)
        n_levels = _resolve_levels(X, self.n_levels)
        boost_cfg, tree_cfg = self._configs()
        self.ensemble_ = train_ensemble(X, y, n_levels, boost_cfg, tree_cfg, self.random_state)
        self.classes_ = np.array([-1, 1])
        self.n_features_in_ = X.shape[1]
        self.feature_importances_ = self.ensemble_.importances()
        return self

    def _check_fitted(self):
        if not hasattr(self, "ensemble_"):
            from sklearn.exceptions import NotFittedError
            raise NotFittedError(f"{type(self).__name__} is not fitted")

    def decision_function(self, X):
        self._check_fitted()
        return self.ensemble_.score(_check_X(X, self.ensemble_.n_levels))

    def predict(self, X):
        return np.where(self.decision_function(X) >= 0, 1, -1)
