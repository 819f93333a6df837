"""Weighted CART classification trees over categorical features.

Features are integer level codes with ``-1`` for a missing cell.  Every
internal node stores its primary split together with an ordered list of
surrogate splits on other attributes; a sample whose primary attribute is
missing follows the first surrogate whose attribute it has, and falls back
to the child that received more weight during training.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin

from .exceptions import EmptyNode, InputError

LEFT, RIGHT = "left", "right"
_TIE_RTOL = 1e-12
_MIN_GAIN = 1e-12


@dataclass(frozen=True)
class TreeConfig:
    max_depth: int = 3
    min_leaf_weight: float = 1.0
    max_surrogates: int = 5

    def __post_init__(self):
        if self.max_depth < 1:
            raise InputError("max_depth must be at least 1")
        if self.max_surrogates < 0:
            raise InputError("max_surrogates must be non-negative")


@dataclass(frozen=True)
class Split:
    attribute: int
    left_levels: tuple
    gini_decrease: float = 0.0


@dataclass(frozen=True)
class Surrogate:
    attribute: int
    left_levels: tuple
    association: float
    flipped: bool = False  # surrogate-left sends the sample to the primary's right


@dataclass
class Leaf:
    prediction: int
    w_pos: float
    w_neg: float


@dataclass
class Internal:
    split: Split
    surrogates: list
    majority_child: str
    left: object
    right: object
    w_pos: float = 0.0
    w_neg: float = 0.0
    surrogate_luts: list = field(default_factory=list, repr=False, compare=False)

    @property
    def weight(self) -> float:
        return self.w_pos + self.w_neg


def gini_impurity(w_pos: float, w_neg: float) -> float:
    total = w_pos + w_neg
    if total <= 0:
        raise EmptyNode("node carries no weight")
    p = w_pos / total
    return 2.0 * p * (1.0 - p)


@lru_cache(maxsize=None)
def partitions(k: int) -> tuple:
    """Left level sets of all two-way partitions of ``k`` levels.

    The left side always holds level 0, so each partition appears once;
    the result is sorted lexicographically.
    """
    full = (1 << k) - 1
    out = []
    for mask in range(1, full):
        if mask & 1:
            out.append(tuple(i for i in range(k) if mask >> i & 1))
    return tuple(sorted(out))


@lru_cache(maxsize=None)
def _partition_matrix(k: int) -> np.ndarray:
    parts = partitions(k)
    M = np.zeros((len(parts), k))
    for r, left in enumerate(parts):
        M[r, list(left)] = 1.0
    return M


def _lut(levels: Sequence[int], k: int) -> np.ndarray:
    # extra trailing slot so that code -1 (missing) indexes a False entry
    lut = np.zeros(k + 1, dtype=bool)
    lut[list(levels)] = True
    return lut


class _Encoded:
    """Training matrix with a one-hot view grouped by attribute."""

    def __init__(self, X: np.ndarray, n_levels: Sequence[int]):
        self.X = X
        self.n_levels = tuple(int(k) for k in n_levels)
        self.offsets = np.concatenate([[0], np.cumsum(self.n_levels)]).astype(int)
        n, p = X.shape
        onehot = np.zeros((n, int(self.offsets[-1])))
        for j in range(p):
            obs = X[:, j] >= 0
            onehot[np.flatnonzero(obs), self.offsets[j] + X[obs, j]] = 1.0
        self.onehot = onehot
        self.observed = X >= 0

    def level_sums(self, rows: np.ndarray, values: np.ndarray) -> list:
        total = values @ self.onehot[rows]
        return [total[self.offsets[j]:self.offsets[j + 1]] for j in range(len(self.n_levels))]


def _check_X(X, n_levels) -> np.ndarray:
    X = np.asarray(X)
    if X.ndim != 2:
        raise InputError("feature matrix must be two-dimensional")
    if X.shape[1] != len(n_levels):
        raise InputError(f"expected {len(n_levels)} attributes, got {X.shape[1]}")
    X = X.astype(np.int64)
    if X.size and (X.min() < -1 or np.any(X.max(axis=0) >= np.asarray(n_levels))):
        raise InputError("level code out of range")
    return X


def _best_split(enc: _Encoded, rows: np.ndarray, y: np.ndarray, w: np.ndarray,
                cfg: TreeConfig) -> Split | None:
    W = w.sum()
    pos = w * (y > 0)
    wp_all = enc.level_sums(rows, pos)
    wn_all = enc.level_sums(rows, w - pos)
    cands = []
    for j, k in enumerate(enc.n_levels):
        if k < 2:
            continue
        wp_lev, wn_lev = wp_all[j], wn_all[j]
        wp, wn = wp_lev.sum(), wn_lev.sum()
        w_obs = wp + wn
        if w_obs <= 0:
            continue
        M = _partition_matrix(k)
        wpL, wnL = M @ wp_lev, M @ wn_lev
        wpR, wnR = wp - wpL, wn - wnL
        WL, WR = wpL + wnL, wpR + wnR
        ok = (WL >= cfg.min_leaf_weight) & (WR >= cfg.min_leaf_weight) & (WL > 0) & (WR > 0)
        if not ok.any():
            continue
        with np.errstate(divide="ignore", invalid="ignore"):
            child = np.where(ok, 2 * wpL * wnL / WL + 2 * wpR * wnR / WR, 0.0)
        # both terms are weight-scaled impurities, so dividing by W applies
        # the observed fraction to the per-observed-weight decrease
        parent = 2 * wp * wn / w_obs
        gain = (parent - child) / W
        for r in np.flatnonzero(ok):
            if gain[r] > _MIN_GAIN:
                cands.append((float(gain[r]), j, partitions(k)[r]))
    if not cands:
        return None
    top = max(c[0] for c in cands)
    tied = [c for c in cands if c[0] >= top - _TIE_RTOL * max(1.0, top)]
    gain, j, left = min(tied, key=lambda c: (c[1], c[2]))
    return Split(j, left, gain)


def best_split(X, y, weights, n_levels, cfg: TreeConfig = TreeConfig()) -> Split | None:
    """Split with the largest weighted Gini decrease, or ``None``.

    Each attribute is scored on the samples that observe it; the decrease
    is scaled by that observed share of the node weight.
    """
    X = _check_X(X, n_levels)
    enc = _Encoded(X, n_levels)
    rows = np.arange(len(X))
    return _best_split(enc, rows, np.asarray(y), np.asarray(weights, dtype=float), cfg)


def _find_surrogates(enc: _Encoded, rows: np.ndarray, w: np.ndarray, primary: Split,
                     cfg: TreeConfig) -> list:
    a = primary.attribute
    ka = enc.n_levels[a]
    col = enc.X[rows, a]
    obs_a = col >= 0
    goes_left = _lut(primary.left_levels, ka)[col] & obs_a
    sub = rows[obs_a]
    wa = w[obs_a]
    gl = goes_left[obs_a]
    left_all = enc.level_sums(sub, wa * gl)
    right_all = enc.level_sums(sub, wa * ~gl)
    out = []
    for j, k in enumerate(enc.n_levels):
        if j == a or k < 2:
            continue
        lv_l, lv_r = left_all[j], right_all[j]
        WLp, WRp = lv_l.sum(), lv_r.sum()
        Wc = WLp + WRp
        if Wc <= 0:
            continue
        base = max(WLp, WRp) / Wc
        if base >= 1.0:
            continue
        M = _partition_matrix(k)
        agree = (M @ lv_l + (1 - M) @ lv_r) / Wc
        best = None
        for r, ag in enumerate(agree):
            flipped = ag < 0.5
            score = 1.0 - ag if flipped else ag
            if best is None or score > best[0] + _TIE_RTOL:
                best = (score, partitions(k)[r], flipped)
        score, left, flipped = best
        lam = (score - base) / (1.0 - base)
        if lam > _MIN_GAIN:
            out.append(Surrogate(j, left, float(min(lam, 1.0)), bool(flipped)))
    out.sort(key=lambda s: (-s.association, s.attribute))
    return out[: cfg.max_surrogates]


def find_surrogates(primary: Split, X, weights, n_levels, cfg: TreeConfig = TreeConfig()) -> list:
    """Surrogate splits for ``primary``, best association first.

    Agreement and the majority-rule baseline are both measured on the
    weight of samples observing the primary and the candidate attribute.
    """
    X = _check_X(X, n_levels)
    enc = _Encoded(X, n_levels)
    return _find_surrogates(enc, np.arange(len(X)), np.asarray(weights, dtype=float),
                            primary, cfg)


def _route_left(node: Internal, X: np.ndarray, n_levels: Sequence[int]) -> np.ndarray:
    a = node.split.attribute
    col = X[:, a]
    left = _lut(node.split.left_levels, n_levels[a])[col]
    resolved = col >= 0
    for s in node.surrogates:
        if resolved.all():
            break
        sc = X[:, s.attribute]
        use = ~resolved & (sc >= 0)
        left[use] = _lut(s.left_levels, n_levels[s.attribute])[sc[use]] ^ s.flipped
        resolved |= use
    left[~resolved] = node.majority_child == LEFT
    return left


def route_sample(node: Internal, sample, n_levels: Sequence[int]) -> str:
    """Side a single sample takes at ``node``."""
    x = np.asarray(sample, dtype=np.int64).reshape(1, -1)
    return LEFT if _route_left(node, x, n_levels)[0] else RIGHT


class Tree:
    def __init__(self, root, n_levels: Sequence[int]):
        self.root = root
        self.n_levels = tuple(int(k) for k in n_levels)

    def predict(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.int64)
        out = np.empty(len(X), dtype=np.int64)
        stack = [(self.root, np.arange(len(X)))]
        while stack:
            node, idx = stack.pop()
            if isinstance(node, Leaf):
                out[idx] = node.prediction
                continue
            left = _route_left(node, X[idx], self.n_levels)
            stack.append((node.left, idx[left]))
            stack.append((node.right, idx[~left]))
        return out

    def predict_one(self, sample) -> int:
        node = self.root
        while isinstance(node, Internal):
            side = route_sample(node, sample, self.n_levels)
            node = node.left if side == LEFT else node.right
        return node.prediction

    def internal_nodes(self) -> list:
        out, stack = [], [self.root]
        while stack:
            node = stack.pop()
            if isinstance(node, Internal):
                out.append(node)
                stack += [node.right, node.left]
        return out

    @property
    def depth(self) -> int:
        def d(node):
            if isinstance(node, Leaf):
                return 0
            return 1 + max(d(node.left), d(node.right))
        return d(self.root)

    def importances(self) -> np.ndarray:
        return tree_importances(self)

    def to_dict(self) -> dict:
        return {"n_levels": list(self.n_levels), "root": _node_to_dict(self.root)}

    @classmethod
    def from_dict(cls, d: dict) -> "Tree":
        return cls(_node_from_dict(d["root"]), d["n_levels"])

    def __eq__(self, other):
        return isinstance(other, Tree) and self.to_dict() == other.to_dict()


def _node_to_dict(node) -> dict:
    if isinstance(node, Leaf):
        return {"kind": "leaf", "prediction": node.prediction,
                "w_pos": node.w_pos, "w_neg": node.w_neg}
    return {
        "kind": "internal",
        "attribute": node.split.attribute,
        "left_levels": list(node.split.left_levels),
        "gini_decrease": node.split.gini_decrease,
        "w_pos": node.w_pos,
        "w_neg": node.w_neg,
        "majority_child": node.majority_child,
        "surrogates": [{"attribute": s.attribute, "left_levels": list(s.left_levels),
                        "association": s.association, "flipped": s.flipped}
                       for s in node.surrogates],
        "left": _node_to_dict(node.left),
        "right": _node_to_dict(node.right),
    }


def _node_from_dict(d: dict):
    if d["kind"] == "leaf":
        return Leaf(int(d["prediction"]), float(d["w_pos"]), float(d["w_neg"]))
    split = Split(int(d["attribute"]), tuple(d["left_levels"]), float(d["gini_decrease"]))
    surrogates = [Surrogate(int(s["attribute"]), tuple(s["left_levels"]),
                            float(s["association"]), bool(s["flipped"]))
                  for s in d["surrogates"]]
    return Internal(split, surrogates, d["majority_child"], _node_from_dict(d["left"]),
                    _node_from_dict(d["right"]), float(d["w_pos"]), float(d["w_neg"]))


def _leaf(w_pos: float, w_neg: float) -> Leaf:
    return Leaf(1 if w_pos >= w_neg else -1, float(w_pos), float(w_neg))


def _grow(enc: _Encoded, rows, y, w, depth, cfg):
    wp = float(w[y > 0].sum())
    wn = float(w[y <= 0].sum())
    if (depth >= cfg.max_depth or wp <= 0 or wn <= 0
            or wp + wn < 2 * cfg.min_leaf_weight):
        return _leaf(wp, wn)
    split = _best_split(enc, rows, y, w, cfg)
    if split is None:
        return _leaf(wp, wn)
    surrogates = _find_surrogates(enc, rows, w, split, cfg) if cfg.max_surrogates else []

    Xn = enc.X[rows]
    a = split.attribute
    col = Xn[:, a]
    left = _lut(split.left_levels, enc.n_levels[a])[col]
    resolved = col >= 0
    for s in surrogates:
        sc = Xn[:, s.attribute]
        use = ~resolved & (sc >= 0)
        left[use] = _lut(s.left_levels, enc.n_levels[s.attribute])[sc[use]] ^ s.flipped
        resolved |= use
    wl = w[resolved & left].sum()
    wr = w[resolved & ~left].sum()
    majority = LEFT if wl >= wr else RIGHT
    left[~resolved] = majority == LEFT

    node = Internal(split, surrogates, majority, None, None, wp, wn)
    node.left = _grow(enc, rows[left], y[left], w[left], depth + 1, cfg)
    node.right = _grow(enc, rows[~left], y[~left], w[~left], depth + 1, cfg)
    return node


def grow_tree(X, y, weights, n_levels, cfg: TreeConfig = TreeConfig(), *, _encoded=None) -> Tree:
    """Grow a depth-limited tree; weights are rescaled to sample-count units.

    Samples missing the primary attribute travel down with their full
    weight along the surrogate chain (or to the majority child).
    """
    X = _check_X(X, n_levels) if _encoded is None else _encoded.X
    y = np.asarray(y)
    w = np.asarray(weights, dtype=float)
    if len(w) != len(X) or len(y) != len(X):
        raise InputError("X, y and weights differ in length")
    if np.any(w < 0):
        raise InputError("weights must be non-negative")
    total = w.sum()
    if total <= 0:
        raise EmptyNode("root node carries no weight")
    w = w * (np.count_nonzero(w) / total)
    enc = _encoded if _encoded is not None else _Encoded(X, n_levels)
    root = _grow(enc, np.arange(len(X)), y, w, 0, cfg)
    return Tree(root, n_levels)


def _strip(node):
    if isinstance(node, Leaf):
        return node
    return Internal(node.split, [], node.majority_child, _strip(node.left), _strip(node.right),
                    node.w_pos, node.w_neg)


def strip_surrogates(tree: Tree) -> Tree:
    """Copy of ``tree`` that sends every sample missing a primary attribute to the majority child."""
    return Tree(_strip(tree.root), tree.n_levels)


def predict_tree(tree: Tree, sample) -> int:
    return tree.predict_one(sample)


def tree_importances(tree: Tree) -> np.ndarray:
    """Unnormalized per-attribute sum of node-weighted Gini decreases of primary splits."""
    imp = np.zeros(len(tree.n_levels))
    root_w = tree.root.w_pos + tree.root.w_neg
    for node in tree.internal_nodes():
        imp[node.split.attribute] += node.weight / root_w * node.split.gini_decrease
    return imp


class SurrogateTreeClassifier(BaseEstimator, ClassifierMixin):
    """Estimator wrapper around :func:`grow_tree` for labels in {-1, +1}.

    ``X`` holds level codes with ``-1`` for missing.  ``n_levels`` may be
    given per column; otherwise it is inferred from the training data.
    """

    def __init__(self, max_depth=3, min_leaf_weight=1.0, max_surrogates=5, n_levels=None):
        self.max_depth = max_depth
        self.min_leaf_weight = min_leaf_weight
        self.max_surrogates = max_surrogates
        self.n_levels = n_levels

    def fit(self, X, y, sample_weight=None):
        X = np.asarray(X, dtype=np.int64)
        y = np.asarray(y)
        n_levels = _resolve_levels(X, self.n_levels)
        w = np.ones(len(X)) if sample_weight is None else np.asarray(sample_weight, dtype=float)
        cfg = TreeConfig(self.max_depth, self.min_leaf_weight, self.max_surrogates)
        self.tree_ = grow_tree(X, y, w, n_levels, cfg)
        self.classes_ = np.array([-1, 1])
        self.n_features_in_ = X.shape[1]
        self.feature_importances_ = _normalize(tree_importances(self.tree_))
        return self

    def predict(self, X):
        if not hasattr(self, "tree_"):
            from sklearn.exceptions import NotFittedError
            raise NotFittedError("SurrogateTreeClassifier is not fitted")
        return self.tree_.predict(_check_X(X, self.tree_.n_levels))


def _resolve_levels(X: np.ndarray, n_levels) -> tuple:
    if n_levels is not None:
        return tuple(int(k) for k in n_levels)
    if X.size == 0:
        return tuple([1] * X.shape[1])
    return tuple(int(max(m, 0)) + 1 for m in X.max(axis=0))


def _normalize(v: np.ndarray) -> np.ndarray:
    s = v.sum()
    return v / s if s > 0 else v
