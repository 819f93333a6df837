import itertools
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from semisurv.exceptions import EmptyNode, InputError
from semisurv.tree import (
    Internal,
    Leaf,
    Split,
    Surrogate,
    SurrogateTreeClassifier,
    Tree,
    TreeConfig,
    best_split,
    find_surrogates,
    gini_impurity,
    grow_tree,
    partitions,
    predict_tree,
    route_sample,
    strip_surrogates,
    tree_importances,
)


# -- independent reference implementations (plain loops, no vectorization)

def ref_gini(wp, wn):
    t = wp + wn
    return 0.0 if t == 0 else 1.0 - (wp / t) ** 2 - (wn / t) ** 2


def ref_gain(X, y, w, attr, left):
    total = sum(w)
    obs = [i for i in range(len(y)) if X[i][attr] >= 0]
    wo = sum(w[i] for i in obs)
    if wo == 0:
        return None
    sides = {True: [0.0, 0.0], False: [0.0, 0.0]}
    for i in obs:
        sides[X[i][attr] in left][0 if y[i] > 0 else 1] += w[i]
    wl, wr = sum(sides[True]), sum(sides[False])
    parent = ref_gini(sum(w[i] for i in obs if y[i] > 0), sum(w[i] for i in obs if y[i] <= 0))
    child = (wl * ref_gini(*sides[True]) + wr * ref_gini(*sides[False])) / wo
    return (wo / total) * (parent - child), wl, wr


def ref_left_sets(k):
    rest = range(1, k)
    sets = []
    for r in range(0, k - 1):
        for combo in itertools.combinations(rest, r):
            sets.append((0, *combo))
    return sorted(sets)


def ref_best_split(X, y, w, n_levels, min_leaf=1.0):
    best = None
    for attr, k in enumerate(n_levels):
        for left in ref_left_sets(k):
            res = ref_gain(X, y, w, attr, left)
            if res is None:
                continue
            gain, wl, wr = res
            if wl < min_leaf or wr < min_leaf or wl <= 0 or wr <= 0 or gain <= 1e-12:
                continue
            if best is None or gain > best[0] + 1e-12 * max(1.0, best[0]):
                best = (gain, attr, left)
    return best


def ref_cart(X, y, w, n_levels, depth, max_depth, min_leaf):
    """Complete-data CART with no surrogate machinery."""
    wp = sum(wi for wi, yi in zip(w, y) if yi > 0)
    wn = sum(wi for wi, yi in zip(w, y) if yi <= 0)
    leaf = ("leaf", 1 if wp >= wn else -1)
    if depth >= max_depth or wp <= 0 or wn <= 0 or wp + wn < 2 * min_leaf:
        return leaf
    best = ref_best_split(X, y, w, n_levels, min_leaf)
    if best is None:
        return leaf
    _, attr, left = best
    li = [i for i in range(len(y)) if X[i][attr] in left]
    ri = [i for i in range(len(y)) if X[i][attr] not in left]
    sub = lambda idx: ([X[i] for i in idx], [y[i] for i in idx], [w[i] for i in idx])
    return ("node", attr, left,
            ref_cart(*sub(li), n_levels, depth + 1, max_depth, min_leaf),
            ref_cart(*sub(ri), n_levels, depth + 1, max_depth, min_leaf))


def shape(node):
    if isinstance(node, Leaf):
        return ("leaf", node.prediction)
    return ("node", node.split.attribute, tuple(node.split.left_levels),
            shape(node.left), shape(node.right))


def random_instance(rng, n, n_levels, missing=0.0):
    X = np.column_stack([rng.integers(0, k, n) for k in n_levels])
    if missing:
        X[rng.random(X.shape) < missing] = -1
    y = np.where(rng.random(n) < 0.5, 1, -1)
    return X, y


# -- gini and partitions

@pytest.mark.parametrize("wp, wn, expected", [(5, 0, 0.0), (5, 5, 0.5), (3, 1, 0.375)])
def test_gini_examples(wp, wn, expected):
    assert gini_impurity(wp, wn) == pytest.approx(expected, abs=1e-15)


def test_gini_empty_node():
    with pytest.raises(EmptyNode):
        gini_impurity(0, 0)


@given(st.floats(0, 1e6), st.floats(0, 1e6))
def test_gini_range(wp, wn):
    if wp + wn > 0:
        assert 0.0 <= gini_impurity(wp, wn) <= 0.5 + 1e-15


@pytest.mark.parametrize("k", [1, 2, 3, 4, 5])
def test_partitions_count_and_order(k):
    parts = partitions(k)
    assert len(parts) == 2 ** (k - 1) - 1
    assert list(parts) == ref_left_sets(k)


# -- best split

def test_perfect_binary_split():
    X = np.array([[0], [0], [1], [1]])
    y = np.array([1, 1, -1, -1])
    split = best_split(X, y, np.ones(4), [2])
    assert (split.attribute, split.left_levels) == (0, (0,))
    assert split.gini_decrease == pytest.approx(0.5)


def test_constant_attributes_give_no_split():
    X = np.zeros((6, 2), dtype=int)
    y = np.array([1, -1] * 3)
    assert best_split(X, y, np.ones(6), [3, 2]) is None


def test_tie_prefers_lower_attribute():
    X = np.array([[0, 0], [0, 0], [1, 1], [1, 1]])
    y = np.array([1, 1, -1, -1])
    assert best_split(X, y, np.ones(4), [2, 2]).attribute == 0


@pytest.mark.parametrize("seed", range(30))
def test_best_split_matches_exhaustive_enumeration(seed):
    rng = np.random.default_rng(seed)
    n_levels = [2, 3, 4]
    X, y = random_instance(rng, 12, n_levels, missing=0.15 if seed % 2 else 0.0)
    w = rng.uniform(0.5, 2.0, 12)
    ours = best_split(X, y, w, n_levels)
    ref = ref_best_split(X.tolist(), y.tolist(), w.tolist(), n_levels)
    if ref is None:
        assert ours is None
    else:
        assert (ours.attribute, tuple(ours.left_levels)) == (ref[1], ref[2])
        assert ours.gini_decrease == pytest.approx(ref[0], rel=1e-9)


def test_best_split_rejects_bad_codes():
    with pytest.raises(InputError):
        best_split(np.array([[5]]), np.array([1]), np.ones(1), [2])


# -- surrogates

PRIMARY = Split(0, (0,), 0.1)
A0 = [0, 0, 0, 0, 0, 0, 1, 1, 1, 1]
A1 = [0, 0, 0, 0, 0, 1, 1, 1, 1, 0]
A2 = [1, 1, 1, 1, 1, 1, 0, 0, 0, 0]


def test_surrogate_hand_instance():
    X = np.column_stack([A0, A1, A2])
    surr = find_surrogates(PRIMARY, X, np.ones(10), [2, 2, 2])
    # inverted copy first (perfect), then the partial copy
    assert [s.attribute for s in surr] == [2, 1]
    assert surr[0].association == pytest.approx(1.0)
    assert surr[0].flipped
    # agreement 8/10, baseline 6/10
    assert surr[1].association == pytest.approx((0.8 - 0.6) / (1 - 0.6))
    assert not surr[1].flipped and surr[1].left_levels == (0,)


def test_surrogate_uses_co_observed_weight():
    a1 = list(A1)
    a1[9] = -1
    X = np.column_stack([A0, a1])
    (s,) = find_surrogates(PRIMARY, X, np.ones(10), [2, 2])
    agree, base = 8 / 9, 6 / 9
    assert s.association == pytest.approx((agree - base) / (1 - base))


def test_duplicate_column_has_unit_association():
    rng = np.random.default_rng(0)
    col = rng.integers(0, 4, 40)
    X = np.column_stack([col, col])
    primary = Split(0, (0, 2), 0.1)
    (s,) = find_surrogates(primary, X, np.ones(40), [4, 4])
    assert s.association == pytest.approx(1.0)
    assert s.left_levels == (0, 2) and not s.flipped


def test_independent_attribute_excluded():
    a0 = [0, 0, 1, 1] * 4
    a1 = [0, 1] * 8  # balanced against each side of the primary
    X = np.column_stack([a0, a1])
    assert find_surrogates(Split(0, (0,), 0.1), X, np.ones(16), [2, 2]) == []


def test_surrogates_truncated_and_sorted():
    rng = np.random.default_rng(2)
    base = rng.integers(0, 2, 60)
    cols = [base]
    for noise in (0.05, 0.1, 0.15, 0.2):
        flip = rng.random(60) < noise
        cols.append(np.where(flip, 1 - base, base))
    X = np.column_stack(cols)
    surr = find_surrogates(Split(0, (0,), 0.1), X, np.ones(60), [2] * 5, TreeConfig(max_surrogates=2))
    assert len(surr) == 2
    assert surr[0].association >= surr[1].association


# -- routing

def _node(surrogates, majority="right"):
    return Internal(PRIMARY, surrogates, majority, Leaf(1, 1, 0), Leaf(-1, 0, 1), 1.0, 1.0)


def test_routing_priority_and_fallback():
    surr = [Surrogate(1, (0,), 1.0, True), Surrogate(2, (0,), 0.5, False)]
    node = _node(surr)
    levels = [2, 2, 2]
    assert route_sample(node, [0, 0, 0], levels) == "left"
    assert route_sample(node, [1, 1, 1], levels) == "right"
    # primary missing: first observed surrogate decides, honouring its orientation
    assert route_sample(node, [-1, 0, 0], levels) == "right"
    assert route_sample(node, [-1, -1, 0], levels) == "left"
    assert route_sample(node, [-1, -1, -1], levels) == "right"
    assert route_sample(_node([], "left"), [-1, -1, -1], levels) == "left"


def test_perfect_surrogate_reproduces_primary_side():
    X = np.column_stack([A0, A2])
    surr = find_surrogates(PRIMARY, X, np.ones(10), [2, 2])
    node = _node(surr)
    for a0, a2 in zip(A0, A2):
        assert route_sample(node, [-1, a2], [2, 2]) == route_sample(node, [a0, a2], [2, 2])


# -- growing

def test_pure_input_gives_single_leaf():
    X = np.array([[0, 1], [1, 0], [1, 1]])
    tree = grow_tree(X, np.ones(3, dtype=int), np.ones(3), [2, 2])
    assert isinstance(tree.root, Leaf) and tree.root.prediction == 1


def test_depth_one_gives_stump():
    X = np.array([[0, 0], [0, 1], [1, 0], [1, 1]] * 3)
    y = np.where(X[:, 0] == 0, 1, -1)
    tree = grow_tree(X, y, np.ones(12), [2, 2], TreeConfig(max_depth=1))
    assert tree.depth == 1
    np.testing.assert_array_equal(tree.predict(X), y)


def test_leaf_tie_predicts_positive():
    tree = grow_tree(np.array([[0], [0]]), np.array([1, -1]), np.ones(2), [1])
    assert tree.root.prediction == 1


def test_zero_weight_root():
    with pytest.raises(EmptyNode):
        grow_tree(np.array([[0]]), np.array([1]), np.zeros(1), [2])


@pytest.mark.parametrize("seed", range(15))
def test_complete_data_tree_matches_reference_cart(seed):
    rng = np.random.default_rng(100 + seed)
    n_levels = [2, 3, 4, 4]
    X, _ = random_instance(rng, 40, n_levels)
    y = np.where((X[:, 1] == 0) ^ (X[:, 2] >= 2) ^ (rng.random(40) < 0.2), 1, -1)
    w = rng.uniform(0.2, 3.0, 40)
    w_units = w * (40 / w.sum())
    cfg = TreeConfig(max_depth=3, min_leaf_weight=2.0)
    tree = grow_tree(X, y, w, n_levels, cfg)
    ref = ref_cart(X.tolist(), y.tolist(), w_units.tolist(), n_levels, 0, 3, 2.0)
    assert shape(tree.root) == ref


@pytest.mark.parametrize("seed", range(20))
def test_surrogates_inactive_without_missing_cells(seed):
    rng = np.random.default_rng(seed)
    n_levels = [4] * 6
    X, y = random_instance(rng, 80, n_levels)
    w = rng.uniform(0.5, 1.5, 80)
    with_s = grow_tree(X, y, w, n_levels, TreeConfig(max_surrogates=5))
    without = grow_tree(X, y, w, n_levels, TreeConfig(max_surrogates=0))
    grid = np.array(list(itertools.product(range(4), repeat=3)))
    Xq = np.column_stack([grid, grid])
    np.testing.assert_array_equal(with_s.predict(Xq), without.predict(Xq))


def _recount_importances(tree, X, y, w):
    """Route the training rows down the tree by hand and recompute each node's gain."""
    w = w * (np.count_nonzero(w) / w.sum())
    imp = np.zeros(X.shape[1])
    root_w = w.sum()

    def visit(node, idx):
        if isinstance(node, Leaf):
            return
        gain, _, _ = ref_gain(X[idx].tolist(), y[idx].tolist(), w[idx].tolist(),
                              node.split.attribute, node.split.left_levels)
        imp[node.split.attribute] += w[idx].sum() / root_w * gain
        sides = [route_sample(node, X[i], tree.n_levels) for i in idx]
        visit(node.left, [i for i, s in zip(idx, sides) if s == "left"])
        visit(node.right, [i for i, s in zip(idx, sides) if s == "right"])

    visit(tree.root, list(range(len(y))))
    return imp


@pytest.mark.parametrize("seed", range(10))
def test_importances_match_independent_recount(seed):
    rng = np.random.default_rng(seed)
    n_levels = [3, 4, 2, 4]
    X, y = random_instance(rng, 60, n_levels, missing=0.2)
    w = rng.uniform(0.5, 2, 60)
    tree = grow_tree(X, y, w, n_levels)
    np.testing.assert_allclose(tree_importances(tree), _recount_importances(tree, X, y, w),
                               rtol=1e-9, atol=1e-15)


def test_importances_of_leaf_and_stump():
    leaf = grow_tree(np.array([[0], [1]]), np.array([1, 1]), np.ones(2), [2])
    assert tree_importances(leaf).tolist() == [0.0]
    X = np.array([[0, 0], [0, 1], [1, 0], [1, 1]])
    stump = grow_tree(X, np.array([1, 1, -1, -1]), np.ones(4), [2, 2], TreeConfig(max_depth=1))
    imp = tree_importances(stump)
    assert imp[1] == 0 and imp[0] > 0


def test_json_round_trip():
    rng = np.random.default_rng(7)
    X, y = random_instance(rng, 50, [4, 4, 3], missing=0.3)
    tree = grow_tree(X, y, np.ones(50), [4, 4, 3])
    back = Tree.from_dict(json.loads(json.dumps(tree.to_dict())))
    assert back == tree
    np.testing.assert_array_equal(back.predict(X), tree.predict(X))
    assert predict_tree(back, X[0]) == tree.predict(X[:1])[0]


def test_estimator_wrapper():
    rng = np.random.default_rng(3)
    X, y = random_instance(rng, 30, [3, 3])
    clf = SurrogateTreeClassifier(max_depth=2).fit(X, y)
    assert clf.predict(X).shape == (30,)
    assert clf.get_params()["max_depth"] == 2


# -- properties

@st.composite
def instances(draw):
    n = draw(st.integers(2, 30))
    n_levels = draw(st.lists(st.integers(1, 4), min_size=1, max_size=4))
    X = np.array([[draw(st.integers(-1, k - 1)) for k in n_levels] for _ in range(n)])
    y = np.array(draw(st.lists(st.sampled_from([-1, 1]), min_size=n, max_size=n)))
    w = np.array(draw(st.lists(st.floats(0.01, 10), min_size=n, max_size=n)))
    return X, y, w, n_levels


def _walk(node, out):
    if isinstance(node, Internal):
        out.append(node)
        _walk(node.left, out)
        _walk(node.right, out)
    return out


@settings(max_examples=80, deadline=None)
@given(instances())
def test_tree_invariants(inst):
    X, y, w, n_levels = inst
    tree = grow_tree(X, y, w, n_levels)
    for node in _walk(tree.root, []):
        assert node.split.gini_decrease > 0
        for s in node.surrogates:
            assert 0 < s.association <= 1
    # routing is total, including all-missing rows
    probe = np.vstack([X, -np.ones((1, len(n_levels)), dtype=int)])
    assert set(tree.predict(probe).tolist()) <= {-1, 1}
    assert grow_tree(X, y, w, n_levels) == tree


@settings(max_examples=50, deadline=None)
@given(instances(), st.randoms(use_true_random=False))
def test_best_split_invariant_to_row_order(inst, rnd):
    X, y, w, n_levels = inst
    perm = list(range(len(y)))
    rnd.shuffle(perm)
    a = best_split(X, y, w, n_levels)
    b = best_split(X[perm], y[perm], w[perm], n_levels)
    if a is None:
        assert b is None
    else:
        assert (a.attribute, a.left_levels) == (b.attribute, b.left_levels)
        assert a.gini_decrease == pytest.approx(b.gini_decrease, rel=1e-9)


def test_strip_surrogates_keeps_structure():
    rng = np.random.default_rng(11)
    X, y = random_instance(rng, 60, [4, 4, 4], missing=0.3)
    X[:, 1] = np.where(X[:, 0] >= 0, X[:, 0], X[:, 1])
    tree = grow_tree(X, y, np.ones(60), [4, 4, 4])
    bare = strip_surrogates(tree)
    assert all(not n.surrogates for n in bare.internal_nodes())
    assert shape(bare.root) == shape(tree.root)
    complete = X[(X >= 0).all(axis=1)]
    np.testing.assert_array_equal(bare.predict(complete), tree.predict(complete))
