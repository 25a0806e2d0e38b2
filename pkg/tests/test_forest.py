import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from trafficlens.errors import BadMagic, DimensionMismatch, EmptyDataset, Truncated
from trafficlens.forest import (Forest, ForestConfig, Tree, best_split, fit, gini, load_forest, predict, save_forest)


def exhaustive_split(X, y, features, n_classes):
    """Try every midpoint of every feature with plain loops."""
    def g(labels):
        if not labels:
            return 0.0
        return 1.0 - sum((labels.count(c) / len(labels)) ** 2 for c in range(n_classes))

    ys = list(y)
    parent = g(ys)
    best = None
    for f in sorted(features):
        vals = sorted(set(X[:, f]))
        for lo, hi in zip(vals, vals[1:]):
            thr = lo + (hi - lo) / 2
            left = [ys[i] for i in range(len(ys)) if X[i, f] <= thr]
            right = [ys[i] for i in range(len(ys)) if X[i, f] > thr]
            gain = parent - (len(left) * g(left) + len(right) * g(right)) / len(ys)
            if gain > 1e-12 and (best is None or gain > best[2] + 1e-12):
                best = (f, thr, gain)
    return best


def test_gini_values():
    assert gini([5, 0]) == 0
    assert gini([2, 2]) == pytest.approx(0.5)
    assert gini([0, 0]) == 0


def test_split_example():
    X = np.array([[1.0], [2.0], [3.0], [4.0]])
    f, thr, gain = best_split(X, np.array([0, 0, 1, 1]), [0], 2)
    assert (f, thr) == (0, 2.5) and gain == pytest.approx(0.5)


def test_pure_and_constant():
    X = np.array([[1.0, 7.0], [2.0, 7.0], [3.0, 7.0]])
    assert best_split(X, np.array([1, 1, 1]), [0, 1], 2) is None
    assert best_split(X, np.array([0, 1, 0]), [1], 2) is None


def test_split_tie_rules():
    # features 0 and 1 are identical: lowest index wins
    X = np.array([[1.0, 1.0], [2.0, 2.0], [3.0, 3.0], [4.0, 4.0]])
    assert best_split(X, np.array([0, 0, 1, 1]), [1, 0], 2)[0] == 0
    # two equally good thresholds on one feature: lowest wins
    X = np.array([[1.0], [2.0], [3.0]])
    f, thr, _ = best_split(X, np.array([0, 1, 0]), [0], 2)
    assert thr == 1.5


@settings(max_examples=150, deadline=None)
@given(st.integers(2, 25), st.integers(1, 4), st.integers(2, 4), st.integers(0, 2**32 - 1))
def test_split_equals_exhaustive(n, d, n_classes, seed):
    rng = np.random.default_rng(seed)
    X = rng.integers(0, 6, size=(n, d)).astype(float)
    y = rng.integers(0, n_classes, size=n)
    got = best_split(X, y, list(range(d)), n_classes)
    want = exhaustive_split(X, y, range(d), n_classes)
    if want is None:
        assert got is None
    else:
        assert got[:2] == want[:2]
        assert got[2] == pytest.approx(want[2], abs=1e-12)
        # accepted split lowers size-weighted child impurity below the parent
        f, thr, _ = got
        left, right = y[X[:, f] <= thr], y[X[:, f] > thr]
        cl = np.bincount(left, minlength=n_classes)
        cr = np.bincount(right, minlength=n_classes)
        weighted = (len(left) * gini(cl) + len(right) * gini(cr)) / n
        assert weighted < gini(np.bincount(y, minlength=n_classes))


def separable(rng, n=200):
    X = rng.uniform(-1, 1, size=(n, 2))
    y = (X[:, 0] + X[:, 1] > 0).astype(int)
    return X, y


def test_separable_training_accuracy(rng):
    X, y = separable(rng)
    forest = fit(X, y, ForestConfig(n_trees=25, seed=1))
    assert np.mean(forest.predict(X) == y) >= 0.99


def test_single_sample():
    forest = fit(np.array([[3.0, 4.0]]), [1], ForestConfig(n_trees=5), n_classes=3)
    cls, votes = predict(forest, [0.0, 0.0])
    assert cls == 1 and votes.tolist() == [0.0, 1.0, 0.0]


def test_determinism_by_serialization(tmp_path, rng):
    X, y = separable(rng)
    for name in ("a", "b"):
        save_forest(fit(X, y, ForestConfig(n_trees=10, seed=7)), tmp_path / name)
    assert (tmp_path / "a").read_bytes() == (tmp_path / "b").read_bytes()
    save_forest(fit(X, y, ForestConfig(n_trees=10, seed=8)), tmp_path / "c")
    assert (tmp_path / "a").read_bytes() != (tmp_path / "c").read_bytes()


def test_leaf_counts_cover_bootstrap_once(rng):
    X, y = separable(rng, 120)
    cfg = ForestConfig(n_trees=6, seed=3, max_depth=4)
    forest = fit(X, y, cfg)
    for tree, child in zip(forest.trees, np.random.SeedSequence(cfg.seed).spawn(cfg.n_trees)):
        idx = np.random.default_rng(child).integers(0, len(X), size=len(X))
        leaves = tree.apply(X[idx])
        assert np.all(tree.feature[leaves] == -1)
        for leaf in np.unique(leaves):
            assert np.array_equal(tree.counts[leaf], np.bincount(y[idx][leaves == leaf], minlength=2))
        assert tree.counts[tree.feature == -1].sum() == len(idx)


def stump(cls_left, cls_right):
    counts = np.array([[0, 0], [1, 0], [0, 1]], dtype=np.uint32)
    if cls_left == 1:
        counts[[1, 2]] = counts[[2, 1]]
    return Tree(np.array([0, -1, -1], np.int32), np.array([0.0, 0, 0]), np.array([1, -1, -1], np.int32),
                np.array([2, -1, -1], np.int32), counts)


def test_vote_rules():
    forest = Forest([stump(0, 1), stump(1, 0)], 2, 1)
    cls, votes = forest.predict_one([-1.0])
    assert cls == 0 and votes.tolist() == [0.5, 0.5]
    agree = Forest([stump(0, 1)] * 3, 2, 1)
    assert agree.predict_one([5.0]) == (1, pytest.approx(np.array([0.0, 1.0])))
    single = Forest([stump(1, 0)], 2, 1)
    X = np.array([[-1.0], [1.0]])
    assert np.array_equal(single.predict(X), single.trees[0].predict(X))


def test_predict_is_pure(rng):
    X, y = separable(rng)
    forest = fit(X, y, ForestConfig(n_trees=5))
    assert np.array_equal(forest.votes(X), forest.votes(X))


def test_errors(tmp_path, rng):
    with pytest.raises(EmptyDataset):
        fit(np.zeros((0, 3)), [])
    with pytest.raises(DimensionMismatch):
        fit(np.zeros((3, 2)), [0, 1])
    X, y = separable(rng)
    forest = fit(X, y, ForestConfig(n_trees=3))
    with pytest.raises(DimensionMismatch):
        forest.predict(np.zeros((1, 3)))
    with pytest.raises(ValueError):
        ForestConfig(n_trees=0)
    with pytest.raises(ValueError):
        fit(X, y, ForestConfig(features_per_split=5))


def test_forest_file_round_trip(tmp_path, rng):
    X, y = separable(rng)
    forest = fit(X, y, ForestConfig(n_trees=4), class_names=["neg", "pos"])
    save_forest(forest, tmp_path / "f.tlrf")
    back = load_forest(tmp_path / "f.tlrf")
    assert back.class_names == ["neg", "pos"]
    assert np.array_equal(back.votes(X), forest.votes(X))
    save_forest(back, tmp_path / "g.tlrf")
    raw = (tmp_path / "f.tlrf").read_bytes()
    assert raw == (tmp_path / "g.tlrf").read_bytes()
    (tmp_path / "t").write_bytes(raw[:-3])
    with pytest.raises(Truncated):
        load_forest(tmp_path / "t")
    (tmp_path / "m").write_bytes(b"NOPE" + raw[4:])
    with pytest.raises(BadMagic):
        load_forest(tmp_path / "m")
