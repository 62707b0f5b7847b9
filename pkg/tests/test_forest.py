"""Forest training, voting, serialization, and the CART split rules."""

import numpy as np
import pytest

import oracles
from structcd import (
    ChangeForestClassifier,
    DecisionTree,
    DegenerateTrainingError,
    Forest,
    MeMap,
    NsciMap,
    ShapeMismatchError,
    load_forest,
    predict,
    predict_batch,
    predict_map,
    predict_tree,
    save_forest,
    train,
)
from structcd.forest import LEAF


def leaf_tree(cls, n_features=4):
    return DecisionTree(
        np.array([LEAF], dtype=np.uint16),
        np.array([0.0]),
        np.array([0], dtype=np.uint32),
        np.array([0], dtype=np.uint32),
        np.array([cls], dtype=np.uint8),
        n_features=n_features,
    )


def stump(feature, threshold, left_cls, right_cls, n_features=4):
    return DecisionTree(
        np.array([feature, LEAF, LEAF], dtype=np.uint16),
        np.array([threshold, 0.0, 0.0]),
        np.array([1, 0, 0], dtype=np.uint32),
        np.array([2, 0, 0], dtype=np.uint32),
        np.array([0, left_cls, right_cls], dtype=np.uint8),
        n_features=n_features,
    )


def blobs(seed, n_per_class=100, separation=10.0):
    """Two well-separated Gaussian blobs in the 4-D feature space."""
    rng = np.random.default_rng(seed)
    a = rng.normal(0.0, 1.0, size=(n_per_class, 4))
    b = rng.normal(separation, 1.0, size=(n_per_class, 4))
    X = np.vstack([a, b])
    y = np.concatenate([np.zeros(n_per_class, int), np.ones(n_per_class, int)])
    return X, y


def brute_force_vote(forest, x):
    """Independent majority vote: count matches per class, argmax, tie -> 0."""
    votes = {0: 0, 1: 0}
    for tree in forest.trees:
        votes[predict_tree(tree, x)] += 1
    winner = max((1, 0), key=lambda c: votes[c])  # scanning 1 first ...
    if votes[0] == votes[1]:
        winner = 0  # ... makes the explicit tie rule do the work
    return winner, votes


class TestPredictTree:
    def test_single_leaf(self):
        tree = leaf_tree(1)
        for x in ([0, 0, 0, 0], [9, -9, 1e6, 0.3]):
            assert predict_tree(tree, x) == 1

    def test_stump_routing(self):
        tree = stump(0, 0.5, left_cls=1, right_cls=0)
        assert predict_tree(tree, [0.2, 0, 0, 0]) == 1
        assert predict_tree(tree, [0.5, 0, 0, 0]) == 0  # left iff strictly less
        assert predict_tree(tree, [0.9, 0, 0, 0]) == 0

    def test_dimension_mismatch(self):
        with pytest.raises(ShapeMismatchError):
            predict_tree(leaf_tree(0), [1.0, 2.0])

    def test_memorization_recalls_training_labels(self):
        rng = np.random.default_rng(0)
        X = rng.random((10, 4))
        y = np.array([0, 1, 0, 1, 1, 0, 0, 1, 0, 1])
        forest = train(X, y, trees=1, mtry=4, max_depth=64, seed=3)
        # an unlimited tree reaches pure leaves, so it recalls exactly the
        # samples its bootstrap actually contains (bagging means the tree
        # never saw the rest)
        boot_rng = np.random.default_rng(np.random.SeedSequence([3, 0]))
        seen = np.unique(boot_rng.integers(0, 10, size=10))
        assert len(seen) >= 5  # sanity: the bootstrap covers a good chunk
        got = [predict_tree(forest.trees[0], X[i]) for i in seen]
        assert got == [int(y[i]) for i in seen]

    def test_tree_validation_rejects_bad_children(self):
        with pytest.raises(ValueError):
            DecisionTree(
                np.array([0], dtype=np.uint16),
                np.array([0.5]),
                np.array([7], dtype=np.uint32),
                np.array([1], dtype=np.uint32),
                np.array([0], dtype=np.uint8),
                n_features=4,
            )


class TestPredict:
    def test_unanimous(self):
        forest = Forest(tuple(leaf_tree(1) for _ in range(5)), mtry=2)
        cls, votes = predict(forest, [0, 0, 0, 0])
        assert cls == 1
        assert votes == {0: 0, 1: 5}

    def test_majority(self):
        forest = Forest((leaf_tree(1), leaf_tree(1), leaf_tree(0)), mtry=2)
        assert predict(forest, [0, 0, 0, 0])[0] == 1

    def test_tie_goes_to_unchanged(self):
        forest = Forest((leaf_tree(0), leaf_tree(1)), mtry=2)
        cls, votes = predict(forest, [0, 0, 0, 0])
        assert cls == 0
        assert votes == {0: 1, 1: 1}

    def test_vote_counts_always_sum_to_k(self):
        X, y = blobs(1)
        forest = train(X, y, trees=11, seed=5)
        rng = np.random.default_rng(2)
        for _ in range(50):
            x = rng.normal(5.0, 5.0, size=4)
            cls, votes = predict(forest, x)
            assert votes[0] + votes[1] == forest.k
            assert cls in (0, 1)

    def test_matches_brute_force_vote(self):
        rng = np.random.default_rng(3)
        for seed in range(5):
            X, y = blobs(seed, n_per_class=30, separation=2.0)  # noisy overlap
            forest = train(X, y, trees=9, seed=seed)
            for _ in range(40):
                x = rng.normal(1.0, 2.0, size=4)
                assert predict(forest, x) == brute_force_vote(forest, x)

    def test_batch_agrees_with_scalar_path(self):
        X, y = blobs(4, separation=3.0)
        forest = train(X, y, trees=15, seed=1)
        queries = np.random.default_rng(5).normal(1.5, 3.0, size=(200, 4))
        batch = predict_batch(forest, queries)
        scalar = np.array([predict(forest, q)[0] for q in queries])
        assert np.array_equal(batch, scalar)


class TestTrain:
    def test_blob_holdout_accuracy(self):
        X, y = blobs(10)
        X_hold, y_hold = blobs(11)
        forest = train(X, y, trees=25, seed=7)
        accuracy = (predict_batch(forest, X_hold) == y_hold).mean()
        assert accuracy >= 0.99

    def test_deterministic_given_seed(self):
        X, y = blobs(12, separation=2.0)
        assert train(X, y, trees=8, seed=9) == train(X, y, trees=8, seed=9)

    def test_seed_changes_forest(self):
        X, y = blobs(13, separation=2.0)
        assert train(X, y, trees=8, seed=1) != train(X, y, trees=8, seed=2)

    def test_single_class_rejected(self):
        X = np.random.default_rng(6).random((20, 4))
        with pytest.raises(DegenerateTrainingError):
            train(X, np.zeros(20, int), trees=3)

    def test_empty_set_rejected(self):
        with pytest.raises(ValueError, match="empty"):
            train(np.empty((0, 4)), np.empty(0, int), trees=3)

    def test_non_binary_labels_rejected(self):
        X = np.random.default_rng(7).random((4, 4))
        with pytest.raises(ValueError):
            train(X, np.array([0, 1, 2, 0]), trees=3)

    def test_non_finite_features_rejected(self):
        X = np.ones((4, 4))
        X[2, 1] = np.nan
        with pytest.raises(ValueError):
            train(X, np.array([0, 1, 0, 1]), trees=3)

    def test_mtry_default_is_sqrt_d(self):
        X, y = blobs(14, n_per_class=20)
        assert train(X, y, trees=2).mtry == 2  # ceil(sqrt(4))

    def test_mtry_out_of_range(self):
        X, y = blobs(15, n_per_class=10)
        with pytest.raises(ValueError):
            train(X, y, trees=2, mtry=5)

    def test_bootstrap_coverage_at_k50(self):
        # the documented per-tree stream: SeedSequence([seed, tree index])
        n, k, seed = 200, 50, 21
        covered = np.zeros(n, dtype=bool)
        for i in range(k):
            rng = np.random.default_rng(np.random.SeedSequence([seed, i]))
            covered[rng.integers(0, n, size=n)] = True
        assert covered.mean() >= 0.95

    def test_min_leaf_respected(self):
        X, y = blobs(16, n_per_class=50, separation=1.0)
        forest = train(X, y, trees=5, min_leaf=10, seed=2)
        # every split must leave >= 10 samples per side, so no leaf can sit
        # deeper than log2(100/10) splits; check depth stays small
        for tree in forest.trees:
            depths = {0: 0}
            max_depth = 0
            for idx in range(tree.node_count):
                if tree.feature[idx] != LEAF:
                    for child in (tree.left[idx], tree.right[idx]):
                        depths[int(child)] = depths[idx] + 1
                        max_depth = max(max_depth, depths[idx] + 1)
            assert max_depth <= 5

    def test_monotone_transform_invariance(self):
        X, y = blobs(17, n_per_class=40, separation=1.5)
        transformed = X.copy()
        transformed[:, 2] = transformed[:, 2] ** 3  # strictly increasing
        plain = train(X, y, trees=1, seed=11)
        warped = train(transformed, y, trees=1, seed=11)
        got_plain = predict_batch(plain, X)
        got_warped = predict_batch(warped, transformed)
        assert np.array_equal(got_plain, got_warped)

    def test_gini_split_is_locally_optimal(self):
        # with mtry = d the root split must beat every candidate threshold
        # on every feature, per the brute-force impurity oracle
        X, y = blobs(18, n_per_class=25, separation=1.0)
        forest = train(X, y, trees=1, mtry=4, max_depth=1, seed=4)
        tree = forest.trees[0]
        assert tree.feature[0] != LEAF
        rng = np.random.default_rng(np.random.SeedSequence([4, 0]))
        bootstrap = rng.integers(0, 50, size=50)
        Xb, yb = X[bootstrap], y[bootstrap]
        best = oracles.gini_split_reference(
            Xb[:, int(tree.feature[0])], yb, float(tree.threshold[0])
        )
        for f in range(4):
            values = np.unique(Xb[:, f])
            for lo, hi in zip(values[:-1], values[1:]):
                candidate = oracles.gini_split_reference(Xb[:, f], yb, (lo + hi) / 2)
                assert best <= candidate + 1e-12


class TestPredictMap:
    def _maps(self, seed=0, size=6):
        rng = np.random.default_rng(seed)
        r = rng.uniform(-1, 1, (size, size))
        a = rng.normal(size=(size, size))
        b = rng.normal(size=(size, size))
        me = rng.uniform(0, 4, (size, size))
        return NsciMap(r, a, b), MeMap(me)

    def test_single_leaf_flags_everything(self):
        nsci_map, me_map = self._maps()
        forest = Forest((leaf_tree(1),), mtry=1)
        mask = predict_map(forest, nsci_map, me_map)
        assert mask.changed_count() == 36

    def test_deterministic(self):
        nsci_map, me_map = self._maps(1)
        X, y = blobs(19)
        forest = train(X, y, trees=7, seed=3)
        first = predict_map(forest, nsci_map, me_map)
        second = predict_map(forest, nsci_map, me_map)
        assert np.array_equal(first.labels, second.labels)

    def test_dimension_mismatch(self):
        nsci_map, _ = self._maps(2, size=6)
        _, me_map = self._maps(3, size=5)
        forest = Forest((leaf_tree(0),), mtry=1)
        with pytest.raises(ShapeMismatchError):
            predict_map(forest, nsci_map, me_map)


class TestSerialization:
    def test_round_trip_is_bit_exact(self, tmp_path):
        X, y = blobs(20, separation=2.0)
        forest = train(X, y, trees=12, seed=13)
        path = tmp_path / "model.sdrf"
        save_forest(forest, path)
        first = path.read_bytes()
        loaded = load_forest(path)
        assert loaded == forest
        save_forest(loaded, path)
        assert path.read_bytes() == first

    def test_loaded_model_predicts_identically(self, tmp_path):
        X, y = blobs(21, separation=2.0)
        forest = train(X, y, trees=6, seed=1)
        save_forest(forest, tmp_path / "m.sdrf")
        loaded = load_forest(tmp_path / "m.sdrf")
        queries = np.random.default_rng(9).normal(1, 3, size=(100, 4))
        assert np.array_equal(
            predict_batch(forest, queries), predict_batch(loaded, queries)
        )

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "junk.sdrf"
        path.write_bytes(b"NOPE" + b"\x00" * 32)
        with pytest.raises(ValueError, match="not an SDRF"):
            load_forest(path)

    def test_truncated_file_rejected(self, tmp_path):
        X, y = blobs(22, n_per_class=20)
        forest = train(X, y, trees=3, seed=2)
        path = tmp_path / "model.sdrf"
        save_forest(forest, path)
        blob = path.read_bytes()
        path.write_bytes(blob[: len(blob) - 7])
        with pytest.raises(ValueError, match="truncated"):
            load_forest(path)

    def test_trailing_bytes_rejected(self, tmp_path):
        X, y = blobs(23, n_per_class=20)
        forest = train(X, y, trees=2, seed=2)
        path = tmp_path / "model.sdrf"
        save_forest(forest, path)
        path.write_bytes(path.read_bytes() + b"x")
        with pytest.raises(ValueError, match="trailing"):
            load_forest(path)


class TestEstimator:
    def test_fit_predict(self):
        X, y = blobs(24)
        clf = ChangeForestClassifier(trees=10, seed=5).fit(X, y)
        assert (clf.predict(X) == y).mean() > 0.98
        assert clf.forest_.k == 10

    def test_requires_fit(self):
        from sklearn.exceptions import NotFittedError

        with pytest.raises(NotFittedError):
            ChangeForestClassifier().predict(np.zeros((1, 4)))

    def test_get_params_round_trip(self):
        clf = ChangeForestClassifier(trees=3, max_depth=5)
        params = clf.get_params()
        assert params["trees"] == 3 and params["max_depth"] == 5
