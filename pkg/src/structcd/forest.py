"""Deterministic random-forest classifier: bagging, CART trees, majority vote.

Each tree is grown on a bootstrap resample (with replacement, same size as
the training set) drawn from its own RNG stream derived from (seed, tree
index), so training is reproducible and independent of the order in which
trees are built. Splits minimize weighted Gini impurity over `mtry` features
drawn uniformly without replacement at every node; candidate thresholds are
the midpoints between consecutive sorted unique feature values, and samples
go left iff feature < threshold. Prediction is a majority vote with ties
broken toward class 0 (unchanged), biasing against false alarms.

Trees are stored as flat node arrays. Internal nodes carry (feature,
threshold, left, right); leaves carry a class and are marked by the feature
sentinel 0xFFFF. The whole forest serializes to the SDRF binary format
documented in `save_forest`.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from .raster import BinaryMask
from .neighborhood import MeMap, NsciMap, feature_image
from .validation import DegenerateTrainingError, ShapeMismatchError, check_finite

LEAF = 0xFFFF
_MAGIC = b"SDRF"
_VERSION = 1
_HEADER = struct.Struct("<4sBIHH")  # magic, version, tree count, mtry, dimension
_NODE = struct.Struct("<HdIIB")  # feature, threshold, left, right, leaf class


@dataclass(frozen=True, eq=False)
class DecisionTree:
    """One CART tree as parallel node arrays, root at index 0.

    ``feature[i] == LEAF`` marks node i as a leaf whose class is
    ``leaf_class[i]``; otherwise node i routes to ``left[i]`` when
    x[feature[i]] < threshold[i] and to ``right[i]`` otherwise.
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    leaf_class: np.ndarray
    n_features: int

    def __post_init__(self):
        feature = np.asarray(self.feature, dtype=np.uint16)
        threshold = np.asarray(self.threshold, dtype=np.float64)
        left = np.asarray(self.left, dtype=np.uint32)
        right = np.asarray(self.right, dtype=np.uint32)
        leaf_class = np.asarray(self.leaf_class, dtype=np.uint8)
        count = feature.shape[0]
        if count == 0:
            raise ValueError("a tree needs at least one node")
        arrays = (feature, threshold, left, right, leaf_class)
        if any(a.shape != (count,) for a in arrays):
            raise ShapeMismatchError("tree node arrays must share one length")
        internal = feature != LEAF
        if internal.any():
            if int(feature[internal].max()) >= self.n_features:
                raise ValueError("split feature index out of range")
            children = np.concatenate([left[internal], right[internal]])
            if int(children.max()) >= count:
                raise ValueError("tree child index out of range")
        if leaf_class.max(initial=0) > 1:
            raise ValueError("leaf classes must be 0 or 1")
        for name, arr in zip(
            ("feature", "threshold", "left", "right", "leaf_class"), arrays
        ):
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)

    @property
    def node_count(self) -> int:
        return self.feature.shape[0]

    def __eq__(self, other) -> bool:
        if not isinstance(other, DecisionTree):
            return NotImplemented
        return self.n_features == other.n_features and all(
            np.array_equal(getattr(self, name), getattr(other, name))
            for name in ("feature", "threshold", "left", "right", "leaf_class")
        )


@dataclass(frozen=True, eq=False)
class Forest:
    """An immutable ensemble of trees over a fixed feature dimensionality."""

    trees: tuple[DecisionTree, ...]
    mtry: int
    seed: int | None = None

    def __post_init__(self):
        trees = tuple(self.trees)
        if not trees:
            raise ValueError("a forest needs at least one tree")
        d = trees[0].n_features
        if any(t.n_features != d for t in trees):
            raise ShapeMismatchError("all trees must share one dimensionality")
        if not 1 <= self.mtry <= d:
            raise ValueError(f"mtry must be in [1, {d}], got {self.mtry}")
        object.__setattr__(self, "trees", trees)

    @property
    def k(self) -> int:
        return len(self.trees)

    @property
    def n_features(self) -> int:
        return self.trees[0].n_features

    def __eq__(self, other) -> bool:
        # seed is provenance, not model state: two forests with identical
        # structure are the same model (and serialize identically).
        if not isinstance(other, Forest):
            return NotImplemented
        return self.mtry == other.mtry and self.trees == other.trees

    def __hash__(self):
        return hash((self.k, self.mtry, self.n_features))


class _TreeBuilder:
    """Accumulates node arrays for one tree during recursive growth."""

    def __init__(self, X, y, rng, mtry, max_depth, min_leaf):
        self.X = X
        self.y = y
        self.rng = rng
        self.mtry = mtry
        self.max_depth = max_depth
        self.min_leaf = min_leaf
        self.feature: list[int] = []
        self.threshold: list[float] = []
        self.left: list[int] = []
        self.right: list[int] = []
        self.leaf_class: list[int] = []

    def _emit(self) -> int:
        self.feature.append(LEAF)
        self.threshold.append(0.0)
        self.left.append(0)
        self.right.append(0)
        self.leaf_class.append(0)
        return len(self.feature) - 1

    def _leaf(self, node: int, ones: int, count: int):
        self.leaf_class[node] = 1 if ones * 2 > count else 0

    def _best_split(self, idx: np.ndarray):
        """(feature, threshold, left mask) minimizing weighted Gini, or None.

        Features are scanned in the drawn order and thresholds in ascending
        order; only a strictly better score displaces the incumbent, so the
        result is deterministic given the RNG stream.
        """
        n = idx.size
        candidates = self.rng.choice(self.X.shape[1], size=self.mtry, replace=False)
        best = None
        best_score = np.inf
        for f in candidates:
            values = self.X[idx, f]
            order = np.argsort(values, kind="stable")
            sorted_values = values[order]
            ones_prefix = np.cumsum(self.y[idx][order])
            # valid split positions: value changes between i and i+1, and
            # both children keep at least min_leaf samples
            n_left = np.arange(1, n)
            cut = sorted_values[:-1] < sorted_values[1:]
            cut &= (n_left >= self.min_leaf) & (n - n_left >= self.min_leaf)
            if not cut.any():
                continue
            ones_left = ones_prefix[:-1]
            ones_right = ones_prefix[-1] - ones_left
            n_right = n - n_left
            p_left = ones_left / n_left
            p_right = ones_right / n_right
            gini = n_left * 2 * p_left * (1 - p_left) + n_right * 2 * p_right * (
                1 - p_right
            )
            gini[~cut] = np.inf
            pos = int(np.argmin(gini))
            score = gini[pos] / n
            if score < best_score:
                best_score = score
                thr = (sorted_values[pos] + sorted_values[pos + 1]) / 2.0
                best = (int(f), float(thr))
        if best is None:
            return None
        f, thr = best
        return f, thr, self.X[idx, f] < thr

    def grow(self, idx: np.ndarray, depth: int) -> int:
        node = self._emit()
        labels = self.y[idx]
        ones = int(labels.sum())
        count = idx.size
        if ones in (0, count) or depth >= self.max_depth or count < 2 * self.min_leaf:
            self._leaf(node, ones, count)
            return node
        split = self._best_split(idx)
        if split is None:
            self._leaf(node, ones, count)
            return node
        f, thr, go_left = split
        self.feature[node] = f
        self.threshold[node] = thr
        self.left[node] = self.grow(idx[go_left], depth + 1)
        self.right[node] = self.grow(idx[~go_left], depth + 1)
        return node

    def build(self, root_idx: np.ndarray) -> DecisionTree:
        self.grow(root_idx, 0)
        return DecisionTree(
            np.array(self.feature, dtype=np.uint16),
            np.array(self.threshold, dtype=np.float64),
            np.array(self.left, dtype=np.uint32),
            np.array(self.right, dtype=np.uint32),
            np.array(self.leaf_class, dtype=np.uint8),
            n_features=self.X.shape[1],
        )


def _check_features(X, name="features") -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ShapeMismatchError(f"{name} must be a 2-D (samples, dims) array")
    check_finite(X, name)
    return X


def train(
    features,
    labels,
    trees: int = 100,
    mtry: int | None = None,
    max_depth: int = 16,
    min_leaf: int = 1,
    seed: int = 0,
) -> Forest:
    """Grow a forest of `trees` bagged CART trees on (features, labels).

    ``features`` is (n, d) float, ``labels`` (n,) in {0, 1}; ``mtry``
    defaults to ceil(sqrt(d)). Each tree draws its bootstrap and all its
    split-feature subsets from an independent stream seeded by (seed, tree
    index), so the same inputs always grow the same forest.
    """
    X = _check_features(features)
    y = np.asarray(labels)
    if y.shape != (X.shape[0],):
        raise ShapeMismatchError("labels must be one per sample")
    if X.shape[0] == 0:
        raise ValueError("empty training set")
    if not np.isin(y, (0, 1)).all():
        raise ValueError("labels must be 0 (unchanged) or 1 (changed)")
    y = y.astype(np.int64)
    if y.min() == y.max():
        raise DegenerateTrainingError(
            f"training set contains only class {int(y[0])}; need both classes"
        )
    d = X.shape[1]
    if mtry is None:
        mtry = math.ceil(math.sqrt(d))
    if not 1 <= mtry <= d:
        raise ValueError(f"mtry must be in [1, {d}], got {mtry}")
    if trees < 1:
        raise ValueError("tree count must be >= 1")
    if max_depth < 1 or min_leaf < 1:
        raise ValueError("max_depth and min_leaf must be >= 1")

    n = X.shape[0]
    grown = []
    for i in range(trees):
        rng = np.random.default_rng(np.random.SeedSequence([seed, i]))
        bootstrap = rng.integers(0, n, size=n)
        builder = _TreeBuilder(X, y, rng, mtry, max_depth, min_leaf)
        grown.append(builder.build(bootstrap))
    return Forest(tuple(grown), mtry=mtry, seed=seed)


def predict_tree(tree: DecisionTree, x) -> int:
    """Root-to-leaf descent for one sample: left iff feature < threshold."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (tree.n_features,):
        raise ShapeMismatchError(
            f"sample has {x.shape} features, tree expects {tree.n_features}"
        )
    node = 0
    # a sound tree's depth never exceeds its node count; the bound turns a
    # cyclic (corrupt) tree into an error instead of a hang
    for _ in range(tree.node_count):
        if tree.feature[node] == LEAF:
            return int(tree.leaf_class[node])
        if x[tree.feature[node]] < tree.threshold[node]:
            node = int(tree.left[node])
        else:
            node = int(tree.right[node])
    raise ValueError("tree descent did not reach a leaf (cyclic node links)")


def _predict_tree_batch(tree: DecisionTree, X: np.ndarray) -> np.ndarray:
    node = np.zeros(X.shape[0], dtype=np.int64)
    pending = np.flatnonzero(tree.feature[node] != LEAF)
    for _ in range(tree.node_count):
        if not pending.size:
            return tree.leaf_class[node].astype(np.int64)
        cur = node[pending]
        go_left = X[pending, tree.feature[cur]] < tree.threshold[cur]
        node[pending] = np.where(go_left, tree.left[cur], tree.right[cur])
        pending = pending[tree.feature[node[pending]] != LEAF]
    if pending.size:
        raise ValueError("tree descent did not reach a leaf (cyclic node links)")
    return tree.leaf_class[node].astype(np.int64)


def predict(forest: Forest, x) -> tuple[int, dict[int, int]]:
    """Majority vote of all trees: (class, per-class vote counts).

    A tied vote (only possible for even k) resolves to class 0.
    """
    ones = sum(predict_tree(tree, x) for tree in forest.trees)
    votes = {0: forest.k - ones, 1: ones}
    return (1 if ones * 2 > forest.k else 0), votes


def predict_batch(forest: Forest, features) -> np.ndarray:
    """Vectorized `predict` over an (n, d) array; returns (n,) classes."""
    X = _check_features(features)
    if X.shape[1] != forest.n_features:
        raise ShapeMismatchError(
            f"samples have {X.shape[1]} features, forest expects {forest.n_features}"
        )
    ones = np.zeros(X.shape[0], dtype=np.int64)
    for tree in forest.trees:
        ones += _predict_tree_batch(tree, X)
    return (ones * 2 > forest.k).astype(np.uint8)


def predict_map(forest: Forest, nsci_map: NsciMap, me_map: MeMap) -> BinaryMask:
    """Classify every pixel of an (r, a, b, ME) feature image into a mask."""
    stacked = feature_image(nsci_map, me_map)
    height, width = stacked.shape[:2]
    classes = predict_batch(forest, stacked.reshape(-1, stacked.shape[-1]))
    return BinaryMask(classes.reshape(height, width))


def save_forest(forest: Forest, path) -> None:
    """Write the SDRF binary model format.

    Layout (little-endian): magic ``SDRF``, version u8 = 1, tree count u32,
    mtry u16, dimensionality u16; then for each tree a node count u32
    followed by its nodes packed as (feature u16, threshold f64, left u32,
    right u32, leaf class u8), 19 bytes each, root first. Leaves store
    feature = 0xFFFF. Loading then saving again reproduces the bytes.
    """
    chunks = [_HEADER.pack(_MAGIC, _VERSION, forest.k, forest.mtry, forest.n_features)]
    for tree in forest.trees:
        chunks.append(struct.pack("<I", tree.node_count))
        chunks.extend(
            _NODE.pack(
                int(tree.feature[i]),
                float(tree.threshold[i]),
                int(tree.left[i]),
                int(tree.right[i]),
                int(tree.leaf_class[i]),
            )
            for i in range(tree.node_count)
        )
    with open(path, "wb") as fh:
        fh.write(b"".join(chunks))


def load_forest(path) -> Forest:
    """Read an SDRF model file written by `save_forest`."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < _HEADER.size or blob[:4] != _MAGIC:
        raise ValueError(f"{path}: not an SDRF model file")
    magic, version, k, mtry, d = _HEADER.unpack_from(blob)
    if version != _VERSION:
        raise ValueError(f"{path}: unsupported SDRF version {version}")
    offset = _HEADER.size
    trees = []
    for _ in range(k):
        if offset + 4 > len(blob):
            raise ValueError(f"{path}: truncated SDRF file")
        (count,) = struct.unpack_from("<I", blob, offset)
        offset += 4
        end = offset + count * _NODE.size
        if count == 0 or end > len(blob):
            raise ValueError(f"{path}: truncated SDRF file")
        nodes = list(_NODE.iter_unpack(blob[offset:end]))
        offset = end
        feature, threshold, left, right, leaf_class = map(np.array, zip(*nodes))
        trees.append(
            DecisionTree(
                feature.astype(np.uint16),
                threshold.astype(np.float64),
                left.astype(np.uint32),
                right.astype(np.uint32),
                leaf_class.astype(np.uint8),
                n_features=d,
            )
        )
    if offset != len(blob):
        raise ValueError(f"{path}: trailing bytes after last tree")
    return Forest(tuple(trees), mtry=mtry)


class ChangeForestClassifier(BaseEstimator, ClassifierMixin):
    """Estimator-style wrapper: fit/predict over (n, d) feature arrays.

    After ``fit``, the grown ensemble is available as ``forest_`` for
    serialization via `save_forest`.
    """

    def __init__(
        self,
        trees: int = 100,
        mtry: int | None = None,
        max_depth: int = 16,
        min_leaf: int = 1,
        seed: int = 0,
    ):
        self.trees = trees
        self.mtry = mtry
        self.max_depth = max_depth
        self.min_leaf = min_leaf
        self.seed = seed

    def fit(self, X, y):
        self.forest_ = train(
            X,
            y,
            trees=self.trees,
            mtry=self.mtry,
            max_depth=self.max_depth,
            min_leaf=self.min_leaf,
            seed=self.seed,
        )
        self.classes_ = np.array([0, 1])
        return self

    def predict(self, X) -> np.ndarray:
        check_is_fitted(self, "forest_")
        return predict_batch(self.forest_, X)
