"""Random forest of CART trees (Gini impurity), written against numpy arrays.

Trees are stored flat, sklearn-style: node i is a split when
``feature[i] >= 0`` (go left when ``x[feature] <= threshold``) and a leaf
otherwise, with per-class training counts in ``counts[i]``.
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import BadMagic, DimensionMismatch, EmptyDataset, Truncated, VersionMismatch

MAGIC = b"TLRF"
VERSION = 1


@dataclass(frozen=True)
class ForestConfig:
    n_trees: int = 100
    max_depth: Optional[int] = None
    min_samples_split: int = 2
    features_per_split: Optional[int] = None  # default ceil(sqrt(d))
    bootstrap: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.n_trees < 1:
            raise ValueError("n_trees must be >= 1")
        if self.min_samples_split < 2:
            raise ValueError("min_samples_split must be >= 2")

    def resolved_features(self, d: int) -> int:
        k = self.features_per_split if self.features_per_split is not None else math.ceil(math.sqrt(d))
        if not 1 <= k <= d:
            raise ValueError(f"features_per_split={k} outside [1, {d}]")
        return k


def gini(counts: np.ndarray) -> np.ndarray:
    """Gini impurity of count vectors along the last axis (0 for empty)."""
    counts = np.asarray(counts, dtype=np.float64)
    n = counts.sum(axis=-1)
    with np.errstate(invalid="ignore", divide="ignore"):
        p = counts / n[..., None]
        g = 1.0 - np.sum(p * p, axis=-1)
    return np.where(n > 0, g, 0.0)


def best_split(X: np.ndarray, y: np.ndarray, features: Sequence[int], n_classes: int
               ) -> Optional[tuple[int, float, float]]:
    """Best (feature, threshold, gain) over midpoints of consecutive distinct values.

    Maximises the decrease from parent Gini to the size-weighted child Gini;
    ties go to the lowest feature index, then the lowest threshold.  None if
    no candidate improves on the parent.
    """
    n = len(y)
    if n < 2:
        return None
    onehot = np.zeros((n, n_classes), dtype=np.float64)
    onehot[np.arange(n), y] = 1.0
    total = onehot.sum(axis=0)
    parent = float(gini(total))
    best: Optional[tuple[int, float, float]] = None
    for f in sorted(features):
        col = X[:, f]
        order = np.argsort(col, kind="stable")
        xs = col[order]
        boundary = np.nonzero(xs[1:] > xs[:-1])[0]  # split after position i
        if boundary.size == 0:
            continue
        left = np.cumsum(onehot[order], axis=0)[boundary]
        right = total - left
        nl = boundary + 1.0
        child = (nl * gini(left) + (n - nl) * gini(right)) / n
        gains = parent - child
        j = int(np.argmax(gains))  # first maximum = lowest threshold
        gain = float(gains[j])
        if gain <= 1e-12:
            continue
        lo, hi = xs[boundary[j]], xs[boundary[j] + 1]
        thr = lo + (hi - lo) / 2.0
        if not lo <= thr < hi:
            thr = lo
        if best is None or gain > best[2] + 1e-12:
            best = (int(f), float(thr), gain)
    return best


@dataclass
class Tree:
    feature: np.ndarray     # int32, -1 for leaves
    threshold: np.ndarray   # float64
    left: np.ndarray        # int32
    right: np.ndarray       # int32
    counts: np.ndarray      # (nodes, n_classes) uint32

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    def apply(self, X: np.ndarray) -> np.ndarray:
        """Leaf index reached by each row."""
        node = np.zeros(len(X), dtype=np.int64)
        active = self.feature[node] >= 0
        while active.any():
            idx = np.nonzero(active)[0]
            nd = node[idx]
            go_left = X[idx, self.feature[nd]] <= self.threshold[nd]
            node[idx] = np.where(go_left, self.left[nd], self.right[nd])
            active = self.feature[node] >= 0
        return node

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.counts[self.apply(np.atleast_2d(X))].argmax(axis=1)


def _grow(X: np.ndarray, y: np.ndarray, n_classes: int, cfg: ForestConfig, k: int,
          rng: np.random.Generator) -> Tree:
    feature, threshold, left, right, counts = [], [], [], [], []

    def new_node(idx: np.ndarray) -> int:
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        counts.append(np.bincount(y[idx], minlength=n_classes))
        return len(feature) - 1

    root = new_node(np.arange(len(y)))
    stack = [(root, np.arange(len(y)), 0)]
    d = X.shape[1]
    while stack:
        node, idx, depth = stack.pop()
        if len(idx) < cfg.min_samples_split or (cfg.max_depth is not None and depth >= cfg.max_depth):
            continue
        if np.count_nonzero(counts[node]) <= 1:
            continue
        cand = rng.choice(d, size=k, replace=False)
        split = best_split(X[idx], y[idx], cand, n_classes)
        if split is None:
            continue
        f, thr, _ = split
        mask = X[idx, f] <= thr
        li, ri = idx[mask], idx[~mask]
        feature[node], threshold[node] = f, thr
        left[node] = new_node(li)
        right[node] = new_node(ri)
        stack.append((right[node], ri, depth + 1))
        stack.append((left[node], li, depth + 1))
    return Tree(np.array(feature, dtype=np.int32), np.array(threshold, dtype=np.float64),
                np.array(left, dtype=np.int32), np.array(right, dtype=np.int32),
                np.array(counts, dtype=np.uint32).reshape(-1, n_classes))


@dataclass
class Forest:
    trees: list[Tree]
    n_classes: int
    n_features: int
    class_names: list[str] = field(default_factory=list)

    def votes(self, X: np.ndarray) -> np.ndarray:
        """Per-class vote fractions, shape (n, n_classes)."""
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if X.shape[1] != self.n_features:
            raise DimensionMismatch(f"forest expects {self.n_features} features, got {X.shape[1]}")
        tally = np.zeros((len(X), self.n_classes), dtype=np.float64)
        rows = np.arange(len(X))
        for tree in self.trees:
            tally[rows, tree.predict(X)] += 1
        return tally / len(self.trees)

    def predict(self, X: np.ndarray) -> np.ndarray:
        """Majority vote; ties toward the lowest class index."""
        return self.votes(X).argmax(axis=1)

    def predict_one(self, x: Sequence[float]) -> tuple[int, np.ndarray]:
        v = self.votes(np.asarray(x, dtype=np.float64)[None])[0]
        return int(v.argmax()), v


def fit(X: np.ndarray, y: Sequence[int], cfg: ForestConfig = ForestConfig(), n_classes: int | None = None,
        class_names: Sequence[str] = ()) -> Forest:
    """Fit one bootstrap-sampled tree per seed drawn from ``cfg.seed``."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if X.ndim != 2 or len(X) == 0:
        raise EmptyDataset("need at least one sample")
    if len(y) != len(X):
        raise DimensionMismatch(f"{len(X)} feature rows but {len(y)} labels")
    n_classes = int(n_classes if n_classes is not None else y.max() + 1)
    k = cfg.resolved_features(X.shape[1])
    trees = []
    for child in np.random.SeedSequence(cfg.seed).spawn(cfg.n_trees):
        rng = np.random.default_rng(child)
        idx = rng.integers(0, len(X), size=len(X)) if cfg.bootstrap else np.arange(len(X))
        trees.append(_grow(X[idx], y[idx], n_classes, cfg, k, rng))
    return Forest(trees, n_classes, X.shape[1], list(class_names))


def predict(forest: Forest, x: Sequence[float]) -> tuple[int, np.ndarray]:
    return forest.predict_one(x)


def save_forest(forest: Forest, path: str | Path) -> None:
    """magic "TLRF" | version | n_classes | n_features | n_trees | n_names, then names, then trees.

    Tree: n_nodes u32, then int32 feature, float64 threshold, int32 left,
    int32 right, uint32 counts (nodes x classes).  Little-endian throughout.
    """
    with open(path, "wb") as fp:
        fp.write(MAGIC + struct.pack("<5I", VERSION, forest.n_classes, forest.n_features, len(forest.trees),
                                     len(forest.class_names)))
        for name in forest.class_names:
            raw = name.encode("utf-8")
            fp.write(struct.pack("<I", len(raw)) + raw)
        for t in forest.trees:
            fp.write(struct.pack("<I", t.n_nodes))
            for arr, dt in ((t.feature, "<i4"), (t.threshold, "<f8"), (t.left, "<i4"), (t.right, "<i4"),
                            (t.counts, "<u4")):
                fp.write(np.ascontiguousarray(arr, dtype=dt).tobytes())


def load_forest(path: str | Path) -> Forest:
    raw = Path(path).read_bytes()
    pos = 0

    def take(n: int) -> bytes:
        nonlocal pos
        if pos + n > len(raw):
            raise Truncated(f"{path}: file ends at byte {len(raw)}, needed {pos + n}")
        out = raw[pos:pos + n]
        pos += n
        return out

    if take(4) != MAGIC:
        raise BadMagic(f"{path}: not a TLRF forest file")
    version, n_classes, n_features, n_trees, n_names = struct.unpack("<5I", take(20))
    if version != VERSION:
        raise VersionMismatch(f"{path}: forest version {version}, reader supports {VERSION}")
    names = [take(struct.unpack("<I", take(4))[0]).decode("utf-8") for _ in range(n_names)]
    trees = []
    for _ in range(n_trees):
        (n,) = struct.unpack("<I", take(4))
        feature = np.frombuffer(take(4 * n), dtype="<i4").astype(np.int32)
        threshold = np.frombuffer(take(8 * n), dtype="<f8").astype(np.float64)
        left = np.frombuffer(take(4 * n), dtype="<i4").astype(np.int32)
        right = np.frombuffer(take(4 * n), dtype="<i4").astype(np.int32)
        counts = np.frombuffer(take(4 * n * n_classes), dtype="<u4").astype(np.uint32).reshape(n, n_classes)
        trees.append(Tree(feature, threshold, left, right, counts))
    return Forest(trees, n_classes, n_features, names)
