"""Isolation Forest anomaly scoring.

Scores follow the convention ``0.5 - 2 ** (-E[h(x)] / c(psi))``: benign
points sit near or above zero and isolated points approach -0.5.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .flows import FlowRecord, feature_matrix

EULER_GAMMA = 0.5772156649
FORMAT_VERSION = 1


def c_factor(n: int) -> float:
    """Average path length of an unsuccessful BST search over ``n`` points."""
    if n < 0:
        raise ValueError("n must be non-negative")
    if n <= 1:
        return 0.0
    if n == 2:
        return 1.0
    return 2.0 * (math.log(n - 1) + EULER_GAMMA) - 2.0 * (n - 1) / n


def score_from_path_length(mean_path: float | np.ndarray, psi: int):
    return 0.5 - np.power(2.0, -np.asarray(mean_path, dtype=float) / c_factor(psi))


@dataclass(frozen=True)
class ForestParams:
    n_trees: int = 100
    subsample: int = 256
    seed: int = 0

    def __post_init__(self):
        if self.n_trees < 1:
            raise ValueError("n_trees must be >= 1")
        if self.subsample < 2:
            raise ValueError("subsample must be >= 2")

    @property
    def height_limit(self) -> int:
        return max(1, math.ceil(math.log2(self.subsample)))


@dataclass
class Tree:
    """Array-encoded isolation tree; ``feature[i] == -1`` marks a leaf."""

    feature: np.ndarray
    split: np.ndarray
    left: np.ndarray
    right: np.ndarray
    size: np.ndarray
    depth: np.ndarray

    @property
    def path_length(self) -> np.ndarray:
        return self.depth + np.array([c_factor(int(s)) for s in self.size])

    def to_dict(self) -> dict:
        return {k: getattr(self, k).tolist() for k in ("feature", "split", "left", "right", "size", "depth")}

    @classmethod
    def from_dict(cls, d: dict) -> "Tree":
        return cls(
            feature=np.array(d["feature"], dtype=np.int64),
            split=np.array(d["split"], dtype=float),
            left=np.array(d["left"], dtype=np.int64),
            right=np.array(d["right"], dtype=np.int64),
            size=np.array(d["size"], dtype=np.int64),
            depth=np.array(d["depth"], dtype=np.int64),
        )


def _build_tree(X: np.ndarray, height_limit: int, rng: np.random.Generator) -> Tree:
    feature, split, left, right, size, depth = [], [], [], [], [], []
    stack = [(np.arange(len(X)), 0, -1, False)]
    while stack:
        idx, d, parent, is_right = stack.pop()
        node = len(feature)
        if parent >= 0:
            (right if is_right else left)[parent] = node
        feature.append(-1)
        split.append(0.0)
        left.append(-1)
        right.append(-1)
        size.append(len(idx))
        depth.append(d)
        if d >= height_limit or len(idx) <= 1:
            continue
        sub = X[idx]
        lo, hi = sub.min(axis=0), sub.max(axis=0)
        splittable = np.flatnonzero(hi > lo)
        if splittable.size == 0:
            continue
        q = int(splittable[rng.integers(splittable.size)])
        p = rng.uniform(lo[q], hi[q])
        if p <= lo[q]:  # uniform() may return the lower bound
            p = np.nextafter(lo[q], hi[q])
        go_left = sub[:, q] < p
        feature[node] = q
        split[node] = float(p)
        stack.append((idx[~go_left], d + 1, node, True))
        stack.append((idx[go_left], d + 1, node, False))
    return Tree(
        np.array(feature, dtype=np.int64), np.array(split, dtype=float),
        np.array(left, dtype=np.int64), np.array(right, dtype=np.int64),
        np.array(size, dtype=np.int64), np.array(depth, dtype=np.int64),
    )


@dataclass
class ForestModel:
    trees: list[Tree]
    params: ForestParams
    feature_names: tuple[str, ...] = ()
    train_min: np.ndarray = field(default_factory=lambda: np.empty(0))
    train_max: np.ndarray = field(default_factory=lambda: np.empty(0))

    def __post_init__(self):
        self._leaf_values = [t.path_length for t in self.trees]

    @property
    def n_features(self) -> int:
        return len(self.train_min)

    def path_lengths(self, X: np.ndarray) -> np.ndarray:
        """Mean path length E[h(x)] over trees for each row of ``X``."""
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != self.n_features:
            raise ValueError(f"expected {self.n_features} features, got shape {X.shape}")
        total = np.zeros(len(X))
        rows = np.arange(len(X))
        for tree, leaf_value in zip(self.trees, self._leaf_values):
            node = np.zeros(len(X), dtype=np.int64)
            active = tree.feature[node] >= 0
            while active.any():
                n = node[active]
                go_left = X[rows[active], tree.feature[n]] < tree.split[n]
                node[active] = np.where(go_left, tree.left[n], tree.right[n])
                active = tree.feature[node] >= 0
            total += leaf_value[node]
        return total / len(self.trees)

    def score_matrix(self, X: np.ndarray) -> np.ndarray:
        if len(X) == 0:
            return np.empty(0)
        return score_from_path_length(self.path_lengths(X), self.params.subsample)

    def to_dict(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "params": asdict(self.params),
            "feature_names": list(self.feature_names),
            "train_stats": {"min": self.train_min.tolist(), "max": self.train_max.tolist()},
            "trees": [t.to_dict() for t in self.trees],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ForestModel":
        version = d.get("format_version")
        if version != FORMAT_VERSION:
            raise ValueError(f"unsupported model format version {version!r}")
        return cls(
            trees=[Tree.from_dict(t) for t in d["trees"]],
            params=ForestParams(**d["params"]),
            feature_names=tuple(d["feature_names"]),
            train_min=np.array(d["train_stats"]["min"], dtype=float),
            train_max=np.array(d["train_stats"]["max"], dtype=float),
        )

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path) -> "ForestModel":
        return cls.from_dict(json.loads(Path(path).read_text()))


def fit_matrix(X: np.ndarray, params: ForestParams = ForestParams(), feature_names=()) -> ForestModel:
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or len(X) == 0:
        raise ValueError("empty training set")
    lo, hi = X.min(axis=0), X.max(axis=0)
    if not np.any(hi > lo):
        raise ValueError("no splittable feature: all training features are constant")
    psi = min(params.subsample, len(X))
    if psi < 2:
        raise ValueError("need at least 2 training rows")
    params = ForestParams(params.n_trees, psi, params.seed)
    trees = []
    for i in range(params.n_trees):
        rng = np.random.default_rng([params.seed, i])
        sample = X[rng.choice(len(X), size=psi, replace=False)]
        trees.append(_build_tree(sample, params.height_limit, rng))
    return ForestModel(trees, params, tuple(feature_names), lo, hi)


def fit_forest(train: Sequence[FlowRecord], params: ForestParams = ForestParams(), feature_names=()) -> ForestModel:
    """Fit on benign flows; ``subsample`` shrinks to the training size when smaller."""
    if not train:
        raise ValueError("empty training set")
    return fit_matrix(feature_matrix(train), params, feature_names)


def score(model: ForestModel, x: FlowRecord) -> float:
    return float(model.score_matrix(np.array([x.features()], dtype=float))[0])


def score_batch(model: ForestModel, xs: Sequence[FlowRecord]) -> list[float]:
    if not xs:
        return []
    return model.score_matrix(feature_matrix(xs)).tolist()
