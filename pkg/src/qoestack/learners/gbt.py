"""Gradient-boosted regression trees with second-order greedy splits.

Squared-error objective: gradient = prediction - label, hessian = 1. Each
tree is grown depth-limited on a per-tree row subsample; split gain is
GL^2/(HL+l) + GR^2/(HR+l) - G^2/(H+l) with L2 leaf regularization l, and
leaf values are -G/(H+l). The ensemble predicts
base_prediction + learning_rate * sum(tree leaf values).

The tree builder and tree walker are numba-compiled; everything they do is
plain loop arithmetic on float64 arrays, deterministic for a given seed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numba import njit

from ..dataset import Dataset, FeatureSchema
from ..errors import ValidationError

_MAX_FLOAT = np.inf


@njit(cache=True)
def _build_tree_arrays(X, g, h, rows, feat_ids, max_depth, reg_lambda, min_child_weight):
    """Grow one depth-limited tree on the given row subset.

    Returns parallel node arrays (feature, threshold, left, right, value,
    cover) in preorder. feature == -1 marks a leaf. Left branch takes
    x[feature] < threshold. Ties in split gain resolve to the lowest feature
    id, then the lowest threshold, by strict-improvement scanning order.
    """
    max_nodes = 2 ** (max_depth + 1) - 1
    feature = np.full(max_nodes, -1, np.int64)
    threshold = np.zeros(max_nodes, np.float64)
    left = np.full(max_nodes, -1, np.int64)
    right = np.full(max_nodes, -1, np.int64)
    value = np.zeros(max_nodes, np.float64)
    cover = np.zeros(max_nodes, np.float64)

    idx = rows.copy()
    n_nodes = 1
    stack = [(0, 0, 0, idx.shape[0])]

    while stack:
        node, depth, lo, hi = stack.pop()
        seg = idx[lo:hi]
        n_seg = hi - lo
        G = 0.0
        H = 0.0
        for i in range(n_seg):
            G += g[seg[i]]
            H += h[seg[i]]
        cover[node] = float(n_seg)
        value[node] = -G / (H + reg_lambda)

        if depth >= max_depth or n_seg < 2:
            continue

        best_gain = 0.0
        best_feat = -1
        best_thr = 0.0
        parent_score = G * G / (H + reg_lambda)
        xv = np.empty(n_seg, np.float64)
        for jj in range(feat_ids.shape[0]):
            j = feat_ids[jj]
            for i in range(n_seg):
                xv[i] = X[seg[i], j]
            order = np.argsort(xv)
            gl = 0.0
            hl = 0.0
            for k in range(n_seg - 1):
                r = seg[order[k]]
                gl += g[r]
                hl += h[r]
                if xv[order[k]] >= xv[order[k + 1]]:
                    continue
                hr = H - hl
                if hl < min_child_weight or hr < min_child_weight:
                    continue
                gr = G - gl
                gain = gl * gl / (hl + reg_lambda) + gr * gr / (hr + reg_lambda) - parent_score
                if gain > best_gain:
                    best_gain = gain
                    best_feat = j
                    best_thr = 0.5 * (xv[order[k]] + xv[order[k + 1]])
        if best_feat < 0:
            continue

        # Stable partition of seg into (x < thr | x >= thr).
        tmp = seg.copy()
        w = 0
        for i in range(n_seg):
            if X[tmp[i], best_feat] < best_thr:
                seg[w] = tmp[i]
                w += 1
        mid = w
        for i in range(n_seg):
            if X[tmp[i], best_feat] >= best_thr:
                seg[mid] = tmp[i]
                mid += 1

        feature[node] = best_feat
        threshold[node] = best_thr
        left[node] = n_nodes
        right[node] = n_nodes + 1
        stack.append((n_nodes + 1, depth + 1, lo + w, hi))
        stack.append((n_nodes, depth + 1, lo, lo + w))
        n_nodes += 2

    return (
        feature[:n_nodes].copy(),
        threshold[:n_nodes].copy(),
        left[:n_nodes].copy(),
        right[:n_nodes].copy(),
        value[:n_nodes].copy(),
        cover[:n_nodes].copy(),
    )


@njit(cache=True)
def _tree_predict_arrays(X, feature, threshold, left, right, value):
    n = X.shape[0]
    out = np.empty(n, np.float64)
    for i in range(n):
        node = 0
        while feature[node] >= 0:
            if X[i, feature[node]] < threshold[node]:
                node = left[node]
            else:
                node = right[node]
        out[i] = value[node]
    return out


@dataclass(frozen=True)
class DecisionTree:
    """Binary regression tree stored as parallel node arrays (preorder).

    feature[i] == -1 marks a leaf; left takes x[feature] < threshold.
    cover[i] is the number of training rows routed through node i.
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    cover: np.ndarray

    @property
    def n_nodes(self) -> int:
        return int(self.feature.shape[0])

    def predict(self, X: np.ndarray) -> np.ndarray:
        return _tree_predict_arrays(
            np.ascontiguousarray(X, dtype=np.float64),
            self.feature,
            self.threshold,
            self.left,
            self.right,
            self.value,
        )

    def max_depth_used(self) -> int:
        depth = np.zeros(self.n_nodes, dtype=np.int64)
        deepest = 0
        for node in range(self.n_nodes):
            if self.feature[node] >= 0:
                depth[self.left[node]] = depth[node] + 1
                depth[self.right[node]] = depth[node] + 1
            deepest = max(deepest, int(depth[node]))
        return deepest

    def root_expectation(self) -> float:
        """Cover-weighted mean leaf value (the tree's output expectation)."""
        leaves = self.feature < 0
        total = self.cover[0]
        if total <= 0:
            return 0.0
        return float(np.dot(self.value[leaves], self.cover[leaves]) / total)

    def used_features(self) -> set[int]:
        return {int(f) for f in self.feature if f >= 0}


def gbt_build_tree(
    X: np.ndarray,
    gradients: np.ndarray,
    hessians: np.ndarray,
    *,
    max_depth: int = 4,
    reg_lambda: float = 1.0,
    min_child_weight: float = 1.0,
    subsample: float = 1.0,
    colsample_bytree: float = 1.0,
    rng: np.random.Generator | None = None,
) -> DecisionTree:
    """Build one boosting tree from per-row gradients and hessians.

    Row subsampling (without replacement) and per-tree column sampling are
    drawn from rng; with the defaults all rows and features are used.
    Degenerate inputs (all gradients zero, single row) give a one-leaf tree.
    """
    X = np.ascontiguousarray(X, dtype=np.float64)
    g = np.ascontiguousarray(gradients, dtype=np.float64)
    h = np.ascontiguousarray(hessians, dtype=np.float64)
    n, d = X.shape
    if g.shape != (n,) or h.shape != (n,):
        raise ValidationError(f"gradients/hessians must have shape ({n},)")

    if subsample < 1.0 or colsample_bytree < 1.0:
        if rng is None:
            raise ValidationError("subsampling requires an rng")
    rows = np.arange(n, dtype=np.int64)
    if subsample < 1.0:
        m = max(1, int(subsample * n))
        rows = np.sort(rng.choice(n, size=m, replace=False)).astype(np.int64)
    feat_ids = np.arange(d, dtype=np.int64)
    if colsample_bytree < 1.0:
        k = max(1, int(colsample_bytree * d))
        feat_ids = np.sort(rng.choice(d, size=k, replace=False)).astype(np.int64)

    arrays = _build_tree_arrays(
        X, g, h, rows, feat_ids, max_depth, float(reg_lambda), float(min_child_weight)
    )
    return DecisionTree(*arrays)


@dataclass
class GbtModel:
    """Trained boosted-tree ensemble."""

    base_prediction: float
    trees: list[DecisionTree]
    learning_rate: float
    feature_schema: FeatureSchema
    hyperparameters: dict = field(default_factory=dict)
    seed: int = 0
    train_group: str = ""
    train_rmse: np.ndarray | None = None

    algorithm = "gbt"

    def predict_matrix(self, X: np.ndarray) -> np.ndarray:
        X = np.ascontiguousarray(X, dtype=np.float64)
        out = np.full(X.shape[0], self.base_prediction, dtype=np.float64)
        for tree in self.trees:
            out += self.learning_rate * tree.predict(X)
        return out


def fit_gbt(
    train: Dataset,
    *,
    learning_rate: float = 0.004,
    n_rounds: int = 2000,
    max_depth: int = 4,
    subsample: float = 0.5,
    colsample_bytree: float = 1.0,
    reg_lambda: float = 1.0,
    min_child_weight: float = 1.0,
    seed: int = 0,
) -> GbtModel:
    if train.n_rows < 1:
        raise ValidationError("cannot fit on an empty dataset")
    rng = np.random.default_rng(seed)
    X = np.ascontiguousarray(train.X, dtype=np.float64)
    y = train.y
    base = float(y.mean())
    pred = np.full(train.n_rows, base, dtype=np.float64)
    ones = np.ones(train.n_rows, dtype=np.float64)
    trees: list[DecisionTree] = []
    rmse = np.empty(n_rounds, dtype=np.float64)
    for t in range(n_rounds):
        grad = pred - y
        tree = gbt_build_tree(
            X,
            grad,
            ones,
            max_depth=max_depth,
            reg_lambda=reg_lambda,
            min_child_weight=min_child_weight,
            subsample=subsample,
            colsample_bytree=colsample_bytree,
            rng=rng,
        )
        trees.append(tree)
        pred += learning_rate * tree.predict(X)
        rmse[t] = np.sqrt(np.mean((pred - y) ** 2))
    return GbtModel(
        base_prediction=base,
        trees=trees,
        learning_rate=learning_rate,
        feature_schema=train.schema,
        hyperparameters={
            "learning_rate": learning_rate,
            "n_rounds": n_rounds,
            "max_depth": max_depth,
            "subsample": subsample,
            "colsample_bytree": colsample_bytree,
            "reg_lambda": reg_lambda,
            "min_child_weight": min_child_weight,
        },
        seed=seed,
        train_group=train.provenance,
        train_rmse=rmse,
    )
