"""Piecewise-linear model tree in the M5 family.

Growth: greedy standard-deviation-reduction splits; a node becomes a leaf
when a further split would leave a child with fewer than min_leaf rows or
when its label std falls below 5% of the root's. Every surviving node gets
a least-squares linear model over all features (intercept-only fallback when
the regression is singular). Pruning collapses a subtree when the node's own
model has no worse adjusted error than the subtree. Leaf models are then
smoothed along the path to the root with Quinlan's blend
(n * child + k * parent) / (n + k), default k = 15.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..dataset import Dataset, FeatureSchema
from ..errors import ValidationError

STD_STOP_FRACTION = 0.05
# Adjusted-error multiplier when a node has no more rows than parameters.
_OVERFIT_PENALTY = 1e6


@dataclass
class LinearModel:
    coef: np.ndarray
    intercept: float
    fallback: bool = False

    def predict(self, X: np.ndarray) -> np.ndarray:
        return X @ self.coef + self.intercept

    @property
    def n_params(self) -> int:
        return 1 if self.fallback else self.coef.shape[0] + 1


@dataclass
class MtNode:
    n_samples: int
    feature: int = -1
    threshold: float = 0.0
    left: "MtNode | None" = None
    right: "MtNode | None" = None
    model: LinearModel | None = None
    smoothed: LinearModel | None = None

    @property
    def is_leaf(self) -> bool:
        return self.feature < 0


def _fit_linear(X: np.ndarray, y: np.ndarray) -> LinearModel:
    """Least squares over all features; mean-only model when singular."""
    n, d = X.shape
    design = np.hstack([X, np.ones((n, 1))])
    if n >= d + 1:
        beta, _, rank, _ = np.linalg.lstsq(design, y, rcond=None)
        if rank == d + 1 and np.all(np.isfinite(beta)):
            return LinearModel(coef=beta[:-1], intercept=float(beta[-1]))
    return LinearModel(coef=np.zeros(d), intercept=float(y.mean()), fallback=True)


def _mean_abs_error(model: LinearModel, X: np.ndarray, y: np.ndarray) -> float:
    return float(np.mean(np.abs(model.predict(X) - y)))


def _adjusted(err: float, n: int, n_params: int) -> float:
    if n > n_params:
        return err * (n + n_params) / (n - n_params)
    return err * _OVERFIT_PENALTY


def _best_sdr_split(X: np.ndarray, y: np.ndarray, min_leaf: int):
    """Exhaustive SDR split search; ties go to the lowest feature, then the
    lowest threshold. Returns (feature, threshold) or None."""
    n, d = X.shape
    parent_sd = float(y.std())
    best = None
    best_sdr = 0.0
    for j in range(d):
        order = np.argsort(X[:, j], kind="stable")
        xs = X[order, j]
        ys = y[order]
        # candidate boundary after position k (1-based count on the left)
        csum = np.cumsum(ys)
        csq = np.cumsum(ys**2)
        total = csum[-1]
        total_sq = csq[-1]
        for k in range(min_leaf, n - min_leaf + 1):
            if xs[k - 1] >= xs[k]:
                continue
            mean_l = csum[k - 1] / k
            var_l = max(csq[k - 1] / k - mean_l**2, 0.0)
            n_r = n - k
            mean_r = (total - csum[k - 1]) / n_r
            var_r = max((total_sq - csq[k - 1]) / n_r - mean_r**2, 0.0)
            sdr = parent_sd - (k * np.sqrt(var_l) + n_r * np.sqrt(var_r)) / n
            if sdr > best_sdr:
                best_sdr = sdr
                best = (j, 0.5 * (xs[k - 1] + xs[k]))
    return best


@dataclass
class ModelTree:
    root: MtNode
    feature_schema: FeatureSchema
    min_leaf: int
    smoothing: float
    root_std: float
    fallback_leaves: int = 0
    hyperparameters: dict = field(default_factory=dict)
    seed: int = 0
    train_group: str = ""

    algorithm = "model_tree"

    def predict_matrix(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        out = np.empty(X.shape[0], dtype=np.float64)

        def route(node: MtNode, idx: np.ndarray) -> None:
            if node.is_leaf:
                out[idx] = node.smoothed.predict(X[idx])
                return
            go_left = X[idx, node.feature] < node.threshold
            route(node.left, idx[go_left])
            route(node.right, idx[~go_left])

        route(self.root, np.arange(X.shape[0]))
        return out


def count_leaves(tree: ModelTree) -> int:
    def walk(node: MtNode) -> int:
        if node.is_leaf:
            return 1
        return walk(node.left) + walk(node.right)

    return walk(tree.root)


def decision_features(tree: ModelTree) -> set[str]:
    """Names of the features appearing in split decisions."""
    names = tree.feature_schema.names
    used: set[str] = set()

    def walk(node: MtNode) -> None:
        if node.is_leaf:
            return
        used.add(names[node.feature])
        walk(node.left)
        walk(node.right)

    walk(tree.root)
    return used


def _grow(X, y, min_leaf, root_std, depth_budget=None) -> MtNode:
    node = MtNode(n_samples=X.shape[0])
    if X.shape[0] < 2 * min_leaf or float(y.std()) < STD_STOP_FRACTION * root_std:
        return node
    split = _best_sdr_split(X, y, min_leaf)
    if split is None:
        return node
    j, thr = split
    mask = X[:, j] < thr
    node.feature = j
    node.threshold = thr
    node.left = _grow(X[mask], y[mask], min_leaf, root_std)
    node.right = _grow(X[~mask], y[~mask], min_leaf, root_std)
    return node


def _fit_models_and_prune(node: MtNode, X, y) -> float:
    """Post-order: attach linear models, collapse subtrees that do not beat
    the node's own model on adjusted error. Returns the subtree's adjusted
    error after pruning."""
    node.model = _fit_linear(X, y)
    own = _adjusted(_mean_abs_error(node.model, X, y), node.n_samples, node.model.n_params)
    if node.is_leaf:
        return own
    mask = X[:, node.feature] < node.threshold
    err_l = _fit_models_and_prune(node.left, X[mask], y[mask])
    err_r = _fit_models_and_prune(node.right, X[~mask], y[~mask])
    n_l = node.left.n_samples
    n_r = node.right.n_samples
    subtree = (n_l * err_l + n_r * err_r) / (n_l + n_r)
    if own <= subtree:
        node.feature = -1
        node.left = None
        node.right = None
        return own
    return subtree


def _smooth(node: MtNode, path: list[MtNode], k: float) -> int:
    """Blend each leaf model with its ancestors' models; returns fallback count."""
    if node.is_leaf:
        coef = node.model.coef.copy()
        intercept = node.model.intercept
        below = node
        for parent in reversed(path):
            n = below.n_samples
            coef = (n * coef + k * parent.model.coef) / (n + k)
            intercept = (n * intercept + k * parent.model.intercept) / (n + k)
            below = parent
        node.smoothed = LinearModel(coef=coef, intercept=float(intercept), fallback=node.model.fallback)
        return int(node.model.fallback)
    path.append(node)
    count = _smooth(node.left, path, k) + _smooth(node.right, path, k)
    path.pop()
    return count


def model_tree_fit(
    train: Dataset,
    min_leaf: int = 4,
    *,
    smoothing: float = 15.0,
    seed: int = 0,
) -> ModelTree:
    """Grow, prune, and smooth a model tree on the training set.

    smoothing is Quinlan's k; 0 disables the blend and leaves the raw
    least-squares leaf models in place. seed is accepted for contract
    uniformity; construction is fully deterministic.
    """
    if train.n_rows < 1:
        raise ValidationError("cannot fit on an empty dataset")
    if min_leaf < 1:
        raise ValidationError(f"min_leaf must be >= 1, got {min_leaf}")
    X = np.asarray(train.X, dtype=np.float64)
    y = np.asarray(train.y, dtype=np.float64)
    root_std = float(y.std())
    root = _grow(X, y, min_leaf, root_std)
    _fit_models_and_prune(root, X, y)
    if smoothing > 0.0:
        fallbacks = _smooth(root, [], smoothing)
    else:
        fallbacks = 0

        def copy_leaf(node: MtNode) -> None:
            nonlocal fallbacks
            if node.is_leaf:
                node.smoothed = node.model
                fallbacks += int(node.model.fallback)
                return
            copy_leaf(node.left)
            copy_leaf(node.right)

        copy_leaf(root)
    return ModelTree(
        root=root,
        feature_schema=train.schema,
        min_leaf=min_leaf,
        smoothing=smoothing,
        root_std=root_std,
        fallback_leaves=fallbacks,
        hyperparameters={"min_leaf": min_leaf, "smoothing": smoothing},
        seed=seed,
        train_group=train.provenance,
    )
