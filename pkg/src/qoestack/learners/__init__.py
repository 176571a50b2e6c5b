"""Three regressors behind one fit/predict contract.

All learners consume the same Dataset and expose predict through the same
call, which is what lets base and local models of different algorithm types
be stacked interchangeably.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..dataset import Dataset, FeatureVector
from ..errors import SchemaError, ValidationError
from .gbt import DecisionTree, GbtModel, fit_gbt, gbt_build_tree
from .mlp import AdamState, MlpModel, fit_mlp, loss_and_gradients, train_epoch
from .model_tree import (
    LinearModel,
    ModelTree,
    MtNode,
    count_leaves,
    decision_features,
    model_tree_fit,
)

__all__ = [
    "Algorithm",
    "RegressorSpec",
    "fit",
    "predict",
    "DecisionTree",
    "GbtModel",
    "fit_gbt",
    "gbt_build_tree",
    "AdamState",
    "MlpModel",
    "fit_mlp",
    "loss_and_gradients",
    "train_epoch",
    "LinearModel",
    "ModelTree",
    "MtNode",
    "count_leaves",
    "decision_features",
    "model_tree_fit",
]


class Algorithm(str, enum.Enum):
    GBT = "gbt"
    MLP = "mlp"
    MODEL_TREE = "model_tree"


GBT_DEFAULTS = {
    "learning_rate": 0.004,
    "n_rounds": 2000,
    "max_depth": 4,
    "subsample": 0.5,
    "colsample_bytree": 1.0,
    "reg_lambda": 1.0,
    "min_child_weight": 1.0,
}

MLP_DEFAULTS = {
    "learning_rate": 0.001,
    "epochs": 500,
    "batch_size": 32,
    "dropout": 0.3,
    "hidden_sizes": (32, 64),
}

MODEL_TREE_DEFAULTS = {
    "min_leaf": 4,
    "smoothing": 15.0,
}

_DEFAULTS = {
    Algorithm.GBT: GBT_DEFAULTS,
    Algorithm.MLP: MLP_DEFAULTS,
    Algorithm.MODEL_TREE: MODEL_TREE_DEFAULTS,
}

_RANGES = {
    "learning_rate": (lambda v: 0 < v <= 2, "in (0, 2]"),
    "n_rounds": (lambda v: v >= 0 and int(v) == v, ">= 0 integer"),
    "max_depth": (lambda v: 1 <= v <= 32 and int(v) == v, "integer in [1, 32]"),
    "subsample": (lambda v: 0 < v <= 1, "in (0, 1]"),
    "colsample_bytree": (lambda v: 0 < v <= 1, "in (0, 1]"),
    "reg_lambda": (lambda v: v >= 0, ">= 0"),
    "min_child_weight": (lambda v: v >= 0, ">= 0"),
    "epochs": (lambda v: v >= 1 and int(v) == v, ">= 1 integer"),
    "batch_size": (lambda v: v >= 1 and int(v) == v, ">= 1 integer"),
    "dropout": (lambda v: 0 <= v < 1, "in [0, 1)"),
    "hidden_sizes": (
        lambda v: len(v) >= 1 and all(int(s) == s and s >= 1 for s in v),
        "non-empty positive sizes",
    ),
    "min_leaf": (lambda v: v >= 1 and int(v) == v, ">= 1 integer"),
    "smoothing": (lambda v: v >= 0, ">= 0"),
}


@dataclass(frozen=True)
class RegressorSpec:
    """Algorithm choice plus hyperparameter overrides and a training seed."""

    algorithm: Algorithm
    hyperparameters: dict = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        algorithm = Algorithm(self.algorithm)
        object.__setattr__(self, "algorithm", algorithm)
        known = _DEFAULTS[algorithm]
        for name, value in self.hyperparameters.items():
            if name not in known:
                raise ValidationError(
                    f"unknown hyperparameter {name!r} for {algorithm.value}; "
                    f"known: {sorted(known)}"
                )
            ok, describe = _RANGES[name]
            if not ok(value):
                raise ValidationError(f"hyperparameter {name}={value!r} must be {describe}")

    def resolved(self) -> dict:
        merged = dict(_DEFAULTS[self.algorithm])
        merged.update(self.hyperparameters)
        return merged

    def with_seed(self, seed: int) -> "RegressorSpec":
        return RegressorSpec(self.algorithm, dict(self.hyperparameters), seed)


def fit(spec: RegressorSpec, train: Dataset):
    """Train a model per the spec; deterministic given (spec.seed, train)."""
    if train.n_rows < 1:
        raise ValidationError("cannot fit on an empty dataset")
    params = spec.resolved()
    if spec.algorithm is Algorithm.GBT:
        return fit_gbt(train, seed=spec.seed, **params)
    if spec.algorithm is Algorithm.MLP:
        params["hidden_sizes"] = tuple(params["hidden_sizes"])
        return fit_mlp(train, seed=spec.seed, **params)
    return model_tree_fit(
        train, params["min_leaf"], smoothing=params["smoothing"], seed=spec.seed
    )


def _as_matrix(model, rows) -> np.ndarray:
    if isinstance(rows, Dataset):
        if rows.schema.names != model.feature_schema.names:
            missing = [n for n in model.feature_schema.names if n not in rows.schema.names]
            surplus = [n for n in rows.schema.names if n not in model.feature_schema.names]
            detail = []
            if missing:
                detail.append(f"missing {missing}")
            if surplus:
                detail.append(f"unexpected {surplus}")
            if not detail:
                detail.append(f"order differs: {list(rows.schema.names)}")
            raise SchemaError(f"rows do not conform to model schema: {'; '.join(detail)}")
        return rows.X
    if isinstance(rows, np.ndarray):
        X = rows
    else:  # sequence of FeatureVector
        vectors: Sequence[FeatureVector] = rows
        X = np.asarray([v.values for v in vectors], dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != len(model.feature_schema):
        raise SchemaError(
            f"expected rows of width {len(model.feature_schema)}, got shape {X.shape}"
        )
    return X


def predict(model, rows) -> np.ndarray:
    """Model inference on a Dataset, a matrix, or a list of FeatureVector."""
    out = model.predict_matrix(_as_matrix(model, rows))
    if not np.all(np.isfinite(out)):
        raise ValidationError("model produced non-finite predictions")
    return out
