"""Portable model documents and convex two-model stacking.

A base model trained on generic features at the source node is exported as a
versioned JSON document (parameters + feature metadata), imported at a target
node whose local schema may add specific features, and combined with the
locally trained model as a weighted average of predictions:

    y' = w0 * base(X restricted to generic features) + (1 - w0) * local(X)

Base documents are structurally prevented from carrying specific-tagged
columns, so nothing content- or context-sensitive leaves the local node.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .dataset import Dataset, FeatureKind, FeatureSchema, Projection, project_features
from .errors import IncompatibleModelError, SchemaError, ValidationError
from .learners import predict
from .learners.gbt import DecisionTree, GbtModel
from .learners.mlp import MlpModel
from .learners.model_tree import LinearModel, ModelTree, MtNode
from .analysis.metrics import mae, r_squared

FORMAT_VERSION = 1
TARGET_SCALE = (0.0, 100.0)


@dataclass(frozen=True)
class ModelDocument:
    """Self-describing serialized model, the unit of transfer between nodes."""

    format_version: int
    algorithm: str
    feature_schema: FeatureSchema
    target_scale: tuple[float, float]
    params: dict
    provenance: str

    def to_dict(self) -> dict:
        return {
            "format_version": self.format_version,
            "algorithm": self.algorithm,
            "feature_schema": [
                {"name": name, "kind": kind.value} for name, kind in self.feature_schema.entries
            ],
            "target_scale": list(self.target_scale),
            "params": self.params,
            "provenance": self.provenance,
        }

    def to_bytes(self) -> bytes:
        return (
            json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"), allow_nan=False)
            + "\n"
        ).encode("utf-8")

    @classmethod
    def from_dict(cls, raw: dict) -> "ModelDocument":
        try:
            schema = FeatureSchema(
                tuple((e["name"], FeatureKind(e["kind"])) for e in raw["feature_schema"])
            )
            return cls(
                format_version=int(raw["format_version"]),
                algorithm=str(raw["algorithm"]),
                feature_schema=schema,
                target_scale=(float(raw["target_scale"][0]), float(raw["target_scale"][1])),
                params=raw["params"],
                provenance=str(raw["provenance"]),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise IncompatibleModelError(f"malformed model document: {exc}") from exc

    @classmethod
    def from_bytes(cls, blob: bytes) -> "ModelDocument":
        try:
            raw = json.loads(blob.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise IncompatibleModelError(f"model document is not valid JSON: {exc}") from exc
        return cls.from_dict(raw)

    def save(self, path: str | Path) -> None:
        path = Path(path)
        tmp = path.with_name(path.name + ".tmp")
        tmp.write_bytes(self.to_bytes())
        tmp.replace(path)

    @classmethod
    def load(cls, path: str | Path) -> "ModelDocument":
        return cls.from_bytes(Path(path).read_bytes())


def _tree_to_params(tree: DecisionTree) -> dict:
    return {
        "feature": tree.feature.tolist(),
        "threshold": tree.threshold.tolist(),
        "left": tree.left.tolist(),
        "right": tree.right.tolist(),
        "value": tree.value.tolist(),
        "cover": tree.cover.tolist(),
    }


def _tree_from_params(raw: dict) -> DecisionTree:
    return DecisionTree(
        feature=np.asarray(raw["feature"], dtype=np.int64),
        threshold=np.asarray(raw["threshold"], dtype=np.float64),
        left=np.asarray(raw["left"], dtype=np.int64),
        right=np.asarray(raw["right"], dtype=np.int64),
        value=np.asarray(raw["value"], dtype=np.float64),
        cover=np.asarray(raw["cover"], dtype=np.float64),
    )


def _mt_node_to_params(node: MtNode) -> dict:
    if node.is_leaf:
        return {
            "n": node.n_samples,
            "coef": node.smoothed.coef.tolist(),
            "intercept": float(node.smoothed.intercept),
            "fallback": bool(node.smoothed.fallback),
        }
    return {
        "n": node.n_samples,
        "feature": int(node.feature),
        "threshold": float(node.threshold),
        "left": _mt_node_to_params(node.left),
        "right": _mt_node_to_params(node.right),
    }


def _mt_node_from_params(raw: dict) -> MtNode:
    if "feature" not in raw:
        model = LinearModel(
            coef=np.asarray(raw["coef"], dtype=np.float64),
            intercept=float(raw["intercept"]),
            fallback=bool(raw["fallback"]),
        )
        return MtNode(n_samples=int(raw["n"]), model=model, smoothed=model)
    return MtNode(
        n_samples=int(raw["n"]),
        feature=int(raw["feature"]),
        threshold=float(raw["threshold"]),
        left=_mt_node_from_params(raw["left"]),
        right=_mt_node_from_params(raw["right"]),
    )


def _model_params(model) -> dict:
    if isinstance(model, GbtModel):
        return {
            "base_prediction": float(model.base_prediction),
            "learning_rate": float(model.learning_rate),
            "trees": [_tree_to_params(t) for t in model.trees],
            "hyperparameters": model.hyperparameters,
            "seed": model.seed,
        }
    if isinstance(model, MlpModel):
        return {
            "layer_sizes": list(model.layer_sizes),
            "weights": [w.tolist() for w in model.weights],
            "biases": [b.tolist() for b in model.biases],
            "input_mean": model.input_mean.tolist(),
            "input_std": model.input_std.tolist(),
            "label_scale": float(model.label_scale),
            "hyperparameters": {
                k: (list(v) if isinstance(v, tuple) else v)
                for k, v in model.hyperparameters.items()
            },
            "seed": model.seed,
        }
    if isinstance(model, ModelTree):
        return {
            "root": _mt_node_to_params(model.root),
            "min_leaf": int(model.min_leaf),
            "smoothing": float(model.smoothing),
            "root_std": float(model.root_std),
            "fallback_leaves": int(model.fallback_leaves),
            "hyperparameters": model.hyperparameters,
            "seed": model.seed,
        }
    raise IncompatibleModelError(f"cannot serialize model of type {type(model).__name__}")


def _model_from_document(doc: ModelDocument):
    p = doc.params
    if doc.algorithm == "gbt":
        return GbtModel(
            base_prediction=float(p["base_prediction"]),
            trees=[_tree_from_params(t) for t in p["trees"]],
            learning_rate=float(p["learning_rate"]),
            feature_schema=doc.feature_schema,
            hyperparameters=p.get("hyperparameters", {}),
            seed=int(p.get("seed", 0)),
            train_group=doc.provenance,
        )
    if doc.algorithm == "mlp":
        return MlpModel(
            layer_sizes=tuple(int(s) for s in p["layer_sizes"]),
            weights=[np.asarray(w, dtype=np.float64) for w in p["weights"]],
            biases=[np.asarray(b, dtype=np.float64) for b in p["biases"]],
            input_mean=np.asarray(p["input_mean"], dtype=np.float64),
            input_std=np.asarray(p["input_std"], dtype=np.float64),
            feature_schema=doc.feature_schema,
            label_scale=float(p["label_scale"]),
            hyperparameters=p.get("hyperparameters", {}),
            seed=int(p.get("seed", 0)),
            train_group=doc.provenance,
        )
    if doc.algorithm == "model_tree":
        return ModelTree(
            root=_mt_node_from_params(p["root"]),
            feature_schema=doc.feature_schema,
            min_leaf=int(p["min_leaf"]),
            smoothing=float(p["smoothing"]),
            root_std=float(p["root_std"]),
            fallback_leaves=int(p.get("fallback_leaves", 0)),
            hyperparameters=p.get("hyperparameters", {}),
            seed=int(p.get("seed", 0)),
            train_group=doc.provenance,
        )
    raise IncompatibleModelError(f"unknown algorithm tag {doc.algorithm!r}")


def export_model(model, as_base: bool = False, provenance: str | None = None) -> ModelDocument:
    """Serialize a trained model; as_base refuses any specific-tagged feature."""
    schema: FeatureSchema = model.feature_schema
    if as_base:
        specific = [n for n, k in schema.entries if k is FeatureKind.SPECIFIC]
        if specific:
            raise IncompatibleModelError(
                f"base export refused: schema carries specific features {specific}"
            )
    return ModelDocument(
        format_version=FORMAT_VERSION,
        algorithm=model.algorithm,
        feature_schema=schema,
        target_scale=TARGET_SCALE,
        params=_model_params(model),
        provenance=model.train_group if provenance is None else provenance,
    )


@dataclass
class ProjectedModel:
    """Imported model that selects its own columns out of a wider local schema."""

    inner: object
    feature_schema: FeatureSchema
    column_index: np.ndarray
    source_schema: FeatureSchema

    @property
    def algorithm(self) -> str:
        return self.inner.algorithm

    @property
    def train_group(self) -> str:
        return self.inner.train_group

    def predict_matrix(self, X: np.ndarray) -> np.ndarray:
        return self.inner.predict_matrix(np.asarray(X, dtype=np.float64)[:, self.column_index])


def import_model(doc: ModelDocument, local_schema: FeatureSchema):
    """Reconstruct a document at a node with the given local schema.

    Every document feature must exist locally (matched by name); prediction
    then projects local rows onto the document's column order automatically.
    """
    if doc.format_version != FORMAT_VERSION:
        raise IncompatibleModelError(
            f"unsupported format_version {doc.format_version}, expected {FORMAT_VERSION}"
        )
    model = _model_from_document(doc)
    local_names = local_schema.names
    missing = [n for n in doc.feature_schema.names if n not in local_names]
    if missing:
        raise IncompatibleModelError(
            f"local schema lacks features required by the document: {missing}"
        )
    index = np.asarray([local_schema.index_of(n) for n in doc.feature_schema.names], dtype=np.int64)
    if len(local_names) == len(index) and np.array_equal(index, np.arange(len(index))):
        return model
    return ProjectedModel(
        inner=model,
        feature_schema=local_schema,
        column_index=index,
        source_schema=doc.feature_schema,
    )


def _transfer_schema(model) -> FeatureSchema:
    return getattr(model, "source_schema", model.feature_schema)


@dataclass(frozen=True)
class StackedModel:
    """Convex combination of a transferred base model and a local model."""

    base: object
    local: object
    w0: float

    def __post_init__(self):
        if not 0.0 <= self.w0 <= 1.0:
            raise ValidationError(f"w0 must lie in [0, 1], got {self.w0}")
        base_names = _transfer_schema(self.base).names
        local_generic = _transfer_schema(self.local).generic_only().names
        positions = []
        for name in base_names:
            if name not in local_generic:
                raise ValidationError(
                    f"base feature {name!r} is not a generic feature of the local model"
                )
            positions.append(local_generic.index(name))
        if positions != sorted(positions):
            raise ValidationError(
                "base features must appear in the same relative order as the local "
                f"generic features; got {list(base_names)} vs {list(local_generic)}"
            )

    @property
    def w1(self) -> float:
        return 1.0 - self.w0


def _aligned_matrix(rows: Dataset, model) -> np.ndarray:
    """Select the model's columns (by name, in model order) from a dataset."""
    wanted = model.feature_schema.names
    have = rows.schema.names
    if wanted == have:
        return rows.X
    missing = [n for n in wanted if n not in have]
    if missing:
        raise SchemaError(f"dataset lacks features {missing} required by the model")
    idx = [rows.schema.index_of(n) for n in wanted]
    return rows.X[:, idx]


def stack_predict(stacked: StackedModel, rows: Dataset) -> np.ndarray:
    """Elementwise w0 * base + (1 - w0) * local on the given rows."""
    base_pred = stacked.base.predict_matrix(_aligned_matrix(rows, stacked.base))
    local_pred = stacked.local.predict_matrix(_aligned_matrix(rows, stacked.local))
    return stacked.w0 * base_pred + stacked.w1 * local_pred


def _weight_grid(step: float) -> list[float]:
    if not 0.0 < step <= 0.5:
        raise ValidationError(f"grid_step must be in (0, 0.5], got {step}")
    k = round(1.0 / step)
    if abs(k * step - 1.0) < 1e-9:
        return [i / k for i in range(k + 1)]
    grid = []
    i = 0
    while i * step < 1.0 - 1e-9:
        grid.append(i * step)
        i += 1
    grid.append(1.0)
    return grid


@dataclass(frozen=True)
class ScanPoint:
    w0: float
    r2: float
    mae: float


@dataclass(frozen=True)
class WeightScan:
    points: tuple[ScanPoint, ...]
    best: ScanPoint


def weight_scan(base, local, test: Dataset, grid_step: float = 0.1) -> WeightScan:
    """Evaluate the stack at w0 = 0, step, ..., 1 on the test set.

    The best point maximizes R^2; exact ties resolve to the lowest w0,
    favoring the local model.
    """
    base_pred = base.predict_matrix(_aligned_matrix(test, base))
    local_pred = local.predict_matrix(_aligned_matrix(test, local))
    points = []
    best = None
    for w0 in _weight_grid(grid_step):
        combined = w0 * base_pred + (1.0 - w0) * local_pred
        point = ScanPoint(w0=w0, r2=r_squared(test.y, combined), mae=mae(test.y, combined))
        points.append(point)
        if best is None or point.r2 > best.r2:
            best = point
    return WeightScan(points=tuple(points), best=best)


@dataclass(frozen=True)
class CrossEvalCell:
    train_group: str
    test_group: str
    r2: float | None
    mae: float | None
    error: str | None = None


@dataclass(frozen=True)
class CrossEvaluation:
    cells: tuple[CrossEvalCell, ...]
    # R^2 drop from the model's own group to each other group (positive =
    # accuracy lost in transfer).
    deltas: dict


def cross_evaluate(
    model, test_sets: Sequence[tuple[str, Dataset]], own_group: str | None = None
) -> CrossEvaluation:
    """Evaluate one model across named test sets; schema problems mark the
    affected cell instead of aborting."""
    train_group = own_group if own_group is not None else model.train_group
    cells = []
    scores: dict[str, float] = {}
    for name, ds in test_sets:
        try:
            pred = model.predict_matrix(_aligned_matrix(ds, model))
            cell = CrossEvalCell(train_group, name, r_squared(ds.y, pred), mae(ds.y, pred))
            scores[name] = cell.r2
        except (SchemaError, ValidationError) as exc:
            cell = CrossEvalCell(train_group, name, None, None, error=str(exc))
        cells.append(cell)
    deltas = {}
    if train_group in scores:
        own = scores[train_group]
        for name, r2 in scores.items():
            if name != train_group:
                deltas[name] = own - r2
    return CrossEvaluation(cells=tuple(cells), deltas=deltas)


def project_for_base(rows: Dataset) -> Dataset:
    """Generic-feature view of a dataset, as shipped to base models."""
    return project_features(rows, Projection.GENERIC_ONLY)
