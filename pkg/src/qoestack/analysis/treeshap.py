"""Exact per-feature attribution for the boosted-tree model (TreeSHAP).

Path-dependent variant: each tree's conditional expectations are taken under
its own training covers, so a feature absent from a subset falls back to the
cover-weighted average over both branches. Per-tree Shapley values are
computed in polynomial time with the extend/unwind path algorithm, summed
over the ensemble, and scaled by the learning rate. For every row,
base_value + sum(phi) equals the model prediction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..dataset import Dataset, FeatureSchema
from ..errors import UnsupportedModelError, ValidationError
from ..learners.gbt import DecisionTree, GbtModel

# Path element layout: [feature, zero_fraction, one_fraction, weight]
_D, _Z, _O, _W = 0, 1, 2, 3


def _extend(path: list[list[float]], pz: float, po: float, pi: int) -> list[list[float]]:
    out = [row.copy() for row in path]
    out.append([pi, pz, po, 1.0 if not path else 0.0])
    length = len(out)
    for i in range(length - 2, -1, -1):
        out[i + 1][_W] += po * out[i][_W] * (i + 1) / length
        out[i][_W] = pz * out[i][_W] * (length - 1 - i) / length
    return out


def _unwind(path: list[list[float]], i0: int) -> list[list[float]]:
    length = len(path)
    one = path[i0][_O]
    zero = path[i0][_Z]
    out = [row.copy() for row in path[: length - 1]]
    n = path[length - 1][_W]
    for j in range(length - 2, -1, -1):
        if one != 0.0:
            t = out[j][_W]
            out[j][_W] = n * length / ((j + 1) * one)
            n = t - out[j][_W] * zero * (length - 1 - j) / length
        else:
            out[j][_W] = out[j][_W] * length / (zero * (length - 1 - j))
    for j in range(i0, length - 1):
        out[j][_D] = path[j + 1][_D]
        out[j][_Z] = path[j + 1][_Z]
        out[j][_O] = path[j + 1][_O]
    return out


def _unwound_weight_sum(path: list[list[float]], i0: int) -> float:
    return sum(row[_W] for row in _unwind(path, i0))


def _tree_phi(tree: DecisionTree, x: np.ndarray, phi: np.ndarray) -> None:
    feature = tree.feature
    threshold = tree.threshold
    left = tree.left
    right = tree.right
    value = tree.value
    cover = tree.cover

    def recurse(node: int, path: list[list[float]], pz: float, po: float, pi: int) -> None:
        path = _extend(path, pz, po, pi)
        if feature[node] < 0:
            leaf_value = value[node]
            for i0 in range(1, len(path)):
                w = _unwound_weight_sum(path, i0)
                phi[int(path[i0][_D])] += w * (path[i0][_O] - path[i0][_Z]) * leaf_value
            return
        split = int(feature[node])
        if x[split] < threshold[node]:
            hot, cold = int(left[node]), int(right[node])
        else:
            hot, cold = int(right[node]), int(left[node])
        iz = 1.0
        io = 1.0
        for k, row in enumerate(path):
            if int(row[_D]) == split:
                iz, io = row[_Z], row[_O]
                path = _unwind(path, k)
                break
        parent_cover = cover[node]
        recurse(hot, path, iz * cover[hot] / parent_cover, io, split)
        recurse(cold, path, iz * cover[cold] / parent_cover, 0.0, split)

    recurse(0, [], 1.0, 1.0, -1)


@dataclass(frozen=True)
class ShapReport:
    """Per-row attributions (rows x features) plus the shared base value."""

    phi: np.ndarray
    base_value: float
    feature_values: np.ndarray
    schema: FeatureSchema

    @property
    def n_rows(self) -> int:
        return self.phi.shape[0]

    def predictions(self) -> np.ndarray:
        """Reconstructed model output: base_value + row-sum of attributions."""
        return self.base_value + self.phi.sum(axis=1)


def tree_shap(model: GbtModel, rows) -> ShapReport:
    """Attribution of every prediction to the input features.

    Only defined for the boosted-tree model; rows may be a Dataset with the
    model's schema or a plain matrix.
    """
    if not isinstance(model, GbtModel):
        raise UnsupportedModelError(
            f"tree_shap needs a boosted-tree model, got {type(model).__name__}"
        )
    if isinstance(rows, Dataset):
        if rows.schema.names != model.feature_schema.names:
            raise ValidationError(
                f"rows schema {list(rows.schema.names)} does not match the model's "
                f"{list(model.feature_schema.names)}"
            )
        X = rows.X
    else:
        X = np.asarray(rows, dtype=np.float64)
    n, d = X.shape
    if d != len(model.feature_schema):
        raise ValidationError(f"expected {len(model.feature_schema)} columns, got {d}")

    phi = np.zeros((n, d), dtype=np.float64)
    row_phi = np.empty(d, dtype=np.float64)
    base_value = model.base_prediction
    lr = model.learning_rate
    for tree in model.trees:
        base_value += lr * tree.root_expectation()
        for i in range(n):
            row_phi[:] = 0.0
            _tree_phi(tree, X[i], row_phi)
            phi[i] += lr * row_phi
    return ShapReport(
        phi=phi, base_value=float(base_value), feature_values=X.copy(), schema=model.feature_schema
    )


@dataclass(frozen=True)
class ShapSummaryRow:
    feature: str
    mean_abs_phi: float
    dominant_sign: str  # "+", "-", or "0"


def shap_summary(report: ShapReport) -> list[ShapSummaryRow]:
    """Features ranked by mean |phi|, with the sign of the value-attribution
    correlation (does a larger feature value push the prediction up or down)."""
    if report.n_rows < 1:
        raise ValidationError("empty attribution report")
    means = np.mean(np.abs(report.phi), axis=0)
    signs = []
    for j in range(report.phi.shape[1]):
        v = report.feature_values[:, j]
        p = report.phi[:, j]
        vc = v - v.mean()
        pc = p - p.mean()
        denom = np.sqrt((vc @ vc) * (pc @ pc))
        corr = 0.0 if denom == 0.0 else float(vc @ pc) / denom
        signs.append("+" if corr > 0 else "-" if corr < 0 else "0")
    order = np.argsort(-means, kind="stable")
    return [
        ShapSummaryRow(
            feature=report.schema.names[j],
            mean_abs_phi=float(means[j]),
            dominant_sign=signs[j],
        )
        for j in order
    ]
