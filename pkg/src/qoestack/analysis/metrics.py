"""Accuracy metrics and the repeated-experiment evaluation protocol."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from ..errors import ProtocolError, UndefinedMetricError, ValidationError

CI_Z = 1.96  # two-sided 95%


def r_squared(y, y_hat, kind: str = "pearson") -> float:
    """Accuracy as R^2.

    kind="pearson" (default) is the squared Pearson correlation between
    labels and predictions, invariant under affine rescaling of either
    vector. kind="determination" is the classic 1 - SSE/SST.
    """
    y = np.asarray(y, dtype=np.float64)
    y_hat = np.asarray(y_hat, dtype=np.float64)
    if y.shape != y_hat.shape or y.ndim != 1:
        raise ValidationError(f"shape mismatch: {y.shape} vs {y_hat.shape}")
    if y.shape[0] < 2:
        raise ValidationError("need at least 2 points")
    yc = y - y.mean()
    sst = float(yc @ yc)
    if sst == 0.0:
        raise UndefinedMetricError("labels have zero variance")
    if kind == "determination":
        resid = y - y_hat
        return 1.0 - float(resid @ resid) / sst
    if kind != "pearson":
        raise ValidationError(f"unknown R^2 kind {kind!r}")
    hc = y_hat - y_hat.mean()
    ssp = float(hc @ hc)
    if ssp == 0.0:
        raise UndefinedMetricError("predictions have zero variance")
    r = float(yc @ hc) / np.sqrt(sst * ssp)
    return r * r


def mae(y, y_hat) -> float:
    """Mean absolute difference between labels and predictions."""
    y = np.asarray(y, dtype=np.float64)
    y_hat = np.asarray(y_hat, dtype=np.float64)
    if y.shape != y_hat.shape or y.ndim != 1 or y.shape[0] < 1:
        raise ValidationError(f"shape mismatch: {y.shape} vs {y_hat.shape}")
    return float(np.mean(np.abs(y - y_hat)))


@dataclass(frozen=True)
class MetricReport:
    """Mean with a 95% CI half-width, the `mean(half_width)` table notation."""

    metric: str
    mean: float
    ci_half_width: float | None
    n_repetitions: int

    def __str__(self) -> str:
        if self.ci_half_width is None:
            return f"{self.metric}={self.mean:.4f}(n/a)"
        return f"{self.metric}={self.mean:.4f}({self.ci_half_width:.4f})"


def _report(metric: str, samples: np.ndarray) -> MetricReport:
    n = samples.shape[0]
    half = float(CI_Z * samples.std(ddof=1) / np.sqrt(n)) if n > 1 else None
    return MetricReport(metric=metric, mean=float(samples.mean()), ci_half_width=half, n_repetitions=n)


def repeated_protocol(
    experiment: Callable[[int], tuple[float, float]],
    n: int,
    base_seed: int = 0,
) -> tuple[MetricReport, MetricReport]:
    """Run a seeded experiment n times (seeds base_seed..base_seed+n-1).

    experiment(seed) must return (r2, mae). Any failing repetition aborts
    with the offending seed identified.
    """
    if n < 2:
        raise ValidationError(f"need at least 2 repetitions, got {n}")
    r2s = np.empty(n)
    maes = np.empty(n)
    for i in range(n):
        seed = base_seed + i
        try:
            r2s[i], maes[i] = experiment(seed)
        except Exception as exc:
            raise ProtocolError(f"repetition with seed {seed} failed: {exc}") from exc
    return _report("R2", r2s), _report("MAE", maes)
