"""Two-sample Kolmogorov-Smirnov testing and the feature screen.

The statistic is the sup-norm distance between the two empirical CDFs. The
p-value uses the asymptotic Kolmogorov distribution evaluated at
sqrt(n1*n2/(n1+n2)) * D via the alternating series, truncated at 100 terms.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..dataset import Dataset, FeatureKind
from ..errors import SchemaError, ValidationError

_SERIES_TERMS = 100
# Below this argument the 100-term series has not converged; the survival
# function there is 1.0 to double precision anyway.
_MIN_SERIES_ARG = 0.2


def kolmogorov_sf(lam: float, terms: int = _SERIES_TERMS) -> float:
    """P(K > lam) for the Kolmogorov distribution: 2 * sum (-1)^(j-1) exp(-2 j^2 lam^2)."""
    if lam <= _MIN_SERIES_ARG:
        return 1.0
    j = np.arange(1, terms + 1, dtype=np.float64)
    total = float(np.sum((-1.0) ** (j - 1) * np.exp(-2.0 * j**2 * lam**2)))
    return min(max(2.0 * total, 0.0), 1.0)


@dataclass(frozen=True)
class KsResult:
    statistic: float
    p_value: float
    n1: int
    n2: int


def ks_two_sample(a, b) -> KsResult:
    """Two-sided KS test between samples a and b."""
    a = np.sort(np.asarray(a, dtype=np.float64))
    b = np.sort(np.asarray(b, dtype=np.float64))
    n1, n2 = a.shape[0], b.shape[0]
    if n1 < 1 or n2 < 1:
        raise ValidationError("both samples must be non-empty")
    pooled = np.concatenate([a, b])
    cdf_a = np.searchsorted(a, pooled, side="right") / n1
    cdf_b = np.searchsorted(b, pooled, side="right") / n2
    d = float(np.max(np.abs(cdf_a - cdf_b)))
    n_eff = n1 * n2 / (n1 + n2)
    p = kolmogorov_sf(np.sqrt(n_eff) * d)
    return KsResult(statistic=d, p_value=p, n1=n1, n2=n2)


@dataclass(frozen=True)
class FeatureKs:
    feature: str
    kind: FeatureKind
    result: KsResult
    specific_candidate: bool


def ks_feature_screen(g0: Dataset, g1: Dataset, alpha: float = 0.01) -> list[FeatureKs]:
    """Per-feature KS test across the two groups.

    Features whose distributions differ significantly (p < alpha) are flagged
    as specific candidates: they describe the group, not the shared viewing
    experience, so a transferable base model should not learn from them.
    """
    if g0.schema.names != g1.schema.names:
        raise SchemaError(
            f"groups must share a schema: {list(g0.schema.names)} vs {list(g1.schema.names)}"
        )
    if not 0.0 < alpha < 1.0:
        raise ValidationError(f"alpha must be in (0, 1), got {alpha}")
    out = []
    for i, (name, kind) in enumerate(g0.schema.entries):
        res = ks_two_sample(g0.X[:, i], g1.X[:, i])
        out.append(
            FeatureKs(feature=name, kind=kind, result=res, specific_candidate=res.p_value < alpha)
        )
    return out
