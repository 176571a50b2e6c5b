"""Evaluation metrics, distribution testing, and model attribution."""

from .ks import FeatureKs, KsResult, kolmogorov_sf, ks_feature_screen, ks_two_sample
from .metrics import MetricReport, mae, r_squared, repeated_protocol
from .treeshap import ShapReport, ShapSummaryRow, shap_summary, tree_shap

__all__ = [
    "FeatureKs",
    "KsResult",
    "kolmogorov_sf",
    "ks_feature_screen",
    "ks_two_sample",
    "MetricReport",
    "mae",
    "r_squared",
    "repeated_protocol",
    "ShapReport",
    "ShapSummaryRow",
    "shap_summary",
    "tree_shap",
]
