"""Transferable video-QoE estimation: features, regressors, stacking, analysis.

The workflow this package models: a source node with plenty of rating data
trains a base model on generic playback features only; a target node with a
small, context-specific dataset trains its own model on everything it has;
the base model travels as a self-describing JSON document and the two are
combined as a weighted average of predictions. The analysis layer provides
the accuracy protocol (repeated splits with confidence intervals), the
two-sample KS feature screen, and exact TreeSHAP attributions.
"""

__version__ = "0.1.0"

from . import analysis, dataset, learners, stacking, synth

__all__ = ["analysis", "dataset", "learners", "stacking", "synth", "__version__"]
