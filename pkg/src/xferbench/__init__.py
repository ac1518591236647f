"""Desk-scale transfer-learning study harness.

Structured-prediction losses and codecs, task evaluation metrics,
appearance-based domain distances, synthetic multi-domain toy tasks with
hand-gradient linear models, the transfer-chain protocol, and the
meta-analysis that turns raw chain results into factor-of-influence tables.
"""

from xferbench.core import (
    Box,
    DepthGrid,
    FeatureSet,
    KeypointInstance,
    LabelGrid,
    TaskType,
    box_iou,
)

__all__ = [
    "Box",
    "DepthGrid",
    "FeatureSet",
    "KeypointInstance",
    "LabelGrid",
    "TaskType",
    "box_iou",
]

__version__ = "0.1.0"
