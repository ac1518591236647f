"""Shared domain types and geometry primitives.

Everything here is an immutable value after construction and safe to share
across threads. Boxes use continuous (x, y, w, h) coordinates with a
top-left anchor, matching the center/size/offset decomposition used by the
detection codec.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

# Default sentinel for "not a real class" pixels in label grids.
DEFAULT_IGNORE_ID = np.iinfo(np.int64).max


class TaskType(enum.Enum):
    SEMANTIC_SEGMENTATION = "semantic_segmentation"
    OBJECT_DETECTION = "object_detection"
    KEYPOINT_DETECTION = "keypoint_detection"
    DEPTH_ESTIMATION = "depth_estimation"

    @property
    def higher_is_better(self) -> bool:
        """Metric direction: depth uses RMSE (lower-better), the rest don't."""
        return self is not TaskType.DEPTH_ESTIMATION


@dataclass(frozen=True)
class Box:
    """Axis-aligned box, top-left anchor, strictly positive extents."""

    x: float
    y: float
    w: float
    h: float
    class_id: int = 0
    score: float = 1.0

    def __post_init__(self):
        if not (self.w > 0 and self.h > 0):
            raise ValueError(f"box extents must be positive, got w={self.w}, h={self.h}")
        if not (0.0 <= self.score <= 1.0):
            raise ValueError(f"score must be in [0, 1], got {self.score}")

    @property
    def center(self) -> tuple[float, float]:
        return (self.x + self.w / 2.0, self.y + self.h / 2.0)

    @property
    def area(self) -> float:
        return self.w * self.h


def box_iou(a: Box, b: Box) -> float:
    """Intersection-over-union of two boxes; 0 when disjoint."""
    ix = min(a.x + a.w, b.x + b.w) - max(a.x, b.x)
    iy = min(a.y + a.h, b.y + b.h) - max(a.y, b.y)
    if ix <= 0 or iy <= 0:
        return 0.0
    inter = ix * iy
    return inter / (a.area + b.area - inter)


@dataclass(frozen=True)
class LabelGrid:
    """Per-pixel class ids with one reserved ignore/background sentinel."""

    labels: np.ndarray  # (H, W) integer
    ignore_id: int = DEFAULT_IGNORE_ID

    def __post_init__(self):
        lab = np.asarray(self.labels)
        if lab.ndim != 2:
            raise ValueError(f"labels must be 2-D, got shape {lab.shape}")
        object.__setattr__(self, "labels", lab)

    @property
    def height(self) -> int:
        return self.labels.shape[0]

    @property
    def width(self) -> int:
        return self.labels.shape[1]


@dataclass(frozen=True)
class DepthGrid:
    """Per-pixel non-negative depth with a validity mask."""

    depth: np.ndarray  # (H, W) float
    valid: np.ndarray | None = None  # (H, W) bool; None means all valid

    def __post_init__(self):
        d = np.asarray(self.depth, dtype=np.float64)
        if d.ndim != 2:
            raise ValueError(f"depth must be 2-D, got shape {d.shape}")
        v = self.valid
        v = np.ones(d.shape, dtype=bool) if v is None else np.asarray(v, dtype=bool)
        if v.shape != d.shape:
            raise ValueError("validity mask shape must match depth shape")
        if np.any(d[v] < 0):
            raise ValueError("depth must be non-negative wherever valid")
        object.__setattr__(self, "depth", d)
        object.__setattr__(self, "valid", v)

    @property
    def height(self) -> int:
        return self.depth.shape[0]

    @property
    def width(self) -> int:
        return self.depth.shape[1]


@dataclass(frozen=True)
class KeypointInstance:
    """K keypoints (x, y, visible) with the owning box and instance score."""

    keypoints: np.ndarray  # (K, 3): x, y, visibility in {0, 1}
    box: Box
    score: float = 1.0

    def __post_init__(self):
        kp = np.asarray(self.keypoints, dtype=np.float64)
        if kp.ndim != 2 or kp.shape[1] != 3:
            raise ValueError(f"keypoints must have shape (K, 3), got {kp.shape}")
        if not np.all(np.isin(kp[:, 2], (0.0, 1.0))):
            raise ValueError("visibility flags must be 0 or 1")
        object.__setattr__(self, "keypoints", kp)

    @property
    def num_keypoints(self) -> int:
        return self.keypoints.shape[0]

    @property
    def visible(self) -> np.ndarray:
        return self.keypoints[:, 2] > 0


@dataclass(frozen=True)
class FeatureSet:
    """A dataset's identity, domain label, and per-image embedding vectors."""

    dataset_id: str
    domain_label: str
    vectors: np.ndarray  # (N, d) float32
    sample_seed: int = 0

    def __post_init__(self):
        v = np.asarray(self.vectors, dtype=np.float32)
        if v.ndim != 2 or v.shape[0] < 1:
            raise ValueError(f"vectors must be a non-empty (N, d) array, got shape {v.shape}")
        object.__setattr__(self, "vectors", v)

    def __len__(self) -> int:
        return self.vectors.shape[0]

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]
