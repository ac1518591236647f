"""Evaluation metrics for the four task types.

One metric per task type: mean IoU for semantic segmentation, COCO-style
mAP for object detection, AP at 0.5 OKS for keypoint detection, and linear
RMSE (plus the delta < 1.25 accuracy) for depth estimation.

AP uses all-point interpolation (the precision envelope). Classes with no
ground truth and no predictions are excluded from the mean rather than
scored 0 or 1.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from xferbench.core import Box, DepthGrid, KeypointInstance, LabelGrid, TaskType, box_iou

COCO_IOU_THRESHOLDS = tuple(np.arange(0.50, 0.96, 0.05).round(2))


@dataclass(frozen=True)
class MetricValue:
    task_type: TaskType
    value: float

    @property
    def higher_is_better(self) -> bool:
        return self.task_type.higher_is_better


def confusion_matrix(pred: LabelGrid, gt: LabelGrid, num_classes: int) -> np.ndarray:
    """counts[i, j] = pixels with gt class i predicted as j; gt-ignore excluded."""
    if pred.labels.shape != gt.labels.shape:
        raise ValueError(f"shape mismatch: pred {pred.labels.shape} vs gt {gt.labels.shape}")
    keep = gt.labels != gt.ignore_id
    g = gt.labels[keep].astype(np.int64)
    p = pred.labels[keep].astype(np.int64)
    counts = np.bincount(g * num_classes + p, minlength=num_classes * num_classes)
    return counts.reshape(num_classes, num_classes)


def miou_from_confusion(counts: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean IoU over classes present in gt or pred; absent classes are NaN."""
    tp = np.diag(counts).astype(np.float64)
    fp = counts.sum(axis=0) - tp
    fn = counts.sum(axis=1) - tp
    denom = tp + fp + fn
    present = denom > 0
    if not present.any():
        raise ValueError("no evaluable pixels")
    ious = np.full(counts.shape[0], np.nan)
    ious[present] = tp[present] / denom[present]
    return float(np.nanmean(ious)), ious


def mean_iou(pred: LabelGrid, gt: LabelGrid, num_classes: int) -> tuple[MetricValue, np.ndarray]:
    mean, ious = miou_from_confusion(confusion_matrix(pred, gt, num_classes))
    return MetricValue(TaskType.SEMANTIC_SEGMENTATION, mean), ious


def _ap_from_matches(scores: np.ndarray, matched: np.ndarray, num_gt: int) -> float:
    """AP via the precision envelope, given per-detection match flags.

    `scores` and `matched` are aligned; detections must already be in
    descending score order with greedy one-to-one gt matching applied.
    """
    if num_gt == 0:
        return 0.0
    if len(scores) == 0:
        return 0.0
    tp = np.cumsum(matched)
    fp = np.cumsum(~matched)
    recall = tp / num_gt
    precision = tp / (tp + fp)
    # Precision envelope: max precision at recall >= r.
    env = np.maximum.accumulate(precision[::-1])[::-1]
    prev_r = 0.0
    ap = 0.0
    for r, p in zip(recall, env):
        ap += (r - prev_r) * p
        prev_r = r
    return float(ap)


def _greedy_match(
    dets_per_image: list[list],
    gts_per_image: list[list],
    similarity,
    threshold: float,
) -> tuple[np.ndarray, np.ndarray, int]:
    """Greedy match in descending score order; each gt matched at most once.

    `similarity(det, gt)` must return a value comparable to `threshold`.
    Returns (sorted scores, matched flags, total gt count).
    """
    entries = []  # (score, image index, det)
    for i, dets in enumerate(dets_per_image):
        for d in dets:
            entries.append((d.score, i, d))
    entries.sort(key=lambda e: -e[0])
    gt_used = [np.zeros(len(g), dtype=bool) for g in gts_per_image]
    scores = np.array([e[0] for e in entries])
    matched = np.zeros(len(entries), dtype=bool)
    for k, (_, i, det) in enumerate(entries):
        best_sim, best_j = threshold, -1
        for j, gt in enumerate(gts_per_image[i]):
            if gt_used[i][j]:
                continue
            sim = similarity(det, gt)
            if sim < threshold:
                continue
            if best_j < 0 or sim > best_sim:
                best_sim, best_j = sim, j
        if best_j >= 0:
            gt_used[i][best_j] = True
            matched[k] = True
    num_gt = sum(len(g) for g in gts_per_image)
    return scores, matched, num_gt


def average_precision(
    dets: list[list[Box]],
    gts: list[list[Box]],
    iou_threshold: float,
    class_id: int,
) -> float:
    """AP for one class at one IoU threshold over a list of images."""
    if len(dets) != len(gts):
        raise ValueError("dets and gts must cover the same images")
    cdets = [[d for d in img if d.class_id == class_id] for img in dets]
    cgts = [[g for g in img if g.class_id == class_id] for img in gts]
    scores, matched, num_gt = _greedy_match(cdets, cgts, box_iou, iou_threshold)
    return _ap_from_matches(scores, matched, num_gt)


def _present_classes(dets: list[list], gts: list[list]) -> list[int]:
    classes = set()
    for img in dets:
        classes.update(d.class_id for d in img)
    for img in gts:
        classes.update(g.class_id for g in img)
    return sorted(classes)


def coco_map(dets: list[list[Box]], gts: list[list[Box]]) -> MetricValue:
    """mAP averaged over classes and the 10 IoU thresholds 0.50:0.05:0.95."""
    classes = _present_classes(dets, gts)
    if not classes:
        raise ValueError("no classes present in detections or ground truth")
    aps = [
        average_precision(dets, gts, thr, c)
        for c in classes
        for thr in COCO_IOU_THRESHOLDS
    ]
    return MetricValue(TaskType.OBJECT_DETECTION, float(np.mean(aps)))


def oks(
    pred: KeypointInstance,
    gt: KeypointInstance,
    object_scale: float,
    k_sigmas: np.ndarray,
) -> float:
    """Object Keypoint Similarity over visible gt keypoints."""
    if pred.num_keypoints != gt.num_keypoints:
        raise ValueError("keypoint counts differ")
    if object_scale <= 0:
        raise ValueError("object_scale must be positive")
    k = np.asarray(k_sigmas, dtype=np.float64)
    if k.shape != (gt.num_keypoints,):
        raise ValueError("k_sigmas must have one entry per keypoint")
    vis = gt.visible
    if not vis.any():
        raise ValueError("no visible ground-truth keypoints")
    d2 = np.sum((pred.keypoints[:, :2] - gt.keypoints[:, :2]) ** 2, axis=1)
    sims = np.exp(-d2[vis] / (2.0 * object_scale**2 * k[vis] ** 2))
    return float(np.mean(sims))


def keypoint_ap50(
    preds: list[list[KeypointInstance]],
    gts: list[list[KeypointInstance]],
    k_sigmas: np.ndarray | None = None,
    oks_threshold: float = 0.5,
) -> MetricValue:
    """AP with OKS >= 0.5 as the match predicate; object scale from the gt box."""
    if len(preds) != len(gts):
        raise ValueError("preds and gts must cover the same images")

    def sim(p: KeypointInstance, g: KeypointInstance) -> float:
        sig = k_sigmas if k_sigmas is not None else np.full(g.num_keypoints, 0.1)
        scale = np.sqrt(g.box.area)
        return oks(p, g, scale, sig)

    scores, matched, num_gt = _greedy_match(preds, gts, sim, oks_threshold)
    if num_gt == 0:
        raise ValueError("no ground-truth instances")
    return MetricValue(TaskType.KEYPOINT_DETECTION, _ap_from_matches(scores, matched, num_gt))


def _joint_valid(pred: DepthGrid, gt: DepthGrid) -> np.ndarray:
    if pred.depth.shape != gt.depth.shape:
        raise ValueError("shape mismatch between predicted and ground-truth depth")
    valid = pred.valid & gt.valid
    if not valid.any():
        raise ValueError("no valid pixels")
    return valid


def depth_rmse(pred: DepthGrid, gt: DepthGrid) -> MetricValue:
    valid = _joint_valid(pred, gt)
    err = pred.depth[valid] - gt.depth[valid]
    return MetricValue(TaskType.DEPTH_ESTIMATION, float(np.sqrt(np.mean(err**2))))


def depth_delta(pred: DepthGrid, gt: DepthGrid, threshold: float = 1.25) -> MetricValue:
    """Fraction of valid pixels with max(pred/gt, gt/pred) < threshold."""
    valid = _joint_valid(pred, gt)
    p, g = pred.depth[valid], gt.depth[valid]
    if np.any(p <= 0) or np.any(g <= 0):
        raise ValueError("delta accuracy requires positive depths at valid pixels")
    ratio = np.maximum(p / g, g / p)
    return MetricValue(TaskType.DEPTH_ESTIMATION, float(np.mean(ratio < threshold)))
