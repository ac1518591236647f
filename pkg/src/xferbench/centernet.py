"""Center-point detection codec: target encoding, losses, and decoding.

Ground-truth boxes become a per-class heatmap (pixelwise max of per-box
Gaussians, exactly 1 at quantized centers), a 2-channel fractional-offset
map, and a 2-channel size map on a stride-R feature grid. Keypoint targets
add a per-keypoint heatmap/offset pair plus a center-to-keypoint
displacement ("allocation") map.

All losses return (value, gradient-with-respect-to-predictions) so that
callers can backpropagate by hand; gradients are checked against central
finite differences in the test suite.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from xferbench.core import Box, KeypointInstance, box_iou


@dataclass(frozen=True)
class TargetMaps:
    heatmap: np.ndarray  # (K, H, W) in [0, 1]; exactly 1 at centers
    offset: np.ndarray  # (2, H, W); fractional center remainder at centers
    size: np.ndarray  # (2, H, W); (w, h) in feature units at centers
    center_mask: np.ndarray  # (H, W) bool
    stride: int

    @property
    def num_centers(self) -> int:
        return int(self.center_mask.sum())


@dataclass(frozen=True)
class KeypointTargetMaps:
    kp_heatmap: np.ndarray  # (K_kp, H, W)
    kp_offset: np.ndarray  # (2, H, W)
    kp_mask: np.ndarray  # (H, W) bool; pixels holding a keypoint
    allocation: np.ndarray  # (2*K_kp, H, W); center->keypoint displacement
    alloc_mask: np.ndarray  # (K_kp, H, W) bool; visible keypoints at centers
    stride: int


@dataclass(frozen=True)
class Detection:
    box: Box

    @property
    def score(self) -> float:
        return self.box.score

    @property
    def class_id(self) -> int:
        return self.box.class_id


def gaussian_radius(w: float, h: float, min_iou: float = 0.7) -> float:
    """Largest corner shift keeping IoU >= min_iou (smallest of 3 case roots)."""
    if w <= 0 or h <= 0:
        raise ValueError("box extents must be positive")
    # Case 1: box translated diagonally.
    b1 = h + w
    c1 = w * h * (1 - min_iou) / (1 + min_iou)
    r1 = (b1 - math.sqrt(b1 * b1 - 4 * c1)) / 2
    # Case 2: both corners shift inward (box shrinks by 2r per side).
    a2 = 4.0
    b2 = 2 * (h + w)
    c2 = (1 - min_iou) * w * h
    r2 = (b2 - math.sqrt(b2 * b2 - 4 * a2 * c2)) / (2 * a2)
    # Case 3: both corners shift outward (box grows by 2r per side).
    a3 = 4 * min_iou
    b3 = -2 * min_iou * (h + w)
    c3 = (min_iou - 1) * w * h
    r3 = (-b3 + math.sqrt(b3 * b3 - 4 * a3 * c3)) / (2 * a3)
    return max(0.0, min(r1, r2, r3))


def _splat_gaussian(channel: np.ndarray, cx: int, cy: int, sigma: float) -> None:
    """Pixelwise max of the existing channel and a Gaussian peaked at (cx, cy)."""
    h, w = channel.shape
    ys, xs = np.mgrid[0:h, 0:w]
    if sigma <= 0:
        gauss = np.zeros_like(channel)
        gauss[cy, cx] = 1.0
    else:
        gauss = np.exp(-((xs - cx) ** 2 + (ys - cy) ** 2) / (2.0 * sigma**2))
    np.maximum(channel, gauss, out=channel)


def encode_detection_targets(
    boxes: list[Box],
    num_classes: int,
    grid_h: int,
    grid_w: int,
    stride: int = 4,
) -> TargetMaps:
    """Encode boxes (image coordinates) into stride-R training targets."""
    heatmap = np.zeros((num_classes, grid_h, grid_w))
    offset = np.zeros((2, grid_h, grid_w))
    size = np.zeros((2, grid_h, grid_w))
    mask = np.zeros((grid_h, grid_w), dtype=bool)
    for b in boxes:
        cx, cy = b.center
        fx, fy = cx / stride, cy / stride
        px, py = int(fx), int(fy)
        if not (0 <= px < grid_w and 0 <= py < grid_h):
            raise ValueError(f"box center {b.center} falls outside the feature grid")
        fw, fh = b.w / stride, b.h / stride
        sigma = gaussian_radius(fw, fh) / 3.0
        _splat_gaussian(heatmap[b.class_id], px, py, sigma)
        heatmap[b.class_id, py, px] = 1.0
        offset[0, py, px] = fx - px
        offset[1, py, px] = fy - py
        size[0, py, px] = fw
        size[1, py, px] = fh
        mask[py, px] = True
    return TargetMaps(heatmap, offset, size, mask, stride)


_EPS = 1e-12


def focal_loss(
    pred: np.ndarray,
    target: np.ndarray,
    alpha: float = 2.0,
    beta: float = 4.0,
) -> tuple[float, np.ndarray]:
    """Center-classification focal loss, normalized by the number of centers.

    Returns (loss, dloss/dpred). Predictions are clamped away from {0, 1}.
    """
    if pred.shape != target.shape:
        raise ValueError("pred and target shapes differ")
    n = int(np.count_nonzero(target == 1.0))
    if n == 0:
        raise ValueError("no centers: target has no pixels equal to 1")
    p = np.clip(pred, _EPS, 1.0 - _EPS)
    pos = target == 1.0
    neg = ~pos
    loss = 0.0
    grad = np.zeros_like(p)

    pp = p[pos]
    loss -= np.sum((1 - pp) ** alpha * np.log(pp))
    grad[pos] = -(-alpha * (1 - pp) ** (alpha - 1) * np.log(pp) + (1 - pp) ** alpha / pp)

    pn = p[neg]
    tn = target[neg]
    loss -= np.sum((1 - tn) ** beta * pn**alpha * np.log(1 - pn))
    grad[neg] = -((1 - tn) ** beta * (alpha * pn ** (alpha - 1) * np.log(1 - pn) - pn**alpha / (1 - pn)))

    return float(loss / n), grad / n


def masked_l1_loss(
    pred: np.ndarray,
    target: np.ndarray,
    mask: np.ndarray,
) -> tuple[float, np.ndarray]:
    """Mean (over masked pixels) of the per-channel absolute error.

    `pred`/`target` are (C, H, W); `mask` is (H, W). Returns (loss, grad).
    """
    if pred.shape != target.shape:
        raise ValueError("pred and target shapes differ")
    n = int(mask.sum())
    if n == 0:
        raise ValueError("empty center mask")
    diff = (pred - target) * mask[None]
    loss = float(np.abs(diff).sum() / n)
    grad = np.sign(diff) * mask[None] / n
    return loss, grad


def total_detection_loss(
    pred_heatmap: np.ndarray,
    pred_offset: np.ndarray,
    pred_size: np.ndarray,
    targets: TargetMaps,
    lambda_off: float = 1.0,
    lambda_size: float = 0.1,
) -> tuple[float, tuple[np.ndarray, np.ndarray, np.ndarray]]:
    """L = L_cls + lambda_off * L_off + lambda_size * L_size, with gradients."""
    l_cls, g_cls = focal_loss(pred_heatmap, targets.heatmap)
    l_off, g_off = masked_l1_loss(pred_offset, targets.offset, targets.center_mask)
    l_size, g_size = masked_l1_loss(pred_size, targets.size, targets.center_mask)
    loss = l_cls + lambda_off * l_off + lambda_size * l_size
    return float(loss), (g_cls, lambda_off * g_off, lambda_size * g_size)


def _local_maxima(channel: np.ndarray) -> np.ndarray:
    """Strict 3x3 local maxima; out-of-grid neighbors count as -inf."""
    h, w = channel.shape
    padded = np.full((h + 2, w + 2), -np.inf)
    padded[1:-1, 1:-1] = channel
    center = padded[1:-1, 1:-1]
    is_max = np.ones((h, w), dtype=bool)
    for dy in (-1, 0, 1):
        for dx in (-1, 0, 1):
            if dy == 0 and dx == 0:
                continue
            is_max &= center > padded[1 + dy : 1 + dy + h, 1 + dx : 1 + dx + w]
    return is_max


def decode_detections(
    pred_heatmap: np.ndarray,
    pred_offset: np.ndarray,
    pred_size: np.ndarray,
    top_t: int = 100,
    stride: int = 4,
    score_threshold: float = 0.0,
) -> list[Detection]:
    """Strict 3x3 peaks -> top-T by score -> boxes from offset/size maps.

    Ties in the top-T cut are broken by lowest (class, row, col).
    """
    num_classes = pred_heatmap.shape[0]
    candidates = []  # (-score, class, row, col)
    for c in range(num_classes):
        peaks = _local_maxima(pred_heatmap[c])
        for py, px in zip(*np.nonzero(peaks)):
            candidates.append((-pred_heatmap[c, py, px], c, int(py), int(px)))
    candidates.sort()
    out = []
    for negscore, c, py, px in candidates[:top_t]:
        score = -negscore
        if score < score_threshold:
            continue
        cx = (px + pred_offset[0, py, px]) * stride
        cy = (py + pred_offset[1, py, px]) * stride
        w = pred_size[0, py, px] * stride
        h = pred_size[1, py, px] * stride
        if w <= 0 or h <= 0:
            continue
        out.append(
            Detection(Box(cx - w / 2, cy - h / 2, w, h, class_id=c, score=min(1.0, score)))
        )
    return out


def nms(dets: list[Detection], iou_threshold: float = 0.3) -> list[Detection]:
    """Greedy per-class suppression of boxes with IoU >= threshold."""
    ordered = sorted(dets, key=lambda d: (-d.score, d.class_id, d.box.y, d.box.x))
    kept: list[Detection] = []
    for d in ordered:
        if any(
            k.class_id == d.class_id and box_iou(k.box, d.box) >= iou_threshold
            for k in kept
        ):
            continue
        kept.append(d)
    return kept


def encode_keypoint_targets(
    instances: list[KeypointInstance],
    num_keypoints: int,
    grid_h: int,
    grid_w: int,
    stride: int = 4,
) -> tuple[KeypointTargetMaps, TargetMaps]:
    """Keypoint heatmap/offset targets plus single-class box targets."""
    boxes = [
        Box(i.box.x, i.box.y, i.box.w, i.box.h, class_id=0, score=i.box.score)
        for i in instances
    ]
    det_targets = encode_detection_targets(boxes, 1, grid_h, grid_w, stride)

    kp_heatmap = np.zeros((num_keypoints, grid_h, grid_w))
    kp_offset = np.zeros((2, grid_h, grid_w))
    kp_mask = np.zeros((grid_h, grid_w), dtype=bool)
    allocation = np.zeros((2 * num_keypoints, grid_h, grid_w))
    alloc_mask = np.zeros((num_keypoints, grid_h, grid_w), dtype=bool)

    for inst in instances:
        cx, cy = inst.box.center
        cpx, cpy = int(cx / stride), int(cy / stride)
        fw, fh = inst.box.w / stride, inst.box.h / stride
        sigma = gaussian_radius(fw, fh) / 3.0
        for k in range(num_keypoints):
            x, y, vis = inst.keypoints[k]
            if vis <= 0:
                continue
            fx, fy = x / stride, y / stride
            px, py = int(fx), int(fy)
            if not (0 <= px < grid_w and 0 <= py < grid_h):
                raise ValueError(f"keypoint ({x}, {y}) falls outside the feature grid")
            _splat_gaussian(kp_heatmap[k], px, py, sigma)
            kp_heatmap[k, py, px] = 1.0
            kp_offset[0, py, px] = fx - px
            kp_offset[1, py, px] = fy - py
            kp_mask[py, px] = True
            allocation[2 * k, cpy, cpx] = fx - cx / stride
            allocation[2 * k + 1, cpy, cpx] = fy - cy / stride
            alloc_mask[k, cpy, cpx] = True

    return (
        KeypointTargetMaps(kp_heatmap, kp_offset, kp_mask, allocation, alloc_mask, stride),
        det_targets,
    )


def total_keypoint_loss(
    pred_kp_heatmap: np.ndarray,
    pred_kp_offset: np.ndarray,
    pred_allocation: np.ndarray,
    targets: KeypointTargetMaps,
    lambda_off: float = 1.0,
    lambda_alloc: float = 1.0,
) -> tuple[float, tuple[np.ndarray, np.ndarray, np.ndarray]]:
    """Keypoint analogue of the detection objective: focal + two masked L1."""
    l_hm, g_hm = focal_loss(pred_kp_heatmap, targets.kp_heatmap)
    l_off, g_off = masked_l1_loss(pred_kp_offset, targets.kp_offset, targets.kp_mask)
    # Allocation regresses per-keypoint displacements at center pixels only.
    any_center = targets.alloc_mask.any(axis=0)
    masked = np.repeat(targets.alloc_mask, 2, axis=0)
    diff = (pred_allocation - targets.allocation) * masked
    n = max(int(any_center.sum()), 1)
    l_alloc = float(np.abs(diff).sum() / n)
    g_alloc = np.sign(diff) * masked / n
    loss = l_hm + lambda_off * l_off + lambda_alloc * l_alloc
    return float(loss), (g_hm, lambda_off * g_off, lambda_alloc * g_alloc)


def decode_keypoints(
    pred_heatmap: np.ndarray,
    pred_offset: np.ndarray,
    pred_size: np.ndarray,
    pred_kp_heatmap: np.ndarray,
    pred_kp_offset: np.ndarray,
    pred_allocation: np.ndarray,
    top_t: int = 100,
    stride: int = 4,
    score_threshold: float = 0.0,
    kp_score_threshold: float = 0.1,
) -> list[KeypointInstance]:
    """Decode boxes, then snap allocation-regressed keypoints to candidates.

    The initial guess for each keypoint is center + allocation displacement;
    the final location is the nearest in-box candidate from the keypoint
    heatmap, or the guess itself when no candidate qualifies.
    """
    dets = decode_detections(
        pred_heatmap, pred_offset, pred_size, top_t, stride, score_threshold
    )
    num_kp = pred_kp_heatmap.shape[0]

    # Candidate keypoint locations per channel, in image coordinates.
    candidates: list[list[tuple[float, float]]] = []
    for k in range(num_kp):
        peaks = _local_maxima(pred_kp_heatmap[k])
        chan = []
        for py, px in zip(*np.nonzero(peaks)):
            if pred_kp_heatmap[k, py, px] < kp_score_threshold:
                continue
            chan.append(
                (
                    (px + pred_kp_offset[0, py, px]) * stride,
                    (py + pred_kp_offset[1, py, px]) * stride,
                )
            )
        candidates.append(chan)

    instances = []
    for det in dets:
        b = det.box
        cx, cy = b.center
        grid_h, grid_w = pred_heatmap.shape[1:]
        cpx = min(max(int(cx / stride), 0), grid_w - 1)
        cpy = min(max(int(cy / stride), 0), grid_h - 1)
        kps = np.zeros((num_kp, 3))
        for k in range(num_kp):
            gx = cx + pred_allocation[2 * k, cpy, cpx] * stride
            gy = cy + pred_allocation[2 * k + 1, cpy, cpx] * stride
            best = None
            best_d2 = np.inf
            for x, y in candidates[k]:
                if not (b.x <= x <= b.x + b.w and b.y <= y <= b.y + b.h):
                    continue
                d2 = (x - gx) ** 2 + (y - gy) ** 2
                if d2 < best_d2:
                    best_d2, best = d2, (x, y)
            kps[k] = (*(best if best is not None else (gx, gy)), 1.0)
        instances.append(KeypointInstance(kps, b, score=det.score))
    return instances
