"""Pixel-wise losses and activations for segmentation and depth heads.

Losses return (value, gradient) pairs so the toy models can backpropagate
without an autodiff framework. The segmentation loss is the standard
negative log-likelihood of the ground-truth class under a per-pixel
softmax, averaged over non-ignored pixels.
"""

from __future__ import annotations

import numpy as np

from xferbench.core import DepthGrid, LabelGrid


def softplus(x: np.ndarray | float) -> np.ndarray | float:
    """Numerically stable log(exp(x) + 1); strictly positive and monotone."""
    x = np.asarray(x, dtype=np.float64)
    # Both branches keep the exp() argument non-positive.
    out = np.where(x > 0, x + np.log1p(np.exp(-np.abs(x))), np.log1p(np.exp(np.minimum(x, 0.0))))
    return out if out.ndim else float(out)


def softplus_grad(x: np.ndarray | float) -> np.ndarray | float:
    """d softplus / dx = sigmoid(x)."""
    x = np.asarray(x, dtype=np.float64)
    xm = np.minimum(x, 0.0)
    out = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))), np.exp(xm) / (1.0 + np.exp(xm)))
    return out if out.ndim else float(out)


def softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    shifted = logits - logits.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


def segmentation_nll(logits: np.ndarray, gt: LabelGrid) -> tuple[float, np.ndarray]:
    """Mean per-pixel cross-entropy over non-ignored pixels.

    `logits` is (H, W, C). Returns (loss, dloss/dlogits).
    """
    h, w, c = logits.shape
    if gt.labels.shape != (h, w):
        raise ValueError("label grid shape does not match logits")
    if c < 2:
        raise ValueError("need at least two classes")
    valid = gt.labels != gt.ignore_id
    n = int(valid.sum())
    if n == 0:
        raise ValueError("all pixels ignored")
    probs = softmax(logits, axis=-1)
    labels = np.where(valid, gt.labels, 0).astype(np.int64)
    onehot = np.eye(c)[labels]
    p_gt = np.take_along_axis(probs, labels[..., None], axis=-1)[..., 0]
    loss = -np.sum(np.log(np.clip(p_gt, 1e-300, None)) * valid) / n
    grad = (probs - onehot) * valid[..., None] / n
    return float(loss), grad


def depth_l1_loss(pred: DepthGrid, gt: DepthGrid) -> tuple[float, np.ndarray]:
    """Mean absolute depth error over jointly valid pixels."""
    if pred.depth.shape != gt.depth.shape:
        raise ValueError("depth grid shapes differ")
    valid = pred.valid & gt.valid
    n = int(valid.sum())
    if n == 0:
        raise ValueError("no valid pixels")
    diff = (pred.depth - gt.depth) * valid
    return float(np.abs(diff).sum() / n), np.sign(diff) * valid / n


def _forward_diffs(d: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Forward differences, zero-padded at the last column/row."""
    gx = np.zeros_like(d)
    gy = np.zeros_like(d)
    gx[:, :-1] = d[:, 1:] - d[:, :-1]
    gy[:-1, :] = d[1:, :] - d[:-1, :]
    return gx, gy


def depth_smoothness_loss(pred: DepthGrid, gt: DepthGrid) -> tuple[float, np.ndarray]:
    """L1 mismatch of forward-difference depth gradients, averaged per pixel.

    Invariant to adding a global constant to the prediction.
    """
    if pred.depth.shape != gt.depth.shape:
        raise ValueError("depth grid shapes differ")
    h, w = pred.depth.shape
    if h < 2 and w < 2:
        raise ValueError("grid has no neighboring pixel pairs")
    n = h * w
    both = pred.valid & gt.valid
    gx_p, gy_p = _forward_diffs(pred.depth)
    gx_g, gy_g = _forward_diffs(gt.depth)
    # A difference contributes only where both pixels of the pair are valid.
    mx = np.zeros((h, w), dtype=bool)
    my = np.zeros((h, w), dtype=bool)
    mx[:, :-1] = both[:, :-1] & both[:, 1:]
    my[:-1, :] = both[:-1, :] & both[1:, :]
    sx = np.sign(gx_p - gx_g) * mx
    sy = np.sign(gy_p - gy_g) * my
    loss = (np.abs(gx_p - gx_g) * mx).sum() + (np.abs(gy_p - gy_g) * my).sum()
    grad = np.zeros((h, w))
    grad[:, 1:] += sx[:, :-1]
    grad[:, :-1] -= sx[:, :-1]
    grad[1:, :] += sy[:-1, :]
    grad[:-1, :] -= sy[:-1, :]
    return float(loss / n), grad / n


def depth_total_loss(
    pred: DepthGrid,
    gt: DepthGrid,
    lambda_smooth: float = 1.0,
) -> tuple[float, np.ndarray]:
    """L1 + lambda_smooth * smoothness, with the combined gradient."""
    l1, g1 = depth_l1_loss(pred, gt)
    ls, gs = depth_smoothness_loss(pred, gt)
    return float(l1 + lambda_smooth * ls), g1 + lambda_smooth * gs
