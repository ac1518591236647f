"""Synthetic multi-domain toy tasks and hand-gradient linear models.

Each domain draws small RGB grids with colored rectangular blobs; the blob
layout fully determines the labels for all four task types (per-pixel
class, boxes, keypoints inside each box, and a class-dependent depth).
A "broad" domain is a mixture whose components include other domains'
generators, giving domain inclusion by construction.

Models are linear -> tanh -> linear with analytic gradients, so every
training step is oracle-checkable against finite differences and the whole
transfer-chain protocol (pretrain -> source fine-tune -> target fine-tune,
against a pretrain-only baseline) runs in seconds on a CPU.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, replace

import numpy as np

from xferbench import centernet, dense, metrics
from xferbench.core import Box, DepthGrid, FeatureSet, KeypointInstance, LabelGrid, TaskType
from xferbench.distance import sample_features
from xferbench.gains import TransferResult

NUM_FG_CLASSES = 2
NUM_TOY_KEYPOINTS = 2
BACKGROUND_DEPTH = 10.0


@dataclass(frozen=True)
class DomainComponent:
    """One generator: background color, per-class blob colors, pixel noise."""

    background: tuple[float, float, float]
    class_colors: tuple[tuple[float, float, float], ...]
    noise: float = 0.05


@dataclass(frozen=True)
class SynthDomainSpec:
    domain_id: str
    components: tuple[DomainComponent, ...]
    weights: tuple[float, ...] | None = None
    image_size: int = 12
    max_blobs: int = 2
    blob_size_range: tuple[int, int] = (3, 6)
    seed: int = 0

    def __post_init__(self):
        if not self.components:
            raise ValueError("domain needs at least one component")
        if self.weights is not None and len(self.weights) != len(self.components):
            raise ValueError("one weight per component required")


def mixture_spec(domain_id: str, parts: list[SynthDomainSpec], seed: int = 0) -> SynthDomainSpec:
    """A broad domain whose support includes every part's distribution."""
    components = tuple(c for p in parts for c in p.components)
    base = parts[0]
    return SynthDomainSpec(
        domain_id,
        components,
        None,
        base.image_size,
        base.max_blobs,
        base.blob_size_range,
        seed,
    )


# Fixed palettes for the bundled study domains; indexes are referenced from
# harness configs so domains stay describable by scalars.
_PALETTES = {
    0: DomainComponent((0.10, 0.10, 0.12), ((0.90, 0.20, 0.15), (0.15, 0.85, 0.25))),
    1: DomainComponent((0.85, 0.82, 0.80), ((0.15, 0.20, 0.90), (0.90, 0.85, 0.15))),
    2: DomainComponent((0.50, 0.48, 0.52), ((0.58, 0.46, 0.44), (0.42, 0.50, 0.60))),
    3: DomainComponent((0.30, 0.55, 0.30), ((0.75, 0.40, 0.75), (0.30, 0.75, 0.75))),
}


def palette_spec(domain_id: str, palette: int, seed: int = 0, noise: float = 0.05) -> SynthDomainSpec:
    comp = _PALETTES[palette]
    return SynthDomainSpec(domain_id, (replace(comp, noise=noise),), seed=seed)


@dataclass(frozen=True)
class ToyDataset:
    dataset_id: str
    domain_label: str
    images: np.ndarray  # (N, H, W, 3)
    seg: np.ndarray  # (N, H, W) int; 0 = background, 1..K = blob classes
    boxes: tuple[tuple[Box, ...], ...]
    keypoints: tuple[tuple[KeypointInstance, ...], ...]
    depth: np.ndarray  # (N, H, W)
    image_class: np.ndarray  # (N,) dominant blob class, 0-based

    def __len__(self) -> int:
        return self.images.shape[0]

    @property
    def grid_size(self) -> int:
        return self.images.shape[1]

    def subset(self, n: int) -> "ToyDataset":
        """First n samples; used to cap training-set sizes per regime."""
        n = min(n, len(self))
        return ToyDataset(
            self.dataset_id,
            self.domain_label,
            self.images[:n],
            self.seg[:n],
            self.boxes[:n],
            self.keypoints[:n],
            self.depth[:n],
            self.image_class[:n],
        )


def _blob_keypoints(b: Box) -> np.ndarray:
    cx, cy = b.center
    return np.array(
        [[cx, cy, 1.0], [b.x + 1.0, b.y + 1.0, 1.0]][:NUM_TOY_KEYPOINTS]
    )


def _blob_depth(class_id: int) -> float:
    return 2.0 + float(class_id)


def _generate_image(spec: SynthDomainSpec, rng: np.random.Generator):
    size = spec.image_size
    weights = spec.weights
    probs = None if weights is None else np.asarray(weights) / np.sum(weights)
    comp = spec.components[rng.choice(len(spec.components), p=probs)]
    img = np.array(comp.background)[None, None, :] + rng.normal(0, comp.noise, (size, size, 3))
    seg = np.zeros((size, size), dtype=np.int64)
    depth = np.full((size, size), BACKGROUND_DEPTH)
    boxes: list[Box] = []
    n_blobs = int(rng.integers(1, spec.max_blobs + 1))
    lo, hi = spec.blob_size_range
    for _ in range(n_blobs):
        placed = None
        for _attempt in range(10):
            bw = int(rng.integers(lo, hi + 1))
            bh = int(rng.integers(lo, hi + 1))
            x0 = int(rng.integers(0, size - bw + 1))
            y0 = int(rng.integers(0, size - bh + 1))
            cand = Box(float(x0), float(y0), float(bw), float(bh))
            if all(centernet.box_iou(cand, b) == 0.0 for b in boxes):
                placed = (x0, y0, bw, bh)
                break
        if placed is None:
            continue
        x0, y0, bw, bh = placed
        c = int(rng.integers(0, NUM_FG_CLASSES))
        img[y0 : y0 + bh, x0 : x0 + bw] = np.array(comp.class_colors[c]) + rng.normal(
            0, comp.noise, (bh, bw, 3)
        )
        seg[y0 : y0 + bh, x0 : x0 + bw] = c + 1
        depth[y0 : y0 + bh, x0 : x0 + bw] = _blob_depth(c)
        boxes.append(Box(float(x0), float(y0), float(bw), float(bh), class_id=c))
    # First placement never collides, so every image has at least one blob.
    kps = tuple(KeypointInstance(_blob_keypoints(b), b) for b in boxes)
    largest = max(boxes, key=lambda b: (b.area, -b.class_id))
    return img, seg, tuple(boxes), kps, depth, largest.class_id


def generate_dataset(
    spec: SynthDomainSpec,
    n_train: int,
    n_val: int,
    dataset_id: str | None = None,
) -> tuple[ToyDataset, ToyDataset]:
    """Deterministic train/val splits with labels for all four task types."""
    if n_train < 1 or n_val < 1:
        raise ValueError("need at least one train and one val sample")
    rng = np.random.default_rng(spec.seed)
    images, segs, boxes, kps, depths, classes = [], [], [], [], [], []
    for _ in range(n_train + n_val):
        img, seg, bx, kp, dp, cls = _generate_image(spec, rng)
        images.append(img)
        segs.append(seg)
        boxes.append(bx)
        kps.append(kp)
        depths.append(dp)
        classes.append(cls)
    name = dataset_id or spec.domain_id

    def pack(sl: slice, suffix: str) -> ToyDataset:
        return ToyDataset(
            f"{name}{suffix}",
            spec.domain_id,
            np.stack(images[sl]),
            np.stack(segs[sl]),
            tuple(boxes[sl]),
            tuple(kps[sl]),
            np.stack(depths[sl]),
            np.array(classes[sl]),
        )

    return pack(slice(0, n_train), ""), pack(slice(n_train, None), "")


# ---------------------------------------------------------------------------
# Models


def head_dim(task: TaskType | str) -> int:
    if task == "classification":
        return NUM_FG_CLASSES
    if task is TaskType.SEMANTIC_SEGMENTATION:
        return NUM_FG_CLASSES + 1
    if task is TaskType.OBJECT_DETECTION:
        return NUM_FG_CLASSES + 4
    if task is TaskType.KEYPOINT_DETECTION:
        # det heat(1) + offset(2) + size(2) + kp heat(K) + kp offset(2) + allocation(2K)
        return 7 + 3 * NUM_TOY_KEYPOINTS
    if task is TaskType.DEPTH_ESTIMATION:
        return 1
    raise ValueError(f"unknown task {task}")


@dataclass
class ToyModel:
    """Shared linear backbone + tanh, with a per-task linear head.

    The classification head acts on spatially averaged hidden activations;
    all structured-prediction heads act per pixel.
    """

    w_backbone: np.ndarray  # (3, d_hid)
    b_backbone: np.ndarray  # (d_hid,)
    w_head: np.ndarray  # (d_hid, out)
    b_head: np.ndarray  # (out,)
    task: TaskType | str

    @property
    def hidden_dim(self) -> int:
        return self.w_backbone.shape[1]

    def copy(self) -> "ToyModel":
        return copy.deepcopy(self)


def init_model(task: TaskType | str, hidden_dim: int = 8, seed: int = 0) -> ToyModel:
    rng = np.random.default_rng(seed)
    out = head_dim(task)
    w_b = rng.normal(0, 0.5, (3, hidden_dim))
    b_b = np.zeros(hidden_dim)
    w_h = rng.normal(0, 0.1, (hidden_dim, out))
    b_h = np.zeros(out)
    return ToyModel(w_b, b_b, w_h, b_h, task)


def swap_head(model: ToyModel, task: TaskType | str, seed: int = 0) -> ToyModel:
    """Copy the backbone weights, randomly initialize a fresh task head."""
    rng = np.random.default_rng(seed)
    out = head_dim(task)
    return ToyModel(
        model.w_backbone.copy(),
        model.b_backbone.copy(),
        rng.normal(0, 0.1, (model.hidden_dim, out)),
        np.zeros(out),
        task,
    )


def hidden_activations(model: ToyModel, images: np.ndarray) -> np.ndarray:
    """(B, H, W, d_hid) tanh activations of the per-pixel linear backbone."""
    return np.tanh(images @ model.w_backbone + model.b_backbone)


def forward(model: ToyModel, images: np.ndarray) -> np.ndarray:
    """Task prediction maps: (B, H, W, out), or (B, out) for classification."""
    if images.ndim != 4 or images.shape[-1] != 3:
        raise ValueError(f"images must be (B, H, W, 3), got {images.shape}")
    hidden = hidden_activations(model, images)
    if model.task == "classification":
        pooled = hidden.mean(axis=(1, 2))
        return pooled @ model.w_head + model.b_head
    return hidden @ model.w_head + model.b_head


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return np.where(x >= 0, 1 / (1 + np.exp(-np.abs(x))), np.exp(np.minimum(x, 0)) / (1 + np.exp(np.minimum(x, 0))))


def _detection_targets(ds: ToyDataset, i: int) -> centernet.TargetMaps:
    size = ds.grid_size
    return centernet.encode_detection_targets(list(ds.boxes[i]), NUM_FG_CLASSES, size, size, stride=1)


def _keypoint_targets(ds: ToyDataset, i: int):
    size = ds.grid_size
    return centernet.encode_keypoint_targets(
        list(ds.keypoints[i]), NUM_TOY_KEYPOINTS, size, size, stride=1
    )


def task_loss_and_grad(
    task: TaskType | str,
    logits: np.ndarray,
    ds: ToyDataset,
    index: int,
) -> tuple[float, np.ndarray]:
    """Per-sample loss and gradient with respect to the head output logits."""
    if task is TaskType.SEMANTIC_SEGMENTATION:
        return dense.segmentation_nll(logits, LabelGrid(ds.seg[index]))

    if task is TaskType.DEPTH_ESTIMATION:
        z = dense.softplus(logits[..., 0])
        loss, g_depth = dense.depth_total_loss(DepthGrid(z), DepthGrid(ds.depth[index]))
        grad = np.zeros_like(logits)
        grad[..., 0] = g_depth * dense.softplus_grad(logits[..., 0])
        return loss, grad

    if task is TaskType.OBJECT_DETECTION:
        k = NUM_FG_CLASSES
        targets = _detection_targets(ds, index)
        heat = _sigmoid(logits[..., :k]).transpose(2, 0, 1)
        off = logits[..., k : k + 2].transpose(2, 0, 1)
        size = logits[..., k + 2 : k + 4].transpose(2, 0, 1)
        loss, (g_h, g_o, g_s) = centernet.total_detection_loss(heat, off, size, targets)
        grad = np.zeros_like(logits)
        grad[..., :k] = (g_h * heat * (1 - heat)).transpose(1, 2, 0)
        grad[..., k : k + 2] = g_o.transpose(1, 2, 0)
        grad[..., k + 2 : k + 4] = g_s.transpose(1, 2, 0)
        return loss, grad

    if task is TaskType.KEYPOINT_DETECTION:
        kk = NUM_TOY_KEYPOINTS
        kp_targets, det_targets = _keypoint_targets(ds, index)
        heat = _sigmoid(logits[..., :1]).transpose(2, 0, 1)
        off = logits[..., 1:3].transpose(2, 0, 1)
        size = logits[..., 3:5].transpose(2, 0, 1)
        kp_heat = _sigmoid(logits[..., 5 : 5 + kk]).transpose(2, 0, 1)
        kp_off = logits[..., 5 + kk : 7 + kk].transpose(2, 0, 1)
        alloc = logits[..., 7 + kk :].transpose(2, 0, 1)
        l_det, (g_h, g_o, g_s) = centernet.total_detection_loss(heat, off, size, det_targets)
        l_kp, (g_kh, g_ko, g_al) = centernet.total_keypoint_loss(kp_heat, kp_off, alloc, kp_targets)
        grad = np.zeros_like(logits)
        grad[..., :1] = (g_h * heat * (1 - heat)).transpose(1, 2, 0)
        grad[..., 1:3] = g_o.transpose(1, 2, 0)
        grad[..., 3:5] = g_s.transpose(1, 2, 0)
        grad[..., 5 : 5 + kk] = (g_kh * kp_heat * (1 - kp_heat)).transpose(1, 2, 0)
        grad[..., 5 + kk : 7 + kk] = g_ko.transpose(1, 2, 0)
        grad[..., 7 + kk :] = g_al.transpose(1, 2, 0)
        return l_det + l_kp, grad

    if task == "classification":
        probs = dense.softmax(logits)
        label = int(ds.image_class[index])
        loss = -np.log(max(probs[label], 1e-300))
        grad = probs.copy()
        grad[label] -= 1.0
        return float(loss), grad

    raise ValueError(f"unknown task {task}")


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 150
    lr: float = 0.1
    lr_candidates: tuple[float, ...] = ()  # empty means just `lr`
    schedule: str = "constant"  # constant | step
    decay_at: int | None = None  # step index for the 10x decay (step schedule)
    batch_size: int = 8
    seed: int = 0

    def candidate_lrs(self) -> tuple[float, ...]:
        return self.lr_candidates if self.lr_candidates else (self.lr,)

    def lr_at(self, lr: float, step: int) -> float:
        if self.schedule == "step":
            decay_at = self.decay_at if self.decay_at is not None else (2 * self.steps) // 3
            return lr * (0.1 if step >= decay_at else 1.0)
        if self.schedule != "constant":
            raise ValueError(f"unknown schedule {self.schedule!r}")
        return lr


def batch_gradients(
    model: ToyModel, ds: ToyDataset, indices: np.ndarray
) -> tuple[float, dict[str, np.ndarray]]:
    """Mean loss over the batch and gradients for all four parameter arrays."""
    images = ds.images[indices]
    hidden = hidden_activations(model, images)
    total_loss = 0.0
    gw_h = np.zeros_like(model.w_head)
    gb_h = np.zeros_like(model.b_head)
    g_hidden = np.zeros_like(hidden)
    batch = len(indices)
    if model.task == "classification":
        pooled = hidden.mean(axis=(1, 2))
        logits = pooled @ model.w_head + model.b_head
        for bi, di in enumerate(indices):
            loss, g_logit = task_loss_and_grad(model.task, logits[bi], ds, int(di))
            total_loss += loss
            gw_h += np.outer(pooled[bi], g_logit)
            gb_h += g_logit
            g_pooled = g_logit @ model.w_head.T
            g_hidden[bi] = g_pooled[None, None, :] / (hidden.shape[1] * hidden.shape[2])
    else:
        logits = hidden @ model.w_head + model.b_head
        for bi, di in enumerate(indices):
            loss, g_logit = task_loss_and_grad(model.task, logits[bi], ds, int(di))
            total_loss += loss
            gw_h += np.einsum("hwd,hwo->do", hidden[bi], g_logit)
            gb_h += g_logit.sum(axis=(0, 1))
            g_hidden[bi] = g_logit @ model.w_head.T
    g_pre = g_hidden * (1 - hidden**2)
    gw_b = np.einsum("bhwc,bhwd->cd", images, g_pre)
    gb_b = g_pre.sum(axis=(0, 1, 2))
    return total_loss / batch, {
        "w_head": gw_h / batch,
        "b_head": gb_h / batch,
        "w_backbone": gw_b / batch,
        "b_backbone": gb_b / batch,
    }


def train(
    model: ToyModel,
    ds: ToyDataset,
    cfg: TrainConfig,
    lr: float | None = None,
) -> tuple[ToyModel, list[float]]:
    """Mini-batch gradient descent with hand-derived gradients.

    Deterministic per seed; raises on a non-finite loss with the step index.
    """
    model = model.copy()
    rng = np.random.default_rng(cfg.seed)
    lr = cfg.lr if lr is None else lr
    trace = []
    for step in range(cfg.steps):
        idx = rng.integers(0, len(ds), min(cfg.batch_size, len(ds)))
        loss, grads = batch_gradients(model, ds, idx)
        if not np.isfinite(loss):
            raise RuntimeError(f"training diverged at step {step}: loss={loss}")
        trace.append(loss)
        step_lr = cfg.lr_at(lr, step)
        model.w_head -= step_lr * grads["w_head"]
        model.b_head -= step_lr * grads["b_head"]
        model.w_backbone -= step_lr * grads["w_backbone"]
        model.b_backbone -= step_lr * grads["b_backbone"]
    return model, trace


def evaluate(model: ToyModel, ds: ToyDataset, use_nms: bool = False) -> metrics.MetricValue:
    """Task metric of the model on a dataset (its validation split)."""
    logits = forward(model, ds.images)
    task = model.task
    if task is TaskType.SEMANTIC_SEGMENTATION:
        preds = logits.argmax(axis=-1)
        counts = sum(
            metrics.confusion_matrix(
                LabelGrid(preds[i]), LabelGrid(ds.seg[i]), NUM_FG_CLASSES + 1
            )
            for i in range(len(ds))
        )
        mean, _ = metrics.miou_from_confusion(counts)
        return metrics.MetricValue(task, mean)
    if task is TaskType.DEPTH_ESTIMATION:
        z = dense.softplus(logits[..., 0])
        pred = DepthGrid(z.reshape(-1, z.shape[-1]))
        gt = DepthGrid(ds.depth.reshape(-1, ds.depth.shape[-1]))
        return metrics.depth_rmse(pred, gt)
    if task is TaskType.OBJECT_DETECTION:
        k = NUM_FG_CLASSES
        dets, gts = [], []
        for i in range(len(ds)):
            heat = _sigmoid(logits[i, ..., :k]).transpose(2, 0, 1)
            off = logits[i, ..., k : k + 2].transpose(2, 0, 1)
            size = logits[i, ..., k + 2 : k + 4].transpose(2, 0, 1)
            found = centernet.decode_detections(heat, off, size, top_t=20, stride=1, score_threshold=0.1)
            if use_nms:
                found = centernet.nms(found)
            dets.append([d.box for d in found])
            gts.append([Box(b.x, b.y, b.w, b.h, b.class_id) for b in ds.boxes[i]])
        return metrics.coco_map(dets, gts)
    if task is TaskType.KEYPOINT_DETECTION:
        kk = NUM_TOY_KEYPOINTS
        preds, gts = [], []
        for i in range(len(ds)):
            heat = _sigmoid(logits[i, ..., :1]).transpose(2, 0, 1)
            off = logits[i, ..., 1:3].transpose(2, 0, 1)
            size = logits[i, ..., 3:5].transpose(2, 0, 1)
            kp_heat = _sigmoid(logits[i, ..., 5 : 5 + kk]).transpose(2, 0, 1)
            kp_off = logits[i, ..., 5 + kk : 7 + kk].transpose(2, 0, 1)
            alloc = logits[i, ..., 7 + kk :].transpose(2, 0, 1)
            found = centernet.decode_keypoints(
                heat, off, size, kp_heat, kp_off, alloc, top_t=10, stride=1, score_threshold=0.1
            )
            preds.append(found)
            gts.append(list(ds.keypoints[i]))
        return metrics.keypoint_ap50(preds, gts)
    raise ValueError(f"no evaluation metric for task {task}")


def embed_features(
    model: ToyModel, ds: ToyDataset, n: int | None = None, seed: int = 0
) -> FeatureSet:
    """Average-pooled backbone activations, one embedding vector per image."""
    hidden = hidden_activations(model, ds.images)
    vectors = hidden.mean(axis=(1, 2))
    fs = FeatureSet(ds.dataset_id, ds.domain_label, vectors, seed)
    return fs if n is None else sample_features(fs, n, seed)


def train_with_selection(
    model: ToyModel,
    train_ds: ToyDataset,
    val_ds: ToyDataset,
    cfg: TrainConfig,
) -> ToyModel:
    """Train one model per candidate learning rate, keep the best on val.

    Ties go to the lowest learning rate.
    """
    best_model, best_score = None, None
    # sorted() + strict > means ties go to the lowest learning rate.
    for lr in sorted(cfg.candidate_lrs()):
        trained, _ = train(model, train_ds, cfg, lr=lr)
        value = evaluate(trained, val_ds).value
        score = value if trained.task.higher_is_better else -value
        if best_score is None or score > best_score:
            best_model, best_score = trained, score
    return best_model


@dataclass(frozen=True)
class TaskInstance:
    """A dataset pair bound to one task type, ready to train and evaluate."""

    dataset_id: str
    domain_label: str
    task: TaskType
    train: ToyDataset
    val: ToyDataset

    @property
    def train_size(self) -> int:
        return len(self.train)


def make_task(
    spec: SynthDomainSpec,
    task: TaskType,
    n_train: int = 64,
    n_val: int = 32,
    dataset_id: str | None = None,
) -> TaskInstance:
    train_ds, val_ds = generate_dataset(spec, n_train, n_val, dataset_id)
    return TaskInstance(dataset_id or spec.domain_id, spec.domain_id, task, train_ds, val_ds)


def pretrain_backbone(
    pretrain_train: ToyDataset,
    cfg: TrainConfig,
    hidden_dim: int = 8,
) -> ToyModel:
    """Image-level classification pretraining; the ILSVRC stand-in."""
    model = init_model("classification", hidden_dim, seed=cfg.seed)
    trained, _ = train(model, pretrain_train, cfg)
    return trained


def run_chain(
    pretrained: ToyModel,
    source: TaskInstance,
    target: TaskInstance,
    source_cfg: TrainConfig,
    target_cfg: TrainConfig,
    regime: str = "small-target",
    source_model: ToyModel | None = None,
) -> TransferResult:
    """pretrain -> source -> target, plus the pretrain-only baseline.

    The baseline fine-tunes the pretrained backbone on the target with the
    same seeds and schedule, so the source stage is the only difference.
    A cached source model may be passed to skip retraining.
    """
    if source_model is None:
        source_model = train_source_model(pretrained, source, source_cfg)

    chained = swap_head(source_model, target.task, seed=target_cfg.seed)
    chained = train_with_selection(chained, target.train, target.val, target_cfg)
    m = evaluate(chained, target.val)

    baseline = swap_head(pretrained, target.task, seed=target_cfg.seed)
    baseline = train_with_selection(baseline, target.train, target.val, target_cfg)
    m_base = evaluate(baseline, target.val)

    return TransferResult(
        source_id=source.dataset_id,
        source_task=source.task,
        target_id=target.dataset_id,
        target_task=target.task,
        metric=m,
        baseline_metric=m_base,
        source_domain=source.domain_label,
        target_domain=target.domain_label,
        regime=regime,
        source_train_size=source.train_size,
        seed=target_cfg.seed,
    )


def train_source_model(
    pretrained: ToyModel, source: TaskInstance, cfg: TrainConfig
) -> ToyModel:
    """Fine-tune the pretrained backbone on a source task (fresh head)."""
    model = swap_head(pretrained, source.task, seed=cfg.seed)
    return train_with_selection(model, source.train, source.val, cfg)


@dataclass
class MultiSourceModel:
    """One shared backbone with a separate head per dataset."""

    backbone_w: np.ndarray
    backbone_b: np.ndarray
    heads: dict[str, tuple[np.ndarray, np.ndarray]]
    task: TaskType

    def as_single(self, dataset_id: str) -> ToyModel:
        w, b = self.heads[dataset_id]
        return ToyModel(self.backbone_w, self.backbone_b, w, b, self.task)

    def export_backbone(self, seed: int = 0) -> ToyModel:
        """Only the shared backbone transfers; the head is thrown away."""
        model = ToyModel(
            self.backbone_w.copy(),
            self.backbone_b.copy(),
            np.zeros((self.backbone_w.shape[1], 1)),
            np.zeros(1),
            self.task,
        )
        return swap_head(model, self.task, seed)


def train_multisource(
    pretrained: ToyModel,
    datasets: list[ToyDataset],
    task: TaskType,
    cfg: TrainConfig,
) -> MultiSourceModel:
    """Round-robin batch interleaving over datasets with per-dataset heads."""
    if len(datasets) < 1:
        raise ValueError("need at least one dataset")
    out = head_dim(task)
    heads = {}
    models = {}
    w_b = pretrained.w_backbone.copy()
    b_b = pretrained.b_backbone.copy()
    for ds in datasets:
        # Every head starts from the same seeded draw; with a single dataset
        # this makes multi-source training coincide with plain train().
        head_rng = np.random.default_rng(cfg.seed)
        w_h = head_rng.normal(0, 0.1, (w_b.shape[1], out))
        b_h = np.zeros(out)
        heads[ds.dataset_id] = (w_h, b_h)
        models[ds.dataset_id] = ToyModel(w_b, b_b, w_h, b_h, task)
    # One seeded batch stream per dataset: identical datasets then receive
    # bit-identical batch sequences.
    batch_rngs = {ds.dataset_id: np.random.default_rng(cfg.seed) for ds in datasets}
    # Each round takes one batch per dataset, with every gradient evaluated at
    # the round-start parameters; the backbone moves by the mean gradient.
    # A single dataset therefore reproduces plain train() exactly.
    for step in range(cfg.steps):
        lr = cfg.lr_at(cfg.lr, step)
        round_grads = []
        for ds in datasets:
            model = models[ds.dataset_id]
            idx = batch_rngs[ds.dataset_id].integers(0, len(ds), min(cfg.batch_size, len(ds)))
            loss, grads = batch_gradients(model, ds, idx)
            if not np.isfinite(loss):
                raise RuntimeError(f"multi-source training diverged at step {step}")
            round_grads.append((model, grads))
        for model, grads in round_grads:
            model.w_head -= lr * grads["w_head"]
            model.b_head -= lr * grads["b_head"]
        w_b -= lr * np.mean([g["w_backbone"] for _, g in round_grads], axis=0)
        b_b -= lr * np.mean([g["b_backbone"] for _, g in round_grads], axis=0)
    return MultiSourceModel(w_b, b_b, heads, task)
