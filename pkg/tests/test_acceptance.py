"""Acceptance gate: one test per release criterion.

Each criterion reports a single "ACCEPTANCE n PASS/FAIL" line in the
terminal summary. Oracles here are deliberately independent of the
implementations under test (brute-force enumeration, pure-Python pair
counting, all-cutoff PR curves).
"""

import functools
import itertools
import time

import numpy as np
import pytest

from conftest import finite_diff_check, record_acceptance
from test_metrics import brute_force_ap, random_scene
from xferbench import centernet, harness
from xferbench.centernet import (
    decode_detections,
    decode_keypoints,
    encode_detection_targets,
    encode_keypoint_targets,
    focal_loss,
    masked_l1_loss,
    total_detection_loss,
    total_keypoint_loss,
)
from xferbench.config import config_from_dict, default_study_config
from xferbench.core import Box, DepthGrid, FeatureSet, KeypointInstance, LabelGrid, TaskType, box_iou
from xferbench.dense import (
    depth_l1_loss,
    depth_smoothness_loss,
    depth_total_loss,
    segmentation_nll,
    softplus,
    softplus_grad,
)
from xferbench.distance import AssignmentStrategy, domain_distance, hungarian
from xferbench.gains import (
    GainLevel,
    TransferResult,
    aggregate_levels,
    best_source_per_target,
    classify_level,
    gain_record,
    kendall_tau,
    relative_gain,
)
from xferbench.metrics import MetricValue, average_precision, coco_map


def criterion(n, description):
    def deco(fn):
        @functools.wraps(fn)
        def wrapper(*args, **kwargs):
            try:
                result = fn(*args, **kwargs)
            except BaseException:
                record_acceptance(f"ACCEPTANCE {n:2d} FAIL  {description}")
                raise
            record_acceptance(f"ACCEPTANCE {n:2d} PASS  {description}")
            return result

        return wrapper

    return deco


@criterion(1, "Hungarian matches brute-force enumeration (1000 trials, n <= 7)")
def test_criterion_01_hungarian_brute_force():
    start = time.perf_counter()
    rng = np.random.default_rng(101)
    for _ in range(1000):
        n = int(rng.integers(1, 8))
        cost = rng.uniform(0, 10, (n, n))
        perm = hungarian(cost)
        got = float(cost[np.arange(n), perm].sum())
        perms = np.array(list(itertools.permutations(range(n))))
        want = float(cost[np.arange(n), perms].sum(axis=1).min())
        assert got == pytest.approx(want, abs=1e-10)
    assert time.perf_counter() - start < 10.0


def _tau_b_oracle(x, y):
    """Pure-Python tie-corrected tau-b by explicit pair enumeration."""
    n = len(x)
    concordant = discordant = ties_x = ties_y = 0
    for i in range(n):
        for j in range(i + 1, n):
            dx = x[i] - x[j]
            dy = y[i] - y[j]
            if dx == 0:
                ties_x += 1
            if dy == 0:
                ties_y += 1
            if dx * dy > 0:
                concordant += 1
            elif dx * dy < 0:
                discordant += 1
    n0 = n * (n - 1) // 2
    import math

    return (concordant - discordant) / math.sqrt((n0 - ties_x) * (n0 - ties_y))


@criterion(2, "Kendall tau-b matches pair-counting oracle (500 vectors, ties)")
def test_criterion_02_kendall_tau_oracle():
    start = time.perf_counter()
    rng = np.random.default_rng(102)
    checked = 0
    while checked < 500:
        n = int(rng.integers(2, 201))
        # small integer alphabets force heavy ties
        levels = int(rng.integers(2, 12))
        x = rng.integers(0, levels, n).astype(float)
        y = rng.integers(0, levels, n).astype(float)
        if np.all(x == x[0]) or np.all(y == y[0]):
            continue
        assert kendall_tau(x, y) == pytest.approx(_tau_b_oracle(x, y), abs=1e-12)
        checked += 1
    assert time.perf_counter() - start < 30.0


@criterion(3, "relative gain examples and level boundaries")
def test_criterion_03_gain_examples_and_boundaries():
    seg = TaskType.SEMANTIC_SEGMENTATION
    depth = TaskType.DEPTH_ESTIMATION
    assert relative_gain(MetricValue(seg, 0.5), MetricValue(seg, 0.5)) == 0.0
    assert relative_gain(MetricValue(seg, 0.55), MetricValue(seg, 0.50)) == pytest.approx(10.0)
    assert relative_gain(MetricValue(depth, 0.45), MetricValue(depth, 0.50)) == pytest.approx(10.0)
    table = {
        -2.01: GainLevel.NEGATIVE,
        -2.0: GainLevel.INSIGNIFICANT,
        2.0: GainLevel.INSIGNIFICANT,
        2.01: GainLevel.POSITIVE,
        10.0: GainLevel.POSITIVE,
        10.01: GainLevel.VERY_POSITIVE,
    }
    for r, level in table.items():
        assert classify_level(r) is level


@criterion(4, "all losses pass finite-difference gradient checks (100 each)")
def test_criterion_04_loss_gradients():
    start = time.perf_counter()
    rng = np.random.default_rng(104)
    grid = 6

    def random_targets():
        boxes = [
            Box(
                float(rng.uniform(0, 12)),
                float(rng.uniform(0, 12)),
                float(rng.uniform(4, 10)),
                float(rng.uniform(4, 10)),
                class_id=int(rng.integers(0, 2)),
            )
        ]
        return encode_detection_targets(boxes, 2, grid, grid, stride=4)

    for _ in range(100):
        t = random_targets()

        pred_hm = rng.uniform(0.05, 0.95, t.heatmap.shape)
        finite_diff_check(lambda x: focal_loss(x, t.heatmap), pred_hm, n_probe=4, rng=rng)

        # keep L1 arguments away from the |.| kink
        pred_off = t.offset + rng.choice([-1.0, 1.0], t.offset.shape) * rng.uniform(
            0.1, 1.0, t.offset.shape
        )
        finite_diff_check(
            lambda x: masked_l1_loss(x, t.offset, t.center_mask), pred_off, n_probe=4, rng=rng
        )

        pred_size = t.size + rng.choice([-1.0, 1.0], t.size.shape) * rng.uniform(
            0.1, 1.0, t.size.shape
        )

        def total_det(x):
            loss, (g_hm, g_off, g_size) = total_detection_loss(x, pred_off, pred_size, t)
            return loss, g_hm

        finite_diff_check(total_det, pred_hm, n_probe=4, rng=rng)

        logits = rng.normal(0, 1, (4, 4, 3))
        gt_seg = LabelGrid(rng.integers(0, 3, (4, 4)))
        finite_diff_check(lambda x: segmentation_nll(x, gt_seg), logits, n_probe=4, rng=rng)

        gt_depth = DepthGrid(rng.uniform(1, 5, (4, 4)))
        pred_depth = rng.uniform(1, 5, (4, 4))
        finite_diff_check(
            lambda x: depth_l1_loss(DepthGrid(x), gt_depth), pred_depth, n_probe=4, rng=rng
        )
        finite_diff_check(
            lambda x: depth_smoothness_loss(DepthGrid(x), gt_depth), pred_depth, n_probe=4, rng=rng
        )
        finite_diff_check(
            lambda x: depth_total_loss(DepthGrid(x), gt_depth), pred_depth, n_probe=4, rng=rng
        )

        # depth objective through the softplus output nonlinearity
        raw = rng.normal(1, 1, (4, 4))

        def through_softplus(x):
            loss, grad = depth_total_loss(DepthGrid(softplus(x)), gt_depth)
            return loss, grad * softplus_grad(x)

        finite_diff_check(through_softplus, raw, n_probe=4, rng=rng)

        inst = KeypointInstance(
            np.array([[10.0, 10.0, 1.0], [14.0, 12.0, 1.0]]), Box(6.0, 6.0, 12.0, 12.0)
        )
        kp_t, _ = encode_keypoint_targets([inst], 2, grid, grid, stride=4)
        pred_kp_hm = rng.uniform(0.05, 0.95, kp_t.kp_heatmap.shape)

        def total_kp(x):
            loss, (g_hm, _, _) = total_keypoint_loss(
                x,
                kp_t.kp_offset + 0.5,
                kp_t.allocation + 0.5,
                kp_t,
            )
            return loss, g_hm

        finite_diff_check(total_kp, pred_kp_hm, n_probe=4, rng=rng)

    assert time.perf_counter() - start < 60.0


def _random_detection_scene(rng, grid=16, stride=4, num_classes=2):
    boxes = []
    used = set()
    for _ in range(int(rng.integers(1, 5))):
        for _attempt in range(20):
            w = float(rng.uniform(4, 14))
            h = float(rng.uniform(4, 14))
            x = float(rng.uniform(0, grid * stride - w - 1))
            y = float(rng.uniform(0, grid * stride - h - 1))
            b = Box(x, y, w, h, class_id=int(rng.integers(0, num_classes)))
            cx, cy = b.center
            cell = (b.class_id, int(cy / stride), int(cx / stride))
            # the offset/size maps are shared across classes, so all center
            # cells must be distinct; same-class cells must not be adjacent
            # or the strict 3x3 peak rule cannot separate them
            clashes = any(
                (r, q) == cell[1:]
                or (c == cell[0] and abs(r - cell[1]) <= 1 and abs(q - cell[2]) <= 1)
                for c, r, q in used
            )
            if not clashes:
                used.add(cell)
                boxes.append(b)
                break
    return boxes


@criterion(5, "encode -> decode round trip exact on 200 random scenes")
def test_criterion_05_codec_round_trip():
    rng = np.random.default_rng(105)
    grid, stride = 16, 4
    for scene in range(200):
        boxes = _random_detection_scene(rng, grid, stride)
        t = encode_detection_targets(boxes, 2, grid, grid, stride)
        dets = decode_detections(t.heatmap, t.offset, t.size, stride=stride)
        assert len(dets) == len(boxes)
        for b in boxes:
            match = min(
                (d for d in dets if d.class_id == b.class_id),
                key=lambda d: abs(d.box.x - b.x) + abs(d.box.y - b.y),
            )
            assert match.box.center == pytest.approx(b.center, abs=1e-6)
            assert (match.box.w, match.box.h) == pytest.approx((b.w, b.h), abs=1e-6)

        # keypoint round trip: one instance, all keypoints strictly in-box
        bw, bh = float(rng.uniform(16, 28)), float(rng.uniform(16, 28))
        bx = float(rng.uniform(1, grid * stride - bw - 2))
        by = float(rng.uniform(1, grid * stride - bh - 2))
        # the sub-pixel offset map is shared, so keypoints must occupy
        # distinct feature cells for an exact round trip
        kp_list = []
        kp_cells = set()
        while len(kp_list) < 4:
            x = bx + float(rng.uniform(1, bw - 1))
            y = by + float(rng.uniform(1, bh - 1))
            cell = (int(x / stride), int(y / stride))
            if cell not in kp_cells:
                kp_cells.add(cell)
                kp_list.append([x, y, 1.0])
        kps = np.array(kp_list)
        inst = KeypointInstance(kps, Box(bx, by, bw, bh))
        kp_t, det_t = encode_keypoint_targets([inst], 4, grid, grid, stride)
        out = decode_keypoints(
            det_t.heatmap,
            det_t.offset,
            det_t.size,
            kp_t.kp_heatmap,
            kp_t.kp_offset,
            kp_t.allocation,
            stride=stride,
        )
        assert len(out) == 1
        assert out[0].keypoints[:, :2] == pytest.approx(kps[:, :2], abs=1e-6)


@criterion(6, "AP matches all-cutoff PR oracle (500 scenes); IoU-0.72 example")
def test_criterion_06_average_precision_oracle():
    rng = np.random.default_rng(106)
    for _ in range(500):
        dets, gts = random_scene(rng)
        for c in (0, 1):
            got = average_precision(dets, gts, 0.5, c)
            want = brute_force_ap(dets, gts, 0.5, c)
            assert got == pytest.approx(want, abs=1e-9)
    gt = Box(0.0, 0.0, 10.0, 10.0)
    det = Box(0.0, 0.0, 10.0, 7.2, score=0.9)
    assert box_iou(det, gt) == pytest.approx(0.72)
    assert coco_map([[det]], [[gt]]).value == pytest.approx(0.5)


@criterion(7, "domain-distance identities and the 1-D worked example")
def test_criterion_07_domain_distance_properties():
    rng = np.random.default_rng(107)

    def fs(vals, dataset_id="d"):
        return FeatureSet(dataset_id, "dom", np.asarray(vals, dtype=np.float32))

    f = fs(rng.normal(0, 1, (10, 3)))
    for strategy in AssignmentStrategy:
        assert domain_distance(f, f, strategy) == 0.0

    for _ in range(25):
        a = fs(rng.normal(0, 1, (int(rng.integers(1, 9)), 3)), "a")
        b = fs(rng.normal(0, 1, (int(rng.integers(1, 9)), 3)), "b")
        assert domain_distance(a, b, AssignmentStrategy.SYMMETRIC_AVERAGE) == domain_distance(
            b, a, AssignmentStrategy.SYMMETRIC_AVERAGE
        )

    target = fs([[0.0, 0.0], [1.0, 1.0]], "t")
    superset = fs([[0.0, 0.0], [1.0, 1.0], [50.0, 50.0]], "s")
    assert domain_distance(target, superset, AssignmentStrategy.TARGET_TO_CLOSEST_SOURCE) == 0.0

    t1 = fs([[0.0], [10.0]], "t1")
    s1 = fs([[1.0], [10.0]], "s1")
    for strategy in (
        AssignmentStrategy.TARGET_TO_CLOSEST_SOURCE,
        AssignmentStrategy.SOURCE_TO_CLOSEST_TARGET,
        AssignmentStrategy.EMD_ONE_TO_ONE,
        AssignmentStrategy.SYMMETRIC_AVERAGE,
    ):
        assert domain_distance(t1, s1, strategy) == pytest.approx(0.5)


def _fixture_record(r, source, target, seed, source_domain="d1"):
    task = TaskType.SEMANTIC_SEGMENTATION
    res = TransferResult(
        source_id=source,
        source_task=task,
        target_id=target,
        target_task=task,
        metric=MetricValue(task, 0.5 * (1 + r / 100.0)),
        baseline_metric=MetricValue(task, 0.5),
        source_domain=source_domain,
        target_domain="d1",
        seed=seed,
    )
    return gain_record(res)


@criterion(8, "24-record fixture aggregates match hand counts; VP nested in P")
def test_criterion_08_fixture_aggregates():
    # 2 targets x 4 sources x 3 seeds; s4 is the only cross-domain source.
    per_source_r = {
        "s1": [15.0, 12.0, 11.0],  # all VP
        "s2": [5.0, 4.0, 3.0],  # all P (not VP)
        "s3": [0.0, 1.0, -1.0],  # all I
        "s4": [-5.0, -3.0, -4.0],  # all N, cross-domain
    }
    records = []
    for target in ("t1", "t2"):
        for source, rs in per_source_r.items():
            for seed, r in enumerate(rs):
                records.append(
                    _fixture_record(
                        r,
                        source,
                        target,
                        seed,
                        source_domain="d2" if source == "s4" else "d1",
                    )
                )
    assert len(records) == 24

    overall = aggregate_levels(records)
    assert overall.count == 24
    assert overall.pct_p == pytest.approx(50.0)  # 6 VP + 6 P of 24
    assert overall.pct_vp == pytest.approx(25.0)
    assert overall.pct_n == pytest.approx(25.0)

    within = aggregate_levels(records, domain_filter="within")
    assert within.count == 18
    assert within.pct_p == pytest.approx(12 / 18 * 100)
    assert within.pct_n == 0.0

    cross = aggregate_levels(records, domain_filter="cross")
    assert cross.count == 6
    assert cross.pct_n == 100.0

    best = best_source_per_target(records)
    assert len(best) == 2
    assert {b.result.source_id for b in best} == {"s1"}
    best_row = aggregate_levels(best)
    assert best_row.pct_vp == 100.0

    for row in (overall, within, cross, best_row):
        assert row.pct_vp <= row.pct_p


@pytest.fixture(scope="module")
def study_records(tmp_path_factory):
    """The default domain study over its 5 seeds, plus distance matrices."""
    cfg = default_study_config()
    out = tmp_path_factory.mktemp("study")
    harness.run_chains(cfg, out, seeds=cfg.seeds)
    records = harness.gain_records_from_store(out)
    distances = harness.compute_distances(cfg)
    return cfg, records, distances


@criterion(9, "toy study: within-domain beats cross; inclusion tau ranks first")
def test_criterion_09_domain_study_direction(study_records):
    start = time.perf_counter()
    cfg, records, distances = study_records
    assert len(cfg.seeds) >= 5

    within = [r.r for r in records if r.within_domain]
    cross = [r.r for r in records if not r.within_domain]
    assert within and cross
    assert np.mean(within) > np.mean(cross)

    # every source in this study has the same training size, so size tau is
    # degenerate; correlate gains against negated distance per strategy only
    rs = np.array([rec.r for rec in records])

    def tau_for(strategy):
        matrix = distances[strategy]
        dvals = np.array(
            [matrix[rec.result.target_id, rec.result.source_id] for rec in records]
        )
        return kendall_tau(rs, -dvals)

    tau_inclusion = tau_for(AssignmentStrategy.TARGET_TO_CLOSEST_SOURCE)
    tau_source_to_target = tau_for(AssignmentStrategy.SOURCE_TO_CLOSEST_TARGET)
    assert tau_inclusion > tau_source_to_target
    assert time.perf_counter() - start < 300.0


@criterion(10, "toy study: larger same-domain sources transfer at least as well")
def test_criterion_10_source_size_direction(tmp_path):
    seg = TaskType.SEMANTIC_SEGMENTATION.value
    cfg = config_from_dict(
        {
            "experiment": {"id": "size-study", "seeds": [0, 1, 2, 3, 4]},
            "domains": {
                "narrow_a": {"palette": 0, "seed": 11},
                "narrow_b": {"palette": 1, "seed": 12},
                "pretrain": {"mixture": ["narrow_a", "narrow_b"], "seed": 15},
            },
            "datasets": {
                "seg_small": {"domain": "narrow_a", "task": seg, "n_train": 2},
                "seg_large": {"domain": "narrow_a", "task": seg, "n_train": 96},
                "seg_target": {"domain": "narrow_a", "task": seg, "n_train": 12},
                "pretrain_ds": {"domain": "pretrain", "task": seg, "n_train": 128},
            },
            "pretrain": {"domain": "pretrain", "steps": 250, "lr": 0.3},
            "train": {
                "source": {"steps": 250, "lr": 0.3},
                "target": {"steps": 30, "lr": 0.3},
            },
            "chains": {"sources": ["seg_small", "seg_large"], "targets": ["seg_target"]},
        }
    )
    harness.run_chains(cfg, tmp_path, seeds=cfg.seeds)
    records = harness.gain_records_from_store(tmp_path)
    small = [r.r for r in records if r.result.source_id == "seg_small"]
    large = [r.r for r in records if r.result.source_id == "seg_large"]
    assert len(small) == len(large) == 5
    assert np.mean(large) >= np.mean(small)


@criterion(11, "identical config + seed gives byte-identical result stores")
def test_criterion_11_bit_reproducibility(tmp_path):
    cfg = default_study_config()
    raws = []
    for name in ("run1", "run2"):
        out = tmp_path / name
        harness.run_chains(cfg, out, seeds=(0,), jobs=1)
        raws.append((out / "results.jsonl").read_bytes())
    assert raws[0] == raws[1]
