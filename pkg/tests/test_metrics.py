import itertools

import numpy as np
import pytest

from xferbench.core import Box, DepthGrid, KeypointInstance, LabelGrid, TaskType, box_iou
from xferbench.metrics import (
    COCO_IOU_THRESHOLDS,
    average_precision,
    coco_map,
    confusion_matrix,
    depth_delta,
    depth_rmse,
    keypoint_ap50,
    mean_iou,
    miou_from_confusion,
    oks,
)


class TestConfusionMatrix:
    def test_perfect_single_class(self):
        g = LabelGrid(np.zeros((2, 2), dtype=np.int64))
        counts = confusion_matrix(g, g, num_classes=2)
        assert counts[0, 0] == 4 and counts.sum() == 4

    def test_all_ignore_gives_zero_matrix(self):
        gt = LabelGrid(np.full((2, 2), 7, dtype=np.int64), ignore_id=7)
        pred = LabelGrid(np.zeros((2, 2), dtype=np.int64))
        assert confusion_matrix(pred, gt, 2).sum() == 0

    def test_hand_counted_entries(self):
        gt = LabelGrid(np.array([[0, 0], [1, 1]]))
        pred = LabelGrid(np.array([[0, 1], [1, 1]]))
        counts = confusion_matrix(pred, gt, 2)
        assert counts[0, 0] == 1
        assert counts[0, 1] == 1
        assert counts[1, 1] == 2
        assert counts[1, 0] == 0

    def test_shape_mismatch(self):
        with pytest.raises(ValueError, match="shape mismatch"):
            confusion_matrix(
                LabelGrid(np.zeros((2, 2), dtype=np.int64)),
                LabelGrid(np.zeros((2, 3), dtype=np.int64)),
                2,
            )


class TestMeanIou:
    def test_perfect(self):
        g = LabelGrid(np.array([[0, 1], [1, 0]]))
        value, _ = mean_iou(g, g, 2)
        assert value.value == 1.0
        assert value.task_type is TaskType.SEMANTIC_SEGMENTATION

    def test_class_disjoint(self):
        gt = LabelGrid(np.zeros((2, 2), dtype=np.int64))
        pred = LabelGrid(np.ones((2, 2), dtype=np.int64))
        value, _ = mean_iou(pred, gt, 2)
        assert value.value == 0.0

    def test_hand_value(self):
        gt = LabelGrid(np.array([[0, 0], [1, 1]]))
        pred = LabelGrid(np.array([[0, 1], [1, 1]]))
        value, ious = mean_iou(pred, gt, 2)
        assert ious[0] == pytest.approx(1 / 2)
        assert ious[1] == pytest.approx(2 / 3)
        assert value.value == pytest.approx((1 / 2 + 2 / 3) / 2)

    def test_all_ignore_error(self):
        gt = LabelGrid(np.full((2, 2), 9, dtype=np.int64), ignore_id=9)
        pred = LabelGrid(np.zeros((2, 2), dtype=np.int64))
        with pytest.raises(ValueError, match="no evaluable pixels"):
            mean_iou(pred, gt, 2)

    def test_absent_classes_excluded(self):
        # Class 2 appears nowhere: the mean covers classes 0 and 1 only.
        gt = LabelGrid(np.array([[0, 1]]))
        value, ious = mean_iou(gt, gt, 3)
        assert np.isnan(ious[2])
        assert value.value == 1.0

    def test_matches_direct_set_computation(self):
        rng = np.random.default_rng(5)
        for _ in range(50):
            c = int(rng.integers(2, 5))
            gt = rng.integers(0, c, (6, 6))
            pred = rng.integers(0, c, (6, 6))
            _, ious = mean_iou(LabelGrid(pred), LabelGrid(gt), c)
            for k in range(c):
                inter = np.sum((gt == k) & (pred == k))
                union = np.sum((gt == k) | (pred == k))
                if union == 0:
                    assert np.isnan(ious[k])
                else:
                    assert ious[k] == pytest.approx(inter / union)


def brute_force_ap(dets, gts, iou_threshold, class_id):
    """All-cutoff PR oracle: for every score cutoff, rerun greedy matching
    on the retained detections and integrate the precision envelope."""
    cdets = [[d for d in img if d.class_id == class_id] for img in dets]
    cgts = [[g for g in img if g.class_id == class_id] for img in gts]
    num_gt = sum(len(g) for g in cgts)
    if num_gt == 0:
        return 0.0
    scores = sorted({d.score for img in cdets for d in img}, reverse=True)
    if not scores:
        return 0.0
    points = []
    for cutoff in scores:
        tp = fp = 0
        for img_dets, img_gts in zip(cdets, cgts):
            kept = sorted(
                (d for d in img_dets if d.score >= cutoff), key=lambda d: -d.score
            )
            used = [False] * len(img_gts)
            for d in kept:
                best_j, best_iou = -1, iou_threshold
                for j, g in enumerate(img_gts):
                    if used[j]:
                        continue
                    iou = box_iou(d, g)
                    if iou < iou_threshold:
                        continue
                    if best_j < 0 or iou > best_iou:
                        best_j, best_iou = j, iou
                if best_j >= 0:
                    used[best_j] = True
                    tp += 1
                else:
                    fp += 1
        points.append((tp / num_gt, tp / max(tp + fp, 1)))
    points.sort()
    ap, prev_r = 0.0, 0.0
    for r, _ in points:
        envelope = max(p for rr, p in points if rr >= r)
        ap += (r - prev_r) * envelope
        prev_r = r
    return ap


def random_scene(rng, n_images=2, max_boxes=6, num_classes=2):
    dets, gts = [], []
    for _ in range(n_images):
        img_d, img_g = [], []
        for _ in range(int(rng.integers(0, max_boxes + 1))):
            img_g.append(
                Box(
                    float(rng.uniform(0, 20)),
                    float(rng.uniform(0, 20)),
                    float(rng.uniform(1, 8)),
                    float(rng.uniform(1, 8)),
                    class_id=int(rng.integers(0, num_classes)),
                )
            )
        for _ in range(int(rng.integers(0, max_boxes + 1))):
            img_d.append(
                Box(
                    float(rng.uniform(0, 20)),
                    float(rng.uniform(0, 20)),
                    float(rng.uniform(1, 8)),
                    float(rng.uniform(1, 8)),
                    class_id=int(rng.integers(0, num_classes)),
                    score=float(rng.uniform(0.05, 1.0)),
                )
            )
        dets.append(img_d)
        gts.append(img_g)
    return dets, gts


class TestAveragePrecision:
    def test_single_perfect_match(self):
        gt = [Box(0, 0, 4, 4)]
        det = [Box(0, 0, 4, 4, score=0.9)]
        assert average_precision([det], [gt], 0.5, 0) == 1.0

    def test_single_miss(self):
        gt = [Box(0, 0, 4, 4)]
        det = [Box(10, 10, 4, 4, score=0.9)]
        assert average_precision([det], [gt], 0.5, 0) == 0.0

    def test_envelope_recovers_trailing_fp(self):
        gt = [Box(0, 0, 4, 4)]
        det = [Box(0, 0, 4, 4, score=0.9), Box(10, 10, 4, 4, score=0.8)]
        assert average_precision([det], [gt], 0.5, 0) == 1.0

    def test_matches_brute_force_oracle(self):
        rng = np.random.default_rng(11)
        for _ in range(150):
            dets, gts = random_scene(rng)
            for c in (0, 1):
                got = average_precision(dets, gts, 0.5, c)
                want = brute_force_ap(dets, gts, 0.5, c)
                assert got == pytest.approx(want, abs=1e-9)

    def test_permutation_invariant_in_image_order(self):
        rng = np.random.default_rng(3)
        dets, gts = random_scene(rng, n_images=4)
        base = average_precision(dets, gts, 0.5, 0)
        for perm in itertools.permutations(range(4)):
            assert average_precision(
                [dets[i] for i in perm], [gts[i] for i in perm], 0.5, 0
            ) == pytest.approx(base)


class TestCocoMap:
    def test_threshold_grid(self):
        assert COCO_IOU_THRESHOLDS == tuple(np.arange(0.50, 0.96, 0.05).round(2))
        assert len(COCO_IOU_THRESHOLDS) == 10

    def test_perfect_detections(self):
        gts = [[Box(0, 0, 4, 4, class_id=0), Box(10, 10, 3, 3, class_id=1)]]
        dets = [[Box(0, 0, 4, 4, class_id=0, score=0.9), Box(10, 10, 3, 3, class_id=1, score=0.8)]]
        assert coco_map(dets, gts).value == 1.0

    def test_empty_detections(self):
        gts = [[Box(0, 0, 4, 4)]]
        assert coco_map([[]], gts).value == 0.0

    def test_single_det_at_iou_072(self):
        # IoU with gt = 0.72: matched at thresholds 0.50..0.70 only -> 5/10.
        gt = Box(0.0, 0.0, 10.0, 10.0)
        det = Box(0.0, 0.0, 10.0, 7.2, score=0.9)
        assert box_iou(det, gt) == pytest.approx(0.72)
        assert coco_map([[det]], [[gt]]).value == pytest.approx(0.5)


class TestOks:
    def box(self):
        return Box(0, 0, 10, 10)

    def test_exact_prediction(self):
        gt = KeypointInstance(np.array([[2.0, 3.0, 1.0], [4.0, 5.0, 1.0]]), self.box())
        assert oks(gt, gt, 10.0, np.array([0.1, 0.1])) == 1.0

    def test_far_prediction(self):
        gt = KeypointInstance(np.array([[2.0, 3.0, 1.0]]), self.box())
        pred = KeypointInstance(np.array([[1e6, 1e6, 1.0]]), self.box())
        assert oks(pred, gt, 10.0, np.array([0.1])) == pytest.approx(0.0, abs=1e-12)

    def test_exponent_hand_value(self):
        # d = k * scale * sqrt(2)  =>  exponent = -1.
        k, scale = 0.2, 5.0
        d = k * scale * np.sqrt(2)
        gt = KeypointInstance(np.array([[0.0, 0.0, 1.0]]), self.box())
        pred = KeypointInstance(np.array([[d, 0.0, 1.0]]), self.box())
        assert oks(pred, gt, scale, np.array([k])) == pytest.approx(np.exp(-1))

    def test_invisible_keypoints_excluded(self):
        gt = KeypointInstance(np.array([[0.0, 0.0, 1.0], [9.0, 9.0, 0.0]]), self.box())
        pred = KeypointInstance(np.array([[0.0, 0.0, 1.0], [0.0, 0.0, 1.0]]), self.box())
        assert oks(pred, gt, 5.0, np.array([0.1, 0.1])) == 1.0

    def test_no_visible_error(self):
        gt = KeypointInstance(np.array([[0.0, 0.0, 0.0]]), self.box())
        with pytest.raises(ValueError, match="no visible"):
            oks(gt, gt, 5.0, np.array([0.1]))


class TestKeypointAp50:
    def test_exact_predictions(self):
        inst = KeypointInstance(np.array([[2.0, 2.0, 1.0], [5.0, 5.0, 1.0]]), Box(0, 0, 8, 8))
        assert keypoint_ap50([[inst]], [[inst]]).value == 1.0

    def test_no_predictions(self):
        inst = KeypointInstance(np.array([[2.0, 2.0, 1.0]]), Box(0, 0, 8, 8))
        assert keypoint_ap50([[]], [[inst]]).value == 0.0

    def test_no_ground_truth_error(self):
        with pytest.raises(ValueError, match="no ground-truth"):
            keypoint_ap50([[]], [[]])


class TestDepthMetrics:
    def test_rmse_perfect(self):
        g = DepthGrid(np.array([[1.0, 2.0], [3.0, 4.0]]))
        m = depth_rmse(g, g)
        assert m.value == 0.0
        assert m.task_type is TaskType.DEPTH_ESTIMATION
        assert not m.higher_is_better

    def test_rmse_constant_error(self):
        gt = DepthGrid(np.full((2, 2), 3.0))
        pred = DepthGrid(np.full((2, 2), 3.5))
        assert depth_rmse(pred, gt).value == pytest.approx(0.5)

    def test_delta_perfect(self):
        g = DepthGrid(np.array([[1.0, 2.0]]))
        assert depth_delta(g, g).value == 1.0

    def test_delta_ratio_over_threshold(self):
        gt = DepthGrid(np.array([[1.0, 2.0]]))
        pred = DepthGrid(np.array([[1.3, 2.6]]))
        assert depth_delta(pred, gt).value == 0.0

    def test_delta_half(self):
        gt = DepthGrid(np.array([[1.0, 1.0], [2.0, 2.0]]))
        pred = DepthGrid(np.array([[1.2, 1.2], [4.0, 4.0]]))
        assert depth_delta(pred, gt).value == pytest.approx(0.5)

    def test_mask_complement_invariance(self):
        rng = np.random.default_rng(4)
        gt_vals = rng.uniform(1, 5, (4, 4))
        pred_vals = rng.uniform(1, 5, (4, 4))
        mask = rng.random((4, 4)) > 0.4
        mask[0, 0] = True
        gt = DepthGrid(gt_vals, mask)
        pred = DepthGrid(pred_vals, mask)
        garbled = pred_vals.copy()
        garbled[~mask] = 999.0
        pred2 = DepthGrid(garbled, mask)
        assert depth_rmse(pred, gt).value == depth_rmse(pred2, gt).value
        assert depth_delta(pred, gt).value == depth_delta(pred2, gt).value

    def test_no_valid_pixels_error(self):
        gt = DepthGrid(np.ones((2, 2)), np.zeros((2, 2), dtype=bool))
        pred = DepthGrid(np.ones((2, 2)))
        with pytest.raises(ValueError, match="no valid pixels"):
            depth_rmse(pred, gt)
