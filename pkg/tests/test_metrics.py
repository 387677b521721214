import numpy as np
import pytest

from tribranch.core import IGNORE_ID, InstanceDetection
from tribranch.metrics import (AP_OVERLAP_THRESHOLDS, CarDepthPair,
                               ConfusionMatrix, GroundTruthInstances,
                               depth_errors, instance_ap, iou_scores,
                               mask_iou, per_car_depth_table, per_car_summary)


def det(mask, class_id=0, confidence=0.9):
    return InstanceDetection(mask=mask, class_id=class_id,
                             confidence=confidence)


def box_mask(h, w, y0, x0, y1, x1):
    m = np.zeros((h, w), dtype=bool)
    m[y0:y1, x0:x1] = True
    return m


class TestConfusionAndIoU:
    def test_perfect_prediction(self):
        cm = ConfusionMatrix(3)
        labels = np.array([[0, 1], [2, 1]])
        cm.update(labels, labels)
        report = iou_scores(cm)
        np.testing.assert_array_equal(report.per_class, [1.0, 1.0, 1.0])
        assert report.mean_class == 1.0

    def test_half_overlap_gives_one_third(self):
        # Class 0: two gt pixels, prediction covers one plus one false positive.
        cm = ConfusionMatrix(2)
        cm.update(true=np.array([0, 0, 1]), pred=np.array([0, 1, 0]))
        report = iou_scores(cm)
        assert report.per_class[0] == pytest.approx(1 / 3)

    def test_ignored_pixels_not_counted(self):
        cm = ConfusionMatrix(2)
        cm.update(np.array([0, IGNORE_ID]), np.array([0, 1]))
        assert cm.total == 1

    def test_total_matches_evaluated_pixels(self):
        rng = np.random.default_rng(0)
        cm = ConfusionMatrix(4)
        t = rng.integers(0, 4, size=(20, 20))
        t[rng.random((20, 20)) < 0.2] = IGNORE_ID
        p = rng.integers(0, 4, size=(20, 20))
        cm.update(t, p)
        assert cm.total == int((t != IGNORE_ID).sum())

    def test_unseen_class_excluded_from_mean(self):
        cm = ConfusionMatrix(3)
        cm.update(np.array([0, 1]), np.array([0, 1]))
        report = iou_scores(cm)
        assert np.isnan(report.per_class[2])
        assert report.mean_class == 1.0

    def test_category_collapse_recovers_intra_category_errors(self):
        # Classes 0 and 1 fully swapped: each IoU 0, same category IoU 1.
        cm = ConfusionMatrix(2)
        cm.update(np.array([0, 1]), np.array([1, 0]))
        report = iou_scores(cm, category_map=[0, 0])
        np.testing.assert_array_equal(report.per_class, [0.0, 0.0])
        assert report.per_category[0] == 1.0

    def test_all_empty_unions_rejected(self):
        with pytest.raises(ValueError):
            iou_scores(ConfusionMatrix(2))

    def test_merge(self):
        a, b = ConfusionMatrix(2), ConfusionMatrix(2)
        a.update(np.array([0]), np.array([0]))
        b.update(np.array([1]), np.array([0]))
        a.merge(b)
        assert a.total == 2


class TestInstanceAP:
    def test_iou_point_six_detection(self):
        # Ground truth 5 px, detection its first 3 px: IoU 3/5 = 0.6.
        gt_map = np.zeros((1, 10), dtype=np.int32)
        gt_map[0, :5] = 1
        pred = np.zeros((1, 10), dtype=bool)
        pred[0, :3] = True
        assert mask_iou(pred, gt_map == 1) == pytest.approx(0.6)
        gt = GroundTruthInstances(gt_map, {1: 0})
        report = instance_ap([[det(pred, confidence=0.9)]], [gt],
                             overlap_thresholds=(0.5, 0.75))
        assert report.ap50 == 1.0
        assert report.per_threshold[0.75] == 0.0

    def test_detections_identical_to_gt(self):
        gt_map = np.zeros((8, 8), dtype=np.int32)
        gt_map[0:3, 0:3] = 1
        gt_map[5:8, 5:8] = 2
        dets = [det(gt_map == 1, confidence=0.9),
                det(gt_map == 2, confidence=0.8)]
        report = instance_ap([dets], [GroundTruthInstances(gt_map, {1: 0, 2: 0})])
        assert report.ap == 1.0
        assert report.ap50 == 1.0

    def test_zero_detections(self):
        gt_map = np.zeros((4, 4), dtype=np.int32)
        gt_map[:2, :2] = 1
        report = instance_ap([[]], [GroundTruthInstances(gt_map, {1: 0})])
        assert report.ap == 0.0

    def test_no_ground_truth_raises(self):
        gt_map = np.zeros((4, 4), dtype=np.int32)
        with pytest.raises(ValueError):
            instance_ap([[]], [GroundTruthInstances(gt_map, {})])

    def test_monotone_in_threshold(self):
        rng = np.random.default_rng(1)
        for _ in range(10):
            gt_map = np.zeros((16, 16), dtype=np.int32)
            gt_map[1:7, 1:7] = 1
            gt_map[9:15, 9:15] = 2
            dets = []
            for _ in range(int(rng.integers(1, 5))):
                y, x = rng.integers(0, 10, size=2)
                h, w = rng.integers(3, 7, size=2)
                dets.append(det(box_mask(16, 16, y, x, y + h, x + w),
                                confidence=float(rng.random())))
            report = instance_ap([dets], [GroundTruthInstances(gt_map,
                                                               {1: 0, 2: 0})])
            values = [report.per_threshold[t] for t in sorted(report.per_threshold)]
            assert all(a >= b - 1e-12 for a, b in zip(values, values[1:]))

    def test_gt_relabeling_invariance(self):
        gt_map = np.zeros((8, 8), dtype=np.int32)
        gt_map[0:3, 0:3] = 1
        gt_map[5:8, 5:8] = 2
        relabeled = np.where(gt_map == 1, 9, np.where(gt_map == 2, 4, 0))
        dets = [det(gt_map == 1, confidence=0.7)]
        a = instance_ap([dets], [GroundTruthInstances(gt_map, {1: 0, 2: 0})])
        b = instance_ap([dets], [GroundTruthInstances(relabeled, {9: 0, 4: 0})])
        assert a.ap == b.ap

    def test_equal_confidence_larger_mask_first(self):
        gt_map = np.zeros((8, 8), dtype=np.int32)
        gt_map[0:4, 0:8] = 1   # 32 px
        big = gt_map == 1
        small = box_mask(8, 8, 0, 0, 2, 8)   # IoU 0.5 subset
        dets = [det(small, confidence=0.5), det(big, confidence=0.5)]
        report = instance_ap([dets], [GroundTruthInstances(gt_map, {1: 0})],
                             overlap_thresholds=(0.5,))
        # The larger (perfect) mask is ranked first, so precision stays 1 at
        # the match and AP is 1 despite the listed order.
        assert report.ap == 1.0

    def test_each_gt_matched_once(self):
        gt_map = np.zeros((4, 4), dtype=np.int32)
        gt_map[:, :2] = 1
        mask = gt_map == 1
        dets = [det(mask, confidence=0.9), det(mask, confidence=0.8)]
        report = instance_ap([dets], [GroundTruthInstances(gt_map, {1: 0})],
                             overlap_thresholds=(0.5,))
        # Second duplicate is a false positive: precision 1 at recall 1.
        assert report.ap50 == 1.0

    def test_mean_over_thresholds(self):
        assert len(AP_OVERLAP_THRESHOLDS) == 10
        assert AP_OVERLAP_THRESHOLDS[0] == 0.5
        assert AP_OVERLAP_THRESHOLDS[-1] == pytest.approx(0.95)

    def test_average_over_classes(self):
        # Class 0 matched perfectly, class 1 missed entirely: AP = 0.5.
        gt_map = np.zeros((8, 8), dtype=np.int32)
        gt_map[0:3, 0:3] = 1
        gt_map[5:8, 5:8] = 2
        dets = [det(gt_map == 1, class_id=0, confidence=0.9)]
        report = instance_ap([dets],
                             [GroundTruthInstances(gt_map, {1: 0, 2: 1})],
                             overlap_thresholds=(0.5,))
        assert report.ap50 == pytest.approx(0.5)

    def test_wrong_class_detection_never_matches(self):
        gt_map = np.zeros((4, 4), dtype=np.int32)
        gt_map[:2, :2] = 1
        dets = [det(gt_map == 1, class_id=3, confidence=0.9)]
        report = instance_ap([dets], [GroundTruthInstances(gt_map, {1: 0})],
                             overlap_thresholds=(0.5,))
        assert report.ap50 == 0.0


class TestDepthErrors:
    def test_perfect(self):
        gt = np.full((4, 4), 10.0)
        e = depth_errors(gt, gt, np.ones((4, 4), bool))
        assert (e.mae, e.rmse, e.ard) == (0.0, 0.0, 0.0)

    def test_constant_offset(self):
        gt = np.full(4, 10.0)
        pred = gt + 1.0
        e = depth_errors(pred, gt, np.ones(4, bool))
        assert e.mae == pytest.approx(1.0)
        assert e.rmse == pytest.approx(1.0)
        assert e.ard == pytest.approx(0.1)

    def test_mixed_residuals(self):
        gt = np.array([10.0, 10.0])
        pred = np.array([10.0, 12.0])
        e = depth_errors(pred, gt, np.ones(2, bool))
        assert e.mae == pytest.approx(1.0)
        assert e.rmse == pytest.approx(np.sqrt(2))

    def test_rmse_at_least_mae(self):
        rng = np.random.default_rng(2)
        for _ in range(30):
            gt = rng.uniform(1, 50, size=40)
            pred = gt + rng.normal(scale=3, size=40)
            e = depth_errors(pred, gt, np.ones(40, bool))
            assert e.rmse >= e.mae
            assert e.ard >= 0

    def test_cap_filters(self):
        gt = np.array([10.0, 200.0])
        pred = np.array([11.0, 100.0])
        e = depth_errors(pred, gt, np.ones(2, bool), cap=100.0)
        assert e.count == 1
        assert e.mae == pytest.approx(1.0)

    def test_no_pixels_raises(self):
        with pytest.raises(ValueError):
            depth_errors(np.ones(2), np.ones(2), np.zeros(2, bool))
        with pytest.raises(ValueError):
            depth_errors(np.array([1.0]), np.array([200.0]),
                         np.ones(1, bool), cap=100.0)


class TestPerCarDepth:
    def test_constant_pooling(self):
        instances = np.zeros((4, 4), dtype=np.int32)
        instances[1:3, 1:3] = 1
        gt = np.full((4, 4), 12.0)
        pred = np.full((4, 4), 10.0)
        pairs, skipped = per_car_depth_table(pred, instances, gt,
                                             np.ones((4, 4), bool))
        assert skipped == 0
        assert len(pairs) == 1
        assert pairs[0].gt_depth == pytest.approx(12.0)
        assert pairs[0].pred_depth == pytest.approx(10.0)
        assert pairs[0].pixel_count == 4

    def test_fully_invalid_instance_skipped(self):
        instances = np.zeros((4, 4), dtype=np.int32)
        instances[0, 0] = 1
        valid = np.ones((4, 4), dtype=bool)
        valid[0, 0] = False
        pairs, skipped = per_car_depth_table(np.ones((4, 4)), instances,
                                             np.ones((4, 4)), valid)
        assert pairs == []
        assert skipped == 1

    def test_two_cars_two_pairs(self):
        instances = np.zeros((4, 8), dtype=np.int32)
        instances[:2, :4] = 1
        instances[2:, 4:] = 2
        gt = np.where(instances == 1, 5.0, np.where(instances == 2, 9.0, 20.0))
        pred = gt + 0.5
        pairs, _ = per_car_depth_table(pred, instances, gt,
                                       np.ones_like(gt, dtype=bool))
        assert [(p.gt_depth, p.pred_depth) for p in pairs] == [(5.0, 5.5),
                                                               (9.0, 9.5)]

    def test_summary_hand_values(self):
        pairs = [CarDepthPair(1, 10.0, 11.0, 5),
                 CarDepthPair(2, 20.0, 18.0, 5)]
        e = per_car_summary(pairs, cap=100.0)
        assert e.mae == pytest.approx(1.5)
        assert e.rmse == pytest.approx(np.sqrt(2.5))
        assert e.ard == pytest.approx(0.1)

    def test_summary_single_perfect_pair(self):
        e = per_car_summary([CarDepthPair(1, 10.0, 10.0, 3)], cap=100.0)
        assert (e.mae, e.rmse, e.ard) == (0.0, 0.0, 0.0)

    def test_summary_cap_filters(self):
        pairs = [CarDepthPair(1, 10.0, 11.0, 5),
                 CarDepthPair(2, 20.0, 18.0, 5)]
        e = per_car_summary(pairs, cap=15.0)
        assert e.count == 1
        assert e.mae == pytest.approx(1.0)

    def test_summary_empty_raises(self):
        with pytest.raises(ValueError):
            per_car_summary([], cap=100.0)
        with pytest.raises(ValueError):
            per_car_summary([CarDepthPair(1, 50.0, 50.0, 1)], cap=25.0)
