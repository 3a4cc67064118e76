import itertools
import math
import warnings

import numpy as np
import pytest

from pillarkit.detect import Detection
from pillarkit.evaluation import (
    EvalConfig,
    average_precision,
    distance_bin_index,
    evaluate,
    match,
    result_csv_rows,
    result_to_json,
)
from pillarkit.geom import Box7, iou_3d, iou_bev


def det(box, score, class_id=0):
    return Detection(box, score, class_id)


def box_at(cx, cy, l=4.0, w=2.0, h=1.5, cz=0.0, theta=0.0):
    return Box7(cx, cy, cz, l, w, h, theta)


def optimal_matching(dets, gt_boxes, cfg):
    """Exhaustive assignment maximizing (matches, total IoU); the oracle."""
    iou_fn = iou_bev if cfg.iou_kind == "bev" else iou_3d
    ious = [[iou_fn(d.box, g) for g in gt_boxes] for d in dets]
    best = (-1, -math.inf, None)
    options = [[-1] + [g for g in range(len(gt_boxes)) if ious[d][g] >= cfg.iou_threshold]
               for d in range(len(dets))]
    for combo in itertools.product(*options):
        used = [g for g in combo if g >= 0]
        if len(used) != len(set(used)):
            continue
        n = len(used)
        total = sum(ious[d][g] for d, g in enumerate(combo) if g >= 0)
        if (n, total) > best[:2]:
            best = (n, total, combo)
    return best[2] if best[2] is not None else tuple([-1] * len(dets))


class TestMatch:
    def test_perfect_detections(self):
        gt = [box_at(0, 0), box_at(20, 0)]
        dets = [det(g, 1.0) for g in gt]
        result = match(dets, gt, EvalConfig())
        assert list(result.det_gt) == [0, 1]
        assert result.gt_matched.all()

    def test_strict_threshold(self):
        gt = [box_at(0, 0, l=2.0, w=1.0)]
        # same center, shrunk length: IoU is exactly the length ratio
        dets = [det(box_at(0, 0, l=2.0 * 0.69, w=1.0), 0.9)]
        assert iou_bev(dets[0].box, gt[0]) == pytest.approx(0.69, abs=1e-12)
        result = match(dets, gt, EvalConfig(iou_threshold=0.7, iou_kind="bev"))
        assert result.det_gt[0] == -1
        assert not result.gt_matched[0]

    def test_greedy_score_order(self):
        gt = [box_at(0, 0)]
        close = det(box_at(0.2, 0), 0.5)
        closer = det(box_at(0.05, 0), 0.9)
        result = match([close, closer], gt, EvalConfig(iou_threshold=0.5, iou_kind="bev"))
        assert result.det_gt[1] == 0  # the higher score claimed the box
        assert result.det_gt[0] == -1

    def test_each_gt_matched_once(self):
        gt = [box_at(0, 0)]
        dets = [det(box_at(0, 0), 0.9), det(box_at(0.01, 0), 0.8)]
        result = match(dets, gt, EvalConfig(iou_threshold=0.5, iou_kind="bev"))
        assert list(result.det_gt) == [0, -1]

    def test_greedy_equals_optimal_on_separated_micro_scenes(self):
        rng = np.random.default_rng(21)
        cfg = EvalConfig(iou_threshold=0.5, iou_kind="bev")
        produced = 0
        while produced < 50:
            n_gt = int(rng.integers(1, 6))
            n_det = int(rng.integers(0, 6))
            gt = [box_at(rng.uniform(-10, 10), rng.uniform(-10, 10), theta=rng.uniform(-3, 3))
                  for _ in range(n_gt)]
            dets = []
            for _ in range(n_det):
                base = gt[rng.integers(0, n_gt)]
                dets.append(
                    det(
                        Box7(
                            base.cx + rng.uniform(-1.5, 1.5),
                            base.cy + rng.uniform(-1.0, 1.0),
                            base.cz,
                            base.l,
                            base.w,
                            base.h,
                            base.theta + rng.uniform(-0.3, 0.3),
                        ),
                        float(rng.uniform(0.1, 1.0)),
                    )
                )
            values = sorted(
                iou_bev(d.box, g) for d in dets for g in gt
            ) + [cfg.iou_threshold]
            gaps_ok = all(b - a > 0.05 or b == a for a, b in zip(values, values[1:]))
            scores = sorted(d.score for d in dets)
            score_gaps = all(b - a > 1e-3 for a, b in zip(scores, scores[1:]))
            if not (gaps_ok and score_gaps):
                continue
            produced += 1
            greedy = match(dets, gt, cfg)
            assert tuple(greedy.det_gt) == optimal_matching(dets, gt, cfg)


class TestAveragePrecision:
    def test_perfect(self):
        assert average_precision([0.9, 0.8], [True, True], 2) == 1.0

    def test_no_detections(self):
        assert average_precision([], [], 3) == 0.0

    def test_hand_computed_case(self):
        # TP FP TP with 2 ground truths: AP = 0.5 * 1 + 0.5 * (2/3)
        ap = average_precision([0.9, 0.8, 0.7], [True, False, True], 2)
        assert ap == 0.5 * 1.0 + 0.5 * (2.0 / 3.0)
        assert abs(ap - 5.0 / 6.0) < 1e-15

    def test_zero_gt_warns(self):
        with pytest.warns(UserWarning):
            assert average_precision([0.5], [False], 0) == 0.0

    def test_rank_only_dependence(self):
        rng = np.random.default_rng(22)
        scores = rng.uniform(0.1, 0.9, 30)
        flags = rng.uniform(size=30) < 0.5
        base = average_precision(scores, flags, 12)
        squashed = average_precision(1 / (1 + np.exp(-7 * scores)), flags, 12)
        assert squashed == pytest.approx(base, abs=1e-12)

    def test_low_fp_never_increases(self):
        scores = [0.9, 0.8, 0.7]
        flags = [True, True, True]
        base = average_precision(scores, flags, 4)
        with_fp = average_precision(scores + [0.1], flags + [False], 4)
        assert with_fp <= base

    def test_added_tp_never_decreases(self):
        scores = [0.9, 0.5]
        flags = [True, False]
        base = average_precision(scores, flags, 4)
        more = average_precision(scores + [0.3], flags + [True], 4)
        assert more >= base


class TestDistanceBins:
    def test_half_open_convention(self):
        bins = EvalConfig().distance_bins
        assert distance_bin_index(0.0, bins) == 0
        assert distance_bin_index(29.999, bins) == 0
        assert distance_bin_index(30.0, bins) == 1  # lower edge of the next bin
        assert distance_bin_index(50.0, bins) == 2
        assert distance_bin_index(1e9, bins) == 2

    def test_validation(self):
        with pytest.raises(ValueError):
            EvalConfig(distance_bins=((0, 30), (20, 50)))
        with pytest.raises(ValueError):
            EvalConfig(distance_bins=((30, 30),))


class TestEvaluate:
    def scene(self, gt, dets, counts=None):
        if counts is None:
            counts = [100] * len(gt)
        return (dets, gt, np.array(counts))

    def test_perfect_detector(self):
        gt = [box_at(5, 0), box_at(0, 40), box_at(60, 0)]
        dets = [det(g, 1.0) for g in gt]
        result = evaluate([self.scene(gt, dets)], EvalConfig(iou_kind="3d"))
        assert result.overall_ap == 1.0
        for b in result.bins:
            assert b.ap == 1.0 and b.fn == 0 and b.fp == 0

    def test_level1_filter_strictly_more_than(self):
        gt = [box_at(5, 0), box_at(9, 0)]
        dets = [det(gt[0], 0.9), det(gt[1], 0.8)]
        result = evaluate([self.scene(gt, dets, counts=[5, 6])], EvalConfig())
        # the 5-point box is dropped: its detection becomes a false positive
        assert result.n_gt == 1
        assert result.tp == 1 and result.fp == 1

    def test_boundary_distance_binning(self):
        gt = [box_at(30.0, 0.0)]
        dets = [det(gt[0], 1.0)]
        result = evaluate([self.scene(gt, dets)], EvalConfig())
        assert result.bins[0].n_gt == 0
        assert result.bins[1].n_gt == 1
        assert result.bins[1].ap == 1.0
        assert result.bins[0].ap is None  # empty bin reports absent

    def test_fp_binned_by_own_distance(self):
        gt = [box_at(5, 0)]
        dets = [det(gt[0], 0.9), det(box_at(40, 0), 0.8)]
        result = evaluate([self.scene(gt, dets)], EvalConfig())
        assert result.bins[0].tp == 1 and result.bins[0].fp == 0
        assert result.bins[1].fp == 1

    def test_counts_consistent(self):
        rng = np.random.default_rng(23)
        scenes = []
        for _ in range(5):
            gt = [box_at(rng.uniform(0, 70), rng.uniform(-20, 20), theta=rng.uniform(-3, 3))
                  for _ in range(4)]
            dets = [det(g, float(rng.uniform(0.5, 1.0))) for g in gt[:3]]
            dets.append(det(box_at(rng.uniform(0, 70), 0), 0.4))
            scenes.append(self.scene(gt, dets))
        result = evaluate(scenes, EvalConfig(iou_kind="bev"))
        for b in result.bins:
            assert b.tp + b.fn == b.n_gt
        assert sum(b.n_gt for b in result.bins) == result.n_gt
        assert result.tp + result.fn == result.n_gt

    def test_no_gt_overall_absent(self):
        with pytest.warns(UserWarning):
            result = evaluate([self.scene([], [det(box_at(0, 0), 0.5)])], EvalConfig())
        assert result.overall_ap is None
        assert result.fp == 1

    def test_multi_scene_merge_is_deterministic(self):
        gt_a = [box_at(5, 0)]
        gt_b = [box_at(0, 5)]
        scenes = [
            self.scene(gt_a, [det(gt_a[0], 0.7), det(box_at(40, 0), 0.7)]),
            self.scene(gt_b, [det(gt_b[0], 0.7)]),
        ]
        a = evaluate(scenes, EvalConfig())
        b = evaluate(scenes, EvalConfig())
        assert a.overall_ap == b.overall_ap


class TestResultExport:
    def test_json_shape(self):
        gt = [box_at(5, 0)]
        result = evaluate([(  [det(gt[0], 1.0)], gt, np.array([50]))], EvalConfig())
        payload = result_to_json(result, "vehicle", "3d")
        assert payload["class"] == "vehicle"
        assert payload["iou_kind"] == "3d"
        assert payload["overall_ap"] == 1.0
        assert len(payload["bins"]) == 3
        assert payload["bins"][2]["range"] == [50.0, "inf"]
        assert set(payload["bins"][0]) == {"range", "ap", "tp", "fp", "fn"}

    def test_csv_rows(self):
        gt = [box_at(5, 0)]
        result = evaluate([([det(gt[0], 1.0)], gt, np.array([50]))], EvalConfig())
        rows = result_csv_rows(result, "vehicle")
        assert rows[0][0] == "class"
        assert len(rows) == 2 + len(result.bins)
        assert rows[1][3] == 1.0  # overall AP
