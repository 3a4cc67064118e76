"""Detection mAP with oriented IoU matching and distance-binned breakdown.

Ground truth is first filtered to boxes with more than `min_points_level1`
LiDAR points. Matching is greedy in descending score: each detection takes
the unmatched ground-truth box of highest IoU if that IoU clears the
threshold, otherwise it is a false positive. Average precision integrates
the full precision-recall curve (precision monotonized from the right).

The distance breakdown bins ground truth by the BEV norm of its center,
with bins [lo, hi) so e.g. a box exactly 30 m out falls in the 30-50 m bin.
True positives are attributed to their matched box's bin, false positives
to their own center distance. Empty bins report their AP as absent rather
than 0.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .geom import Box7, boxes_to_array, iou_one_to_many

__all__ = [
    "EvalConfig",
    "MatchResult",
    "BinResult",
    "EvalResult",
    "match",
    "average_precision",
    "evaluate",
    "distance_bin_index",
    "result_to_json",
    "result_csv_rows",
]


@dataclass(frozen=True)
class EvalConfig:
    """Matching threshold/kind, distance bins, and the LEVEL_1 point filter."""

    iou_threshold: float = 0.7
    iou_kind: str = "3d"
    distance_bins: tuple = ((0.0, 30.0), (30.0, 50.0), (50.0, math.inf))
    min_points_level1: int = 5

    def __post_init__(self):
        if not 0.0 < self.iou_threshold <= 1.0:
            raise ValueError("iou_threshold must lie in (0, 1]")
        if self.iou_kind not in ("bev", "3d"):
            raise ValueError(f"unknown IoU kind {self.iou_kind!r}")
        bins = tuple((float(lo), float(hi)) for lo, hi in self.distance_bins)
        for lo, hi in bins:
            if not lo < hi:
                raise ValueError(f"bad distance bin ({lo}, {hi})")
        for (_, hi), (lo, _) in zip(bins, bins[1:]):
            if lo < hi:
                raise ValueError("distance bins must be ascending and non-overlapping")
        object.__setattr__(self, "distance_bins", bins)


@dataclass
class MatchResult:
    """Per-detection matched gt index (-1 for false positives) and per-gt flags."""

    det_gt: np.ndarray
    gt_matched: np.ndarray


def match(dets, gt_boxes, cfg: EvalConfig) -> MatchResult:
    """Greedy score-ordered matching of one scene's detections to ground truth.

    Each detection, in descending score order (ties: earlier index first),
    claims the unmatched ground-truth box with the highest IoU provided that
    IoU >= threshold; each box is claimed at most once.
    """
    det_gt = np.full(len(dets), -1, dtype=np.int64)
    gt_matched = np.zeros(len(gt_boxes), dtype=bool)
    if not dets or not gt_boxes:
        return MatchResult(det_gt, gt_matched)
    gt_arr = boxes_to_array(gt_boxes)
    scores = np.array([d.score for d in dets])
    for di in np.argsort(-scores, kind="stable"):
        ious = iou_one_to_many(dets[di].box, gt_arr, cfg.iou_kind)
        ious[gt_matched] = -1.0
        best = int(np.argmax(ious))  # ties resolve to the lowest gt index
        if ious[best] >= cfg.iou_threshold:
            det_gt[di] = best
            gt_matched[best] = True
    return MatchResult(det_gt, gt_matched)


def average_precision(scores, is_tp, total_gt: int) -> float:
    """All-point AP from ranked detections against total_gt ground truths.

    Sorts by descending score (stable, so callers control tie order),
    monotonizes precision from the right, and sums precision * recall
    increments. total_gt = 0 is degenerate: returns 0.0 with a warning.
    """
    if total_gt < 0:
        raise ValueError("total_gt must be >= 0")
    if total_gt == 0:
        warnings.warn("average precision undefined without ground truth; reporting 0")
        return 0.0
    scores = np.asarray(scores, dtype=float)
    is_tp = np.asarray(is_tp, dtype=bool)
    if scores.shape != is_tp.shape:
        raise ValueError("scores and is_tp must align")
    if scores.size == 0:
        return 0.0
    order = np.argsort(-scores, kind="stable")
    tp = np.cumsum(is_tp[order])
    fp = np.cumsum(~is_tp[order])
    recall = tp / total_gt
    precision = tp / (tp + fp)
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    prev = np.concatenate([[0.0], recall[:-1]])
    return float(np.sum((recall - prev) * envelope))


def pr_curve(scores, is_tp, total_gt: int):
    """Recall and right-monotonized precision samples, for reporting."""
    scores = np.asarray(scores, dtype=float)
    is_tp = np.asarray(is_tp, dtype=bool)
    if scores.size == 0 or total_gt == 0:
        return np.zeros(0), np.zeros(0)
    order = np.argsort(-scores, kind="stable")
    tp = np.cumsum(is_tp[order])
    fp = np.cumsum(~is_tp[order])
    recall = tp / total_gt
    precision = np.maximum.accumulate((tp / (tp + fp))[::-1])[::-1]
    return recall, precision


def distance_bin_index(distance: float, bins) -> int | None:
    """Index of the [lo, hi) bin containing the distance, or None."""
    for i, (lo, hi) in enumerate(bins):
        if lo <= distance < hi:
            return i
    return None


@dataclass
class BinResult:
    lo: float
    hi: float
    ap: float | None
    tp: int
    fp: int
    fn: int
    n_gt: int


@dataclass
class EvalResult:
    overall_ap: float | None
    n_gt: int
    tp: int
    fp: int
    fn: int
    bins: list[BinResult]
    recall: np.ndarray = field(default_factory=lambda: np.zeros(0), repr=False)
    precision: np.ndarray = field(default_factory=lambda: np.zeros(0), repr=False)


def evaluate(scenes, cfg: EvalConfig) -> EvalResult:
    """Match and score a collection of scenes.

    Each scene is a (detections, gt_boxes, gt_point_counts) triple for one
    class. Ground truth with point count <= min_points_level1 is dropped
    before matching. The overall AP ranks all detections across scenes
    deterministically by (score desc, scene index, detection index).
    """
    all_scores: list[float] = []
    all_tp: list[bool] = []
    det_bins: list[int | None] = []
    bins = cfg.distance_bins
    bin_gt = np.zeros(len(bins), dtype=np.int64)
    bin_tp = np.zeros(len(bins), dtype=np.int64)
    total_gt = 0
    for scene_index, (dets, gt_boxes, gt_counts) in enumerate(scenes):
        gt_counts = np.asarray(gt_counts, dtype=np.int64)
        if len(gt_counts) != len(gt_boxes):
            raise ValueError(f"scene {scene_index}: point counts do not align with boxes")
        level1 = [b for b, n in zip(gt_boxes, gt_counts) if n > cfg.min_points_level1]
        total_gt += len(level1)
        gt_dist = [math.hypot(b.cx, b.cy) for b in level1]
        gt_bin = [distance_bin_index(d, bins) for d in gt_dist]
        for bi in gt_bin:
            if bi is not None:
                bin_gt[bi] += 1
        result = match(dets, level1, cfg)
        for di, det in enumerate(dets):
            gi = result.det_gt[di]
            matched = gi >= 0
            all_scores.append(det.score)
            all_tp.append(bool(matched))
            if matched:
                bi = gt_bin[gi]
                if bi is not None:
                    bin_tp[bi] += 1
            else:
                bi = distance_bin_index(math.hypot(det.box.cx, det.box.cy), bins)
            det_bins.append(bi)

    scores = np.asarray(all_scores, dtype=float)
    tps = np.asarray(all_tp, dtype=bool)
    # the append order is (scene, det index); the stable sort in
    # average_precision keeps that order among equal scores
    if total_gt == 0:
        overall = None
        warnings.warn("no ground truth after the point-count filter; AP absent")
        recall = precision = np.zeros(0)
    else:
        overall = average_precision(scores, tps, total_gt)
        recall, precision = pr_curve(scores, tps, total_gt)

    bin_results = []
    det_bins_arr = np.array([-1 if b is None else b for b in det_bins], dtype=np.int64)
    for bi, (lo, hi) in enumerate(bins):
        sel = det_bins_arr == bi
        n_gt = int(bin_gt[bi])
        tp = int(bin_tp[bi])
        fp = int(np.sum(sel & ~tps)) if sel.any() else 0
        if n_gt == 0:
            ap = None
        else:
            ap = average_precision(scores[sel], tps[sel], n_gt)
        bin_results.append(BinResult(lo, hi, ap, tp, fp, n_gt - tp, n_gt))

    return EvalResult(
        overall_ap=overall,
        n_gt=total_gt,
        tp=int(np.sum(tps)),
        fp=int(np.sum(~tps)),
        fn=total_gt - int(np.sum(tps)),
        bins=bin_results,
        recall=recall,
        precision=precision,
    )


def result_to_json(result: EvalResult, class_name: str, iou_kind: str) -> dict:
    """The metrics object: {class, iou_kind, overall_ap, bins: [...]}."""
    return {
        "class": class_name,
        "iou_kind": iou_kind,
        "overall_ap": result.overall_ap,
        "n_gt": result.n_gt,
        "tp": result.tp,
        "fp": result.fp,
        "fn": result.fn,
        "bins": [
            {
                "range": [b.lo, "inf" if math.isinf(b.hi) else b.hi],
                "ap": b.ap,
                "tp": b.tp,
                "fp": b.fp,
                "fn": b.fn,
            }
            for b in result.bins
        ],
    }


def result_csv_rows(result: EvalResult, class_name: str):
    """CSV mirror of the metrics JSON, one row per bin plus an overall row."""
    rows = [("class", "bin_lo", "bin_hi", "ap", "tp", "fp", "fn", "n_gt")]
    rows.append(
        (class_name, "", "", _fmt_ap(result.overall_ap), result.tp, result.fp, result.fn, result.n_gt)
    )
    for b in result.bins:
        hi = "inf" if math.isinf(b.hi) else b.hi
        rows.append((class_name, b.lo, hi, _fmt_ap(b.ap), b.tp, b.fp, b.fn, b.n_gt))
    return rows


def _fmt_ap(ap):
    return "" if ap is None else ap
