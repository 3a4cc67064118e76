"""From per-pillar predictions to final detections: decode, NMS, pipeline.

Candidates are decoded one per pillar whose score clears the floor, in flat
pillar order, at the pillar's reference point. Greedy oriented NMS then keeps
the highest-scoring survivors (ties broken by candidate order, i.e. flat
pillar index) up to a cap.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .geom import Box7, boxes_to_array, iou_one_to_many, wrap_angle
from .pillars import build_grid
from .targets import Label, assign_pillar
from .views import ViewSpec, bin_center_grid

__all__ = [
    "Detection",
    "NmsConfig",
    "decode_map",
    "nms",
    "run_pipeline",
    "write_detections_jsonl",
    "read_detections_jsonl",
    "ORACLE_SCORE_FLOOR",
]

# Score floor used when decoding oracle assignments, where positives carry
# probability 1 and everything else 0: keeps only the positive pillars.
ORACLE_SCORE_FLOOR = 0.5


@dataclass(frozen=True)
class Detection:
    box: Box7
    score: float
    class_id: int = 0


@dataclass(frozen=True)
class NmsConfig:
    """Greedy NMS settings; the vehicle default threshold is 0.7 (0.2 suits
    pedestrians), keeping at most the top 200 boxes."""

    iou_threshold: float = 0.7
    max_keep: int = 200
    score_floor: float = 0.0

    def __post_init__(self):
        if not 0.0 < self.iou_threshold <= 1.0:
            raise ValueError("iou_threshold must lie in (0, 1]")
        if self.max_keep < 1:
            raise ValueError("max_keep must be >= 1")


def decode_map(scores, targets, spec: ViewSpec, score_floor: float = 0.0, class_id: int = 0):
    """Decode one candidate per pillar with score >= score_floor.

    scores is (H, W) and targets (H, W, 7) in codec order; each candidate is
    decoded at its pillar's reference point (bin center, depth midpoint).
    Output ordering follows the flat pillar index.
    """
    scores = np.asarray(scores, dtype=float)
    targets = np.asarray(targets, dtype=float)
    if scores.shape != spec.bins:
        raise ValueError(f"scores shape {scores.shape} does not match grid {spec.bins}")
    if targets.shape != (*spec.bins, 7):
        raise ValueError(f"targets shape {targets.shape} does not match grid {spec.bins}")
    z_ref = spec.depth_midpoint()
    flat_scores = scores.reshape(-1)
    flat_targets = targets.reshape(-1, 7)
    keep = np.flatnonzero(flat_scores >= score_floor)
    centers = bin_center_grid(spec).reshape(-1, 2)
    kept_t = flat_targets[keep]
    cx = centers[keep, 0] - kept_t[:, 0]
    cy = centers[keep, 1] - kept_t[:, 1]
    cz = z_ref - kept_t[:, 2]
    sizes = np.exp(kept_t[:, 3:6])
    headings = wrap_angle(kept_t[:, 6]) if keep.size else np.zeros(0)
    kept_scores = flat_scores[keep]
    out = []
    for i in range(keep.size):
        box = Box7(
            float(cx[i]),
            float(cy[i]),
            float(cz[i]),
            float(sizes[i, 0]),
            float(sizes[i, 1]),
            float(sizes[i, 2]),
            float(headings[i]),
        )
        out.append(Detection(box, float(kept_scores[i]), class_id))
    return out


def nms(dets, cfg: NmsConfig, iou_kind: str = "bev"):
    """Greedy non-maximum suppression over oriented boxes.

    Detections are visited by descending score (ties: earlier list position
    first); each kept detection suppresses the remainder whose IoU with it
    exceeds the threshold. Stops after max_keep kept; output in kept order.
    """
    if not dets:
        return []
    scores = np.array([d.score for d in dets])
    boxes = boxes_to_array([d.box for d in dets])
    order = np.argsort(-scores, kind="stable")
    alive = np.ones(len(dets), dtype=bool)
    kept = []
    for idx in order:
        if not alive[idx]:
            continue
        kept.append(dets[idx])
        if len(kept) >= cfg.max_keep:
            break
        alive[idx] = False
        rest = np.flatnonzero(alive)
        if rest.size == 0:
            break
        ious = iou_one_to_many(dets[idx].box, boxes[rest], iou_kind)
        alive[rest[ious > cfg.iou_threshold]] = False
    return kept


def run_pipeline(
    points,
    spec: ViewSpec,
    gt_boxes=None,
    score_map=None,
    target_map=None,
    nms_cfg: NmsConfig = NmsConfig(),
    iou_kind: str = "bev",
    class_id: int = 0,
):
    """Grid build -> per-pillar targets -> decode -> NMS, deterministically.

    Either gt_boxes (oracle mode: targets come from the pillar assignment,
    positives score 1 and the rest 0, decoded above ORACLE_SCORE_FLOOR) or
    both score_map and target_map (externally predicted maps, decoded above
    the configured score floor) must be supplied.
    """
    build_grid(points, spec)  # same staging as the full model; validates inputs
    if gt_boxes is not None:
        if score_map is not None or target_map is not None:
            raise ValueError("pass either gt_boxes or prediction maps, not both")
        assignment = assign_pillar(spec, gt_boxes)
        score_map = (assignment.labels == Label.POSITIVE).astype(float).reshape(spec.bins)
        target_map = np.zeros((*spec.bins, 7))
        pos = assignment.positive_units()
        target_map.reshape(-1, 7)[pos] = assignment.targets[pos]
        floor = ORACLE_SCORE_FLOOR
    else:
        if score_map is None or target_map is None:
            raise ValueError("need gt_boxes or both score_map and target_map")
        floor = nms_cfg.score_floor
    candidates = decode_map(score_map, target_map, spec, score_floor=floor, class_id=class_id)
    return nms(candidates, nms_cfg, iou_kind)


def write_detections_jsonl(dets, scene_id: str, fh) -> None:
    """One JSON line per detection: {scene_id, class_id, score, box}."""
    for det in dets:
        record = {
            "scene_id": scene_id,
            "class_id": det.class_id,
            "score": det.score,
            "box": [float(v) for v in det.box.as_array()],
        }
        fh.write(json.dumps(record, sort_keys=True) + "\n")


def read_detections_jsonl(fh) -> dict[str, list[Detection]]:
    """Parse detections grouped by scene id; raises ValueError with the
    offending line number on schema violations."""
    by_scene: dict[str, list[Detection]] = {}
    for lineno, line in enumerate(fh, start=1):
        line = line.strip()
        if not line:
            continue
        try:
            record = json.loads(line)
            box = Box7.from_array(record["box"])
            det = Detection(box, float(record["score"]), int(record["class_id"]))
            scene_id = str(record["scene_id"])
        except (KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
            raise ValueError(f"detections line {lineno}: {exc}") from exc
        by_scene.setdefault(scene_id, []).append(det)
    return by_scene
