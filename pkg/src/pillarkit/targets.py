"""Target assignment for the three prediction paradigms, plus the box codec.

One codec serves all paradigms: position offsets are reference-minus-center,
sizes are stored as logs, and the heading is regressed directly.

    assign_pillar: a BEV pillar is positive iff its bin center lies inside a
        ground-truth footprint; it regresses the containing box with the
        nearest BEV center, with the pillar center (plus the midpoint of the
        vertical detection range) as the reference point.
    assign_anchor: a box template per bin center and orientation, matched by
        2D IoU with positive/negative thresholds plus a forced best match
        per ground-truth box.
    assign_point: a point is positive iff inside a box (3D); it regresses the
        containing box with the nearest 3D center, referenced to itself.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from enum import IntEnum

import numpy as np

from .geom import (
    Box7,
    _batch_shoelace,
    _clip_areas_batch,
    _corner_tuples,
    _shoelace,
    point_in_box,
    wrap_angle,
)
from .views import ViewKind, ViewSpec, bin_center_grid

__all__ = [
    "Label",
    "RegressionTarget",
    "AnchorSpec",
    "Assignment",
    "encode",
    "decode",
    "encode_batch",
    "assign_pillar",
    "assign_anchor",
    "assign_point",
    "positive_fraction",
    "write_assignment_jsonl",
]


class Label(IntEnum):
    IGNORE = -1
    NEGATIVE = 0
    POSITIVE = 1


@dataclass(frozen=True)
class RegressionTarget:
    """Per-unit box regression target: position deltas, log sizes, heading."""

    dx: float
    dy: float
    dz: float
    dl: float
    dw: float
    dh: float
    theta_p: float

    def as_array(self) -> np.ndarray:
        return np.array([self.dx, self.dy, self.dz, self.dl, self.dw, self.dh, self.theta_p])

    @classmethod
    def from_array(cls, values) -> "RegressionTarget":
        return cls(*(float(v) for v in values))


@dataclass(frozen=True)
class AnchorSpec:
    """Box template placed at every grid cell; sizes in meters.

    Defaults are a typical vehicle template; no dataset-specific values are
    implied. Orientation 0 points the length axis along +X.
    """

    length: float = 4.73
    width: float = 2.08
    height: float = 1.77
    center_z: float = 0.0
    orientations: tuple[float, ...] = (0.0, math.pi / 2)

    def __post_init__(self):
        if min(self.length, self.width, self.height) <= 0:
            raise ValueError("anchor sizes must be positive")
        if len(self.orientations) == 0:
            raise ValueError("anchor needs at least one orientation")


@dataclass
class Assignment:
    """Per-unit labels and regression targets for one paradigm.

    labels is int8 with Label values; gt_index is -1 except for positives;
    targets rows are NaN except for positives (they only exist there);
    refs holds each unit's reference point. grid_shape records the unit
    layout for grid paradigms: (H, W) for pillars, (H, W, n_orient) for
    anchors, None for points.
    """

    kind: str
    labels: np.ndarray
    gt_index: np.ndarray
    targets: np.ndarray
    refs: np.ndarray
    grid_shape: tuple | None = None

    @property
    def n_units(self) -> int:
        return len(self.labels)

    def positive_units(self) -> np.ndarray:
        return np.flatnonzero(self.labels == Label.POSITIVE)

    def counts(self) -> dict:
        return {
            "positive": int(np.sum(self.labels == Label.POSITIVE)),
            "negative": int(np.sum(self.labels == Label.NEGATIVE)),
            "ignore": int(np.sum(self.labels == Label.IGNORE)),
        }


def encode(box: Box7, ref) -> RegressionTarget:
    """The unique zero-loss target for a box relative to a reference point."""
    rx, ry, rz = (float(v) for v in ref)
    return RegressionTarget(
        rx - box.cx,
        ry - box.cy,
        rz - box.cz,
        math.log(box.l),
        math.log(box.w),
        math.log(box.h),
        box.theta,
    )


def decode(target: RegressionTarget, ref) -> Box7:
    """Invert encode at the same reference point (heading wrapped)."""
    rx, ry, rz = (float(v) for v in ref)
    return Box7(
        rx - target.dx,
        ry - target.dy,
        rz - target.dz,
        math.exp(target.dl),
        math.exp(target.dw),
        math.exp(target.dh),
        wrap_angle(target.theta_p),
    )


def encode_batch(boxes: np.ndarray, refs: np.ndarray) -> np.ndarray:
    """Vectorized encode: (U, 7) box rows against (U, 3) reference points."""
    out = np.empty((len(refs), 7))
    out[:, 0:3] = refs - boxes[:, 0:3]
    out[:, 3:6] = np.log(boxes[:, 3:6])
    out[:, 6] = boxes[:, 6]
    return out


def _require_bev(spec: ViewSpec, op: str):
    if spec.kind is not ViewKind.BEV:
        raise ValueError(f"{op} requires a BEV view spec, got {spec.kind.value}")


def _footprint_mask(box: Box7, us: np.ndarray, vs: np.ndarray):
    """Boundary-inclusive test of grid centers against a BEV footprint.

    Matches point_in_box restricted to XY, including its boundary handling.
    """
    dx = us - box.cx
    dy = vs - box.cy
    c = math.cos(box.theta)
    s = math.sin(box.theta)
    lx = c * dx + s * dy
    ly = -s * dx + c * dy
    return (np.abs(lx) <= 0.5 * box.l) & (np.abs(ly) <= 0.5 * box.w)


def _cell_window(lo, hi, axis_range, pitch, n):
    """Row/col index window (inclusive) covering [lo, hi], padded by one cell."""
    first = int(math.floor((lo - axis_range[0]) / pitch)) - 1
    last = int(math.floor((hi - axis_range[0]) / pitch)) + 1
    return max(first, 0), min(last, n - 1)


def assign_pillar(spec: ViewSpec, gt_boxes) -> Assignment:
    """Label every BEV pillar and encode targets for the positive ones.

    A pillar is positive iff its bin center lies inside at least one
    ground-truth footprint; ties between containing boxes go to the one
    with the nearest BEV center, then the lowest box index. The reference
    z is the midpoint of the view's depth range. There is no ignore band.
    """
    _require_bev(spec, "assign_pillar")
    h, w = spec.bins
    z_ref = spec.depth_midpoint()
    centers = bin_center_grid(spec)
    labels = np.zeros(h * w, dtype=np.int8)
    gt_index = np.full(h * w, -1, dtype=np.int64)
    best_d2 = np.full(h * w, np.inf)
    pitch0 = (spec.axis0_range[1] - spec.axis0_range[0]) / h
    pitch1 = (spec.axis1_range[1] - spec.axis1_range[0]) / w
    for gi, box in enumerate(gt_boxes):
        radius = 0.5 * math.hypot(box.l, box.w)
        r_lo, r_hi = _cell_window(box.cx - radius, box.cx + radius, spec.axis0_range, pitch0, h)
        c_lo, c_hi = _cell_window(box.cy - radius, box.cy + radius, spec.axis1_range, pitch1, w)
        if r_lo > r_hi or c_lo > c_hi:
            continue
        us = centers[r_lo : r_hi + 1, c_lo : c_hi + 1, 0]
        vs = centers[r_lo : r_hi + 1, c_lo : c_hi + 1, 1]
        inside = _footprint_mask(box, us, vs)
        if not inside.any():
            continue
        d2 = (us - box.cx) ** 2 + (vs - box.cy) ** 2
        rr, cc = np.nonzero(inside)
        flat = (rr + r_lo) * w + (cc + c_lo)
        closer = d2[rr, cc] < best_d2[flat]
        upd = flat[closer]
        labels[upd] = Label.POSITIVE
        gt_index[upd] = gi
        best_d2[upd] = d2[rr, cc][closer]
    targets = np.full((h * w, 7), np.nan)
    refs = np.empty((h * w, 3))
    refs[:, 0:2] = centers.reshape(-1, 2)
    refs[:, 2] = z_ref
    pos = np.flatnonzero(labels == Label.POSITIVE)
    if pos.size:
        gt_arr = np.stack([gt_boxes[g].as_array() for g in gt_index[pos]])
        targets[pos] = encode_batch(gt_arr, refs[pos])
    return Assignment("pillar", labels, gt_index, targets, refs, (h, w))


def assign_anchor(
    spec: ViewSpec,
    anchor: AnchorSpec,
    gt_boxes,
    positive_iou: float = 0.6,
    negative_iou: float = 0.45,
) -> Assignment:
    """IoU-matched labels over anchors at every bin center and orientation.

    Per anchor the best 2D IoU over ground truth decides: >= positive_iou is
    positive, < negative_iou negative, the band in between ignored. Each
    ground-truth box with any footprint overlap additionally forces its
    highest-IoU anchor positive (ties broken by the lowest flat anchor
    index); if two boxes force the same anchor the higher IoU wins, then the
    lower box index. Flat anchor index is (row * W + col) * n_orient + k.
    """
    _require_bev(spec, "assign_anchor")
    h, w = spec.bins
    n_orient = len(anchor.orientations)
    n_units = h * w * n_orient
    centers = bin_center_grid(spec)
    best_iou = np.zeros(n_units)
    best_gt = np.full(n_units, -1, dtype=np.int64)
    forced: dict[int, tuple[float, int]] = {}
    pitch0 = (spec.axis0_range[1] - spec.axis0_range[0]) / h
    pitch1 = (spec.axis1_range[1] - spec.axis1_range[0]) / w

    trig = [(math.cos(t), math.sin(t)) for t in anchor.orientations]
    half_l, half_w = 0.5 * anchor.length, 0.5 * anchor.width
    for gi, box in enumerate(gt_boxes):
        g_corners = _corner_tuples(box.cx, box.cy, box.l, box.w, box.theta)
        g_area = _shoelace(g_corners)
        gx = [p[0] for p in g_corners]
        gy = [p[1] for p in g_corners]
        gx_lo, gx_hi, gy_lo, gy_hi = min(gx), max(gx), min(gy), max(gy)
        gt_best_iou = 0.0
        gt_best_unit = -1
        for k, (c, s) in enumerate(trig):
            # axis-aligned extent of the rotated anchor footprint
            ext_x = abs(c) * half_l + abs(s) * half_w
            ext_y = abs(s) * half_l + abs(c) * half_w
            r_lo, r_hi = _cell_window(gx_lo - ext_x, gx_hi + ext_x, spec.axis0_range, pitch0, h)
            c_lo, c_hi = _cell_window(gy_lo - ext_y, gy_hi + ext_y, spec.axis1_range, pitch1, w)
            if r_lo > r_hi or c_lo > c_hi:
                continue
            # candidate cells whose anchor bounding box overlaps the footprint
            us = centers[r_lo : r_hi + 1, 0, 0]
            vs = centers[0, c_lo : c_hi + 1, 1]
            rows_idx = np.flatnonzero((us + ext_x > gx_lo) & (us - ext_x < gx_hi)) + r_lo
            cols_idx = np.flatnonzero((vs + ext_y > gy_lo) & (vs - ext_y < gy_hi)) + c_lo
            if rows_idx.size == 0 or cols_idx.size == 0:
                continue
            u = np.repeat(centers[rows_idx, 0, 0], cols_idx.size)
            v = np.tile(centers[0, cols_idx, 1], rows_idx.size)
            # same per-corner arithmetic as _corner_tuples, vectorized
            ax, bx = c * half_l, s * half_w
            dy, ey = s * half_l, c * half_w
            xs = np.stack([u + ax - bx, u - ax - bx, u - ax + bx, u + ax + bx], axis=1)
            ys = np.stack([v + dy + ey, v - dy + ey, v - dy - ey, v + dy - ey], axis=1)
            inter = _clip_areas_batch(xs, ys, g_corners)
            hit = np.flatnonzero(inter > 0.0)
            if hit.size == 0:
                continue
            union = _batch_shoelace(xs[hit], ys[hit]) + g_area - inter[hit]
            iou = np.minimum(inter[hit] / union, 1.0)
            # flat unit index, ascending within this batch (row-major cells)
            cells = (np.repeat(rows_idx, cols_idx.size) * w + np.tile(cols_idx, rows_idx.size))[hit]
            units = cells * n_orient + k
            better = iou > best_iou[units]
            best_iou[units[better]] = iou[better]
            best_gt[units[better]] = gi
            top = int(np.argmax(iou))  # first max = lowest flat index in batch
            if iou[top] > gt_best_iou or (iou[top] == gt_best_iou and units[top] < gt_best_unit):
                gt_best_iou = float(iou[top])
                gt_best_unit = int(units[top])
        if gt_best_unit >= 0:
            prev = forced.get(gt_best_unit)
            if prev is None or gt_best_iou > prev[0]:
                forced[gt_best_unit] = (gt_best_iou, gi)

    labels = np.where(
        best_iou >= positive_iou,
        np.int8(Label.POSITIVE),
        np.where(best_iou < negative_iou, np.int8(Label.NEGATIVE), np.int8(Label.IGNORE)),
    )
    gt_index = np.where(labels == Label.POSITIVE, best_gt, -1)
    for unit, (_, gi) in forced.items():
        labels[unit] = Label.POSITIVE
        gt_index[unit] = gi

    refs = np.empty((n_units, 3))
    flat_centers = centers.reshape(-1, 2)
    refs[:, 0] = np.repeat(flat_centers[:, 0], n_orient)
    refs[:, 1] = np.repeat(flat_centers[:, 1], n_orient)
    refs[:, 2] = anchor.center_z
    targets = np.full((n_units, 7), np.nan)
    pos = np.flatnonzero(labels == Label.POSITIVE)
    if pos.size:
        gt_arr = np.stack([gt_boxes[g].as_array() for g in gt_index[pos]])
        targets[pos] = encode_batch(gt_arr, refs[pos])
    return Assignment("anchor", labels.astype(np.int8), gt_index, targets, refs, (h, w, n_orient))


def assign_point(points, gt_boxes) -> Assignment:
    """Foreground/background labels over raw points.

    A point is positive iff inside at least one ground-truth box (boundary
    inclusive, full 3D); ties go to the box with the nearest 3D center,
    then the lowest box index. Each positive point references itself.
    """
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    n = len(pts)
    labels = np.zeros(n, dtype=np.int8)
    gt_index = np.full(n, -1, dtype=np.int64)
    best_d2 = np.full(n, np.inf)
    for gi, box in enumerate(gt_boxes):
        inside = point_in_box(pts, box)
        if not inside.any():
            continue
        d2 = np.sum((pts - (box.cx, box.cy, box.cz)) ** 2, axis=1)
        upd = inside & (d2 < best_d2)
        labels[upd] = Label.POSITIVE
        gt_index[upd] = gi
        best_d2[upd] = d2[upd]
    targets = np.full((n, 7), np.nan)
    pos = np.flatnonzero(labels == Label.POSITIVE)
    if pos.size:
        gt_arr = np.stack([gt_boxes[g].as_array() for g in gt_index[pos]])
        targets[pos] = encode_batch(gt_arr, pts[pos])
    return Assignment("point", labels, gt_index, targets, pts.copy(), None)


def positive_fraction(assignment: Assignment) -> float:
    """Share of units labeled positive; errors on an empty assignment."""
    if assignment.n_units == 0:
        raise ValueError("positive_fraction of an empty assignment is undefined")
    return float(np.sum(assignment.labels == Label.POSITIVE)) / assignment.n_units


def write_assignment_jsonl(assignment: Assignment, fh) -> None:
    """One JSON line per positive unit, then a summary record.

    Positive records: {unit_kind, unit_index, ref, target, gt_index}.
    The summary carries label counts and the positive fraction.
    """
    for unit in assignment.positive_units():
        record = {
            "unit_kind": assignment.kind,
            "unit_index": int(unit),
            "ref": [float(v) for v in assignment.refs[unit]],
            "target": [float(v) for v in assignment.targets[unit]],
            "gt_index": int(assignment.gt_index[unit]),
        }
        fh.write(json.dumps(record, sort_keys=True) + "\n")
    summary = {
        "unit_kind": assignment.kind,
        "summary": True,
        "units": assignment.n_units,
        "counts": assignment.counts(),
        "positive_fraction": positive_fraction(assignment) if assignment.n_units else 0.0,
    }
    fh.write(json.dumps(summary, sort_keys=True) + "\n")
