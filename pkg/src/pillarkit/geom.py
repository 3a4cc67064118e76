"""Core 3D geometry: points, oriented boxes, headings, and rotated IoU.

Boxes are 7-DoF: center (cx, cy, cz), size (l, w, h), heading theta.
The heading is yaw about +Z, counterclockwise from +X, with the length
axis l along the heading direction. BEV footprints are counterclockwise
quadrilaterals in the XY plane. A "polygon" throughout this module is an
(N, 2) array of vertices in counterclockwise order; every polygon passed
to the clipping routines must be convex.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

__all__ = [
    "Point3",
    "Box7",
    "wrap_angle",
    "box_bev_corners",
    "polygon_area",
    "convex_intersection_area",
    "iou_bev",
    "iou_3d",
    "point_in_box",
    "boxes_to_array",
    "iou_one_to_many",
]

_TWO_PI = 2.0 * math.pi


class Point3(NamedTuple):
    """Cartesian point in the vehicle frame, meters."""

    x: float
    y: float
    z: float


def wrap_angle(theta):
    """Wrap an angle in radians into (-pi, pi].

    Accepts a scalar or an array. Values already inside the interval are
    returned unchanged (bit-exact), which keeps codec round trips lossless.
    """
    if isinstance(theta, (int, float)):
        theta = float(theta)
        if not math.isfinite(theta):
            raise ValueError("wrap_angle requires finite input")
        if -math.pi < theta <= math.pi:
            return theta
        wrapped = math.fmod(theta, _TWO_PI)
        if wrapped <= -math.pi:
            wrapped += _TWO_PI
        elif wrapped > math.pi:
            wrapped -= _TWO_PI
        return wrapped
    arr = np.asarray(theta, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise ValueError("wrap_angle requires finite input")
    wrapped = np.mod(arr, _TWO_PI)
    wrapped = np.where(wrapped > math.pi, wrapped - _TWO_PI, wrapped)
    out = np.where((arr > -math.pi) & (arr <= math.pi), arr, wrapped)
    if arr.ndim == 0:
        return float(out)
    return out


@dataclass(frozen=True)
class Box7:
    """7-DoF oriented box; heading is normalized to (-pi, pi] on construction."""

    cx: float
    cy: float
    cz: float
    l: float
    w: float
    h: float
    theta: float

    def __post_init__(self):
        values = (self.cx, self.cy, self.cz, self.l, self.w, self.h, self.theta)
        if not all(math.isfinite(v) for v in values):
            raise ValueError(f"Box7 fields must be finite, got {values}")
        if self.l <= 0.0 or self.w <= 0.0 or self.h <= 0.0:
            raise ValueError(
                f"Box7 sizes must be positive, got l={self.l}, w={self.w}, h={self.h}"
            )
        object.__setattr__(self, "theta", wrap_angle(self.theta))

    def as_array(self) -> np.ndarray:
        return np.array([self.cx, self.cy, self.cz, self.l, self.w, self.h, self.theta])

    @classmethod
    def from_array(cls, values) -> "Box7":
        cx, cy, cz, l, w, h, theta = (float(v) for v in values)
        return cls(cx, cy, cz, l, w, h, theta)

    @property
    def volume(self) -> float:
        return self.l * self.w * self.h


def boxes_to_array(boxes) -> np.ndarray:
    """Stack boxes into an (N, 7) array in (cx, cy, cz, l, w, h, theta) order."""
    if len(boxes) == 0:
        return np.zeros((0, 7))
    return np.stack([b.as_array() for b in boxes])


def _corner_tuples(cx, cy, l, w, theta):
    """The four CCW footprint corners as plain float tuples (hot path)."""
    c = math.cos(theta)
    s = math.sin(theta)
    hl = 0.5 * l
    hw = 0.5 * w
    return (
        (cx + c * hl - s * hw, cy + s * hl + c * hw),
        (cx - c * hl - s * hw, cy - s * hl + c * hw),
        (cx - c * hl + s * hw, cy - s * hl - c * hw),
        (cx + c * hl + s * hw, cy + s * hl - c * hw),
    )


def box_bev_corners(box: Box7) -> np.ndarray:
    """Counterclockwise XY footprint corners of a box, shape (4, 2).

    The local corners (+-l/2, +-w/2) are rotated by theta about +Z and
    translated to the box center.
    """
    return np.array(_corner_tuples(box.cx, box.cy, box.l, box.w, box.theta))


def _shoelace(pts) -> float:
    """Absolute shoelace area of a polygon given as a sequence of (x, y)."""
    area = 0.0
    n = len(pts)
    for i in range(n):
        x1, y1 = pts[i]
        x2, y2 = pts[(i + 1) % n]
        area += x1 * y2 - x2 * y1
    return 0.5 * abs(area)


def polygon_area(poly) -> float:
    """Area of a simple polygon given as an (N, 2) vertex array."""
    pts = np.asarray(poly, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] < 3:
        raise ValueError(f"expected an (N>=3, 2) vertex array, got shape {pts.shape}")
    return _shoelace([tuple(p) for p in pts])


def _clip_convex(subject, clip):
    """Sutherland-Hodgman clip of convex CCW `subject` by convex CCW `clip`.

    Vertices exactly on a clip edge count as inside, so shared edges are
    retained instead of dropped. Returns a list of (x, y) tuples; fewer
    than 3 vertices means an empty intersection.
    """
    output = list(subject)
    cx1, cy1 = clip[-1]
    for cx2, cy2 in clip:
        if not output:
            return []
        ex = cx2 - cx1
        ey = cy2 - cy1
        current = output
        output = []
        sx, sy = current[-1]
        s_in = ex * (sy - cy1) - ey * (sx - cx1) >= 0.0
        for px, py in current:
            p_in = ex * (py - cy1) - ey * (px - cx1) >= 0.0
            if p_in != s_in:
                dx = px - sx
                dy = py - sy
                denom = ex * dy - ey * dx
                if denom != 0.0:
                    t = -(ex * (sy - cy1) - ey * (sx - cx1)) / denom
                    output.append((sx + t * dx, sy + t * dy))
            if p_in:
                output.append((px, py))
            sx, sy, s_in = px, py, p_in
        cx1, cy1 = cx2, cy2
    return output


def convex_intersection_area(a, b) -> float:
    """Area of the intersection of two convex CCW polygons, in m^2.

    Exact up to floating-point rounding; disjoint polygons give 0.
    """
    pa = [tuple(p) for p in np.asarray(a, dtype=float)]
    pb = [tuple(p) for p in np.asarray(b, dtype=float)]
    clipped = _clip_convex(pa, pb)
    if len(clipped) < 3:
        return 0.0
    return _shoelace(clipped)


def _footprint_iou(corners_a, corners_b) -> float:
    clipped = _clip_convex(corners_a, corners_b)
    inter = _shoelace(clipped) if len(clipped) >= 3 else 0.0
    if inter <= 0.0:
        return 0.0
    union = _shoelace(corners_a) + _shoelace(corners_b) - inter
    if union <= 0.0:
        return 0.0
    return min(inter / union, 1.0)


def iou_bev(a: Box7, b: Box7) -> float:
    """Oriented IoU of the two boxes' BEV footprints, in [0, 1]."""
    ca = _corner_tuples(a.cx, a.cy, a.l, a.w, a.theta)
    cb = _corner_tuples(b.cx, b.cy, b.l, b.w, b.theta)
    return _footprint_iou(ca, cb)


def _volume_iou(corners_a, za, corners_b, zb) -> float:
    """3D IoU from footprint corners plus (bottom, top) vertical intervals.

    Volumes use the same shoelace footprint areas and interval arithmetic
    as the intersection so that identical boxes land on exactly 1.0.
    """
    overlap = min(za[1], zb[1]) - max(za[0], zb[0])
    if overlap <= 0.0:
        return 0.0
    clipped = _clip_convex(corners_a, corners_b)
    inter_area = _shoelace(clipped) if len(clipped) >= 3 else 0.0
    inter = inter_area * overlap
    if inter <= 0.0:
        return 0.0
    vol_a = _shoelace(corners_a) * (za[1] - za[0])
    vol_b = _shoelace(corners_b) * (zb[1] - zb[0])
    union = vol_a + vol_b - inter
    if union <= 0.0:
        return 0.0
    return min(inter / union, 1.0)


def _zspan(box: Box7):
    return (box.cz - 0.5 * box.h, box.cz + 0.5 * box.h)


def iou_3d(a: Box7, b: Box7) -> float:
    """Oriented 3D IoU: BEV intersection area times vertical overlap, over union."""
    ca = _corner_tuples(a.cx, a.cy, a.l, a.w, a.theta)
    cb = _corner_tuples(b.cx, b.cy, b.l, b.w, b.theta)
    return _volume_iou(ca, _zspan(a), cb, _zspan(b))


def point_in_box(p, box: Box7):
    """Boundary-inclusive point containment test in the box's local frame.

    `p` may be a single (3,) point or an (N, 3) array; returns a bool or a
    boolean array accordingly.
    """
    pts = np.asarray(p, dtype=float)
    single = pts.ndim == 1
    pts = np.atleast_2d(pts)
    dx = pts[:, 0] - box.cx
    dy = pts[:, 1] - box.cy
    dz = pts[:, 2] - box.cz
    c = math.cos(box.theta)
    s = math.sin(box.theta)
    lx = c * dx + s * dy
    ly = -s * dx + c * dy
    inside = (
        (np.abs(lx) <= 0.5 * box.l)
        & (np.abs(ly) <= 0.5 * box.w)
        & (np.abs(dz) <= 0.5 * box.h)
    )
    return bool(inside[0]) if single else inside


def _circumradii(arr: np.ndarray) -> np.ndarray:
    return 0.5 * np.hypot(arr[:, 3], arr[:, 4])


def _batch_corners(arr: np.ndarray):
    """Footprint corners of (M, 7) box rows as (M, 4) x and y arrays.

    Same per-corner arithmetic as _corner_tuples, so results agree with the
    scalar path for equal inputs.
    """
    c = np.cos(arr[:, 6])
    s = np.sin(arr[:, 6])
    a = c * (0.5 * arr[:, 3])
    b = s * (0.5 * arr[:, 4])
    d = s * (0.5 * arr[:, 3])
    e = c * (0.5 * arr[:, 4])
    cx, cy = arr[:, 0], arr[:, 1]
    xs = np.stack([cx + a - b, cx - a - b, cx - a + b, cx + a + b], axis=1)
    ys = np.stack([cy + d + e, cy - d + e, cy - d - e, cy + d - e], axis=1)
    return xs, ys


def _batch_shoelace(xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    terms = xs * np.roll(ys, -1, axis=1) - np.roll(xs, -1, axis=1) * ys
    return 0.5 * np.abs(np.cumsum(terms, axis=1)[:, -1])


def _clip_areas_batch(xs: np.ndarray, ys: np.ndarray, clip) -> np.ndarray:
    """Intersection areas of many convex CCW polygons with one convex quad.

    Vectorized Sutherland-Hodgman: polygons are carried as fixed-width
    vertex rings that double per clip edge, padding with repeated vertices
    (repeats contribute exactly zero to the shoelace sum). Matches the
    scalar clipping semantics, including on-edge vertices counting inside.
    """
    m, width = xs.shape
    alive = np.ones(m, dtype=bool)
    rows = np.arange(m)[:, None]
    c1x, c1y = clip[-1]
    for c2x, c2y in clip:
        ex = c2x - c1x
        ey = c2y - c1y
        num = ex * (ys - c1y) - ey * (xs - c1x)
        side = num >= 0.0
        nxs = np.roll(xs, -1, axis=1)
        nys = np.roll(ys, -1, axis=1)
        nside = np.roll(side, -1, axis=1)
        dx = nxs - xs
        dy = nys - ys
        denom = ex * dy - ey * dx
        emit_cross = (side != nside) & (denom != 0.0)
        t = np.where(emit_cross, -num / np.where(emit_cross, denom, 1.0), 0.0)
        cand_x = np.empty((m, 2 * width))
        cand_y = np.empty((m, 2 * width))
        emit = np.empty((m, 2 * width), dtype=bool)
        cand_x[:, 0::2] = xs + t * dx
        cand_y[:, 0::2] = ys + t * dy
        emit[:, 0::2] = emit_cross
        cand_x[:, 1::2] = nxs
        cand_y[:, 1::2] = nys
        emit[:, 1::2] = nside
        # compact to width + 1 slots (a convex half-plane clip adds at most
        # one vertex), padding short rows by repeating their last vertex
        order = np.argsort(~emit, axis=1, kind="stable")
        counts = emit.sum(axis=1, keepdims=True)
        alive &= counts[:, 0] > 0
        take = order[:, : width + 1]
        last = np.take_along_axis(order, np.maximum(counts - 1, 0), axis=1)
        take = np.where(np.arange(width + 1)[None, :] < counts, take, last)
        xs = cand_x[rows, take]
        ys = cand_y[rows, take]
        width += 1
        c1x, c1y = c2x, c2y
    areas = _batch_shoelace(xs, ys)
    areas[~alive] = 0.0
    return areas


def iou_one_to_many(box: Box7, others: np.ndarray, kind: str = "bev") -> np.ndarray:
    """IoU of one box against an (M, 7) array of boxes.

    Pairs whose footprint circumcircles do not intersect are zero without
    clipping; the rest go through the batched clipper in one pass.
    """
    if kind not in ("bev", "3d"):
        raise ValueError(f"unknown IoU kind {kind!r}")
    others = np.asarray(others, dtype=float)
    out = np.zeros(len(others))
    if len(others) == 0:
        return out
    dist = np.hypot(others[:, 0] - box.cx, others[:, 1] - box.cy)
    radius = 0.5 * math.hypot(box.l, box.w)
    near = dist <= radius + _circumradii(others)
    bottoms = others[:, 2] - 0.5 * others[:, 5]
    tops = others[:, 2] + 0.5 * others[:, 5]
    za = _zspan(box)
    if kind == "3d":
        near &= (bottoms < za[1]) & (tops > za[0])
    idx = np.flatnonzero(near)
    if idx.size == 0:
        return out
    sub = others[idx]
    xs, ys = _batch_corners(sub)
    ca = _corner_tuples(box.cx, box.cy, box.l, box.w, box.theta)
    inter = _clip_areas_batch(xs, ys, ca)
    other_areas = _batch_shoelace(xs, ys)
    area_a = _shoelace(ca)
    if kind == "bev":
        union = area_a + other_areas - inter
    else:
        overlap = np.maximum(np.minimum(tops[idx], za[1]) - np.maximum(bottoms[idx], za[0]), 0.0)
        inter = inter * overlap
        union = area_a * (za[1] - za[0]) + other_areas * (tops[idx] - bottoms[idx]) - inter
    with np.errstate(invalid="ignore", divide="ignore"):
        iou = np.where((inter > 0.0) & (union > 0.0), inter / union, 0.0)
    out[idx] = np.minimum(iou, 1.0)
    return out
