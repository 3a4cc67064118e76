"""Point<->pillar index maps, feature aggregation, and pillar-to-point gathers.

A pillar grid stores both directions of the point/pillar correspondence:
a per-point flat pillar index (-1 for out-of-range points) and, per pillar,
the sorted list of member point indices. Feature maps are dense (H, W, C)
arrays; the gathers project them back to points either by nearest pillar
(copying the pillar's row) or by bilinear interpolation over the four
surrounding pillar centers.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass, field

import numpy as np

from .views import ViewKind, ViewSpec, bins_of, project_points

__all__ = [
    "PillarGrid",
    "PillarFeatureMap",
    "build_grid",
    "aggregate",
    "gather_nearest",
    "gather_bilinear",
    "gather_bilinear_backward",
    "bilinear_weights",
    "save_feature_map",
    "load_feature_map",
]

# Continuous grid coordinates within this distance of an integer are snapped
# to it. Bin centers land on integers only up to floating-point rounding of
# the range arithmetic (~1e-14 bin units); the snap restores exact center
# queries without affecting any physically distinct query point.
CENTER_SNAP = 1e-9

_HEADER = struct.Struct("<III")


@dataclass
class PillarGrid:
    """Both point/pillar index maps over one view grid.

    point_to_pillar holds the flat pillar index (row * W + col) per point,
    -1 where the point is out of range or its projection is undefined.
    sorted_points lists the in-range point indices grouped by pillar in
    ascending pillar then ascending point order; starts delimits the groups
    (CSR layout, length H*W + 1).
    """

    spec: ViewSpec
    point_to_pillar: np.ndarray
    sorted_points: np.ndarray = field(repr=False)
    starts: np.ndarray = field(repr=False)

    @property
    def n_points(self) -> int:
        return len(self.point_to_pillar)

    def points_in_pillar(self, flat_index: int) -> np.ndarray:
        """Sorted point indices belonging to one pillar."""
        return self.sorted_points[self.starts[flat_index] : self.starts[flat_index + 1]]

    def counts(self) -> np.ndarray:
        """Number of member points per pillar, shape (H*W,)."""
        return np.diff(self.starts)

    def nonempty_pillars(self) -> np.ndarray:
        return np.flatnonzero(self.counts())


@dataclass
class PillarFeatureMap:
    """Dense per-pillar features, shape (H, W, C)."""

    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 3:
            raise ValueError(f"feature map must be (H, W, C), got shape {self.values.shape}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("feature map values must be finite")

    @property
    def h(self) -> int:
        return self.values.shape[0]

    @property
    def w(self) -> int:
        return self.values.shape[1]

    @property
    def c(self) -> int:
        return self.values.shape[2]


def build_grid(points, spec: ViewSpec) -> PillarGrid:
    """Bin points into pillars and build both index maps.

    Points that fail projection (e.g. on the Z axis for angular views) or
    fall outside the axis ranges get pillar index -1.
    """
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    coords, valid = project_points(pts, spec.kind)
    rows, cols, ok = bins_of(coords, spec, valid)
    flat = np.full(len(pts), -1, dtype=np.int64)
    flat[ok] = rows[ok] * spec.bins[1] + cols[ok]
    in_range = np.flatnonzero(ok)
    # stable sort keeps member lists in ascending point order within a pillar
    order = in_range[np.argsort(flat[in_range], kind="stable")]
    counts = np.bincount(flat[in_range], minlength=spec.n_pillars)
    starts = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
    return PillarGrid(spec=spec, point_to_pillar=flat, sorted_points=order, starts=starts)


def aggregate(features, grid: PillarGrid, reducer: str = "max", transform=None) -> PillarFeatureMap:
    """Reduce per-point features into a dense pillar map; empty pillars are 0.

    reducer "max" takes the elementwise maximum over a pillar's points
    (order-free); "mean" averages them, accumulating in ascending point
    order for bit determinism. An optional (weight, bias) pair applies a
    per-point affine transform before reduction, so externally trained
    featurizers can be replayed.
    """
    feats = np.asarray(features, dtype=float)
    if feats.ndim != 2 or feats.shape[0] != grid.n_points:
        raise ValueError(
            f"features must be ({grid.n_points}, K), got shape {feats.shape}"
        )
    if transform is not None:
        weight, bias = transform
        feats = feats @ np.asarray(weight, dtype=float) + np.asarray(bias, dtype=float)
    if reducer not in ("max", "mean"):
        raise ValueError(f"unknown reducer {reducer!r}")
    h, w = grid.spec.bins
    out = np.zeros((h * w, feats.shape[1]))
    counts = grid.counts()
    nonempty = np.flatnonzero(counts)
    if nonempty.size:
        grouped = feats[grid.sorted_points]
        seg_starts = grid.starts[nonempty]
        if reducer == "max":
            out[nonempty] = np.maximum.reduceat(grouped, seg_starts, axis=0)
        else:
            sums = np.add.reduceat(grouped, seg_starts, axis=0)
            out[nonempty] = sums / counts[nonempty, None]
    return PillarFeatureMap(out.reshape(h, w, feats.shape[1]))


def gather_nearest(fmap: PillarFeatureMap, grid: PillarGrid) -> np.ndarray:
    """Copy each point's pillar row verbatim; out-of-range points get 0."""
    if (fmap.h, fmap.w) != grid.spec.bins:
        raise ValueError(
            f"feature map {(fmap.h, fmap.w)} does not match grid {grid.spec.bins}"
        )
    flat = fmap.values.reshape(-1, fmap.c)
    out = np.zeros((grid.n_points, fmap.c))
    mask = grid.point_to_pillar >= 0
    out[mask] = flat[grid.point_to_pillar[mask]]
    return out


def _in_range_mask(coords, spec, valid):
    u, v, depth = coords[:, 0], coords[:, 1], coords[:, 2]
    ok = valid.copy()
    (lo0, hi0), (lo1, hi1) = spec.axis0_range, spec.axis1_range
    with np.errstate(invalid="ignore"):
        ok &= (u >= lo0) & (u <= hi0) & (v >= lo1) & (v <= hi1)
        if spec.kind is ViewKind.XZ:
            ok &= depth >= 0.0 if spec.y_sign > 0 else depth < 0.0
    return ok


def _grid_coords(points, spec: ViewSpec):
    """Continuous (row, col) coordinates with bin centers on integers.

    Uses the half-pixel convention g = (u - lo) * n / (hi - lo) - 0.5 and
    snaps near-integer values (see CENTER_SNAP).
    """
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    coords, valid = project_points(pts, spec.kind)
    ok = _in_range_mask(coords, spec, valid)
    (lo0, hi0), (lo1, hi1) = spec.axis0_range, spec.axis1_range
    h, w = spec.bins
    with np.errstate(invalid="ignore"):
        g0 = (coords[:, 0] - lo0) * h / (hi0 - lo0) - 0.5
        g1 = (coords[:, 1] - lo1) * w / (hi1 - lo1) - 0.5
    g0 = np.where(ok, g0, 0.0)
    g1 = np.where(ok, g1, 0.0)
    for g in (g0, g1):
        nearest = np.rint(g)
        snap = np.abs(g - nearest) < CENTER_SNAP
        g[snap] = nearest[snap]
    return g0, g1, ok


def _neighbors(g, n):
    i0 = np.floor(g).astype(np.int64)
    frac = g - i0
    lo = np.clip(i0, 0, n - 1)
    hi = np.clip(i0 + 1, 0, n - 1)
    return lo, hi, frac


def gather_bilinear(fmap: PillarFeatureMap, points, spec: ViewSpec) -> np.ndarray:
    """Bilinearly interpolate pillar features at each point's projection.

    The four surrounding bin centers contribute with weights that sum to 1;
    indices beyond the grid edge are clamped (border replication), which
    preserves constant maps near edges. Out-of-range points get 0. Queries
    exactly at a bin center reproduce that bin's row bit-for-bit.
    """
    if (fmap.h, fmap.w) != spec.bins:
        raise ValueError(f"feature map {(fmap.h, fmap.w)} does not match spec {spec.bins}")
    g0, g1, ok = _grid_coords(points, spec)
    r0, r1, f0 = _neighbors(g0, fmap.h)
    c0, c1, f1 = _neighbors(g1, fmap.w)
    v = fmap.values
    f0 = f0[:, None]
    f1 = f1[:, None]
    # nested lerps: exact for constant maps and at zero fractional offsets
    top = v[r0, c0] + f1 * (v[r0, c1] - v[r0, c0])
    bottom = v[r1, c0] + f1 * (v[r1, c1] - v[r1, c0])
    result = top + f0 * (bottom - top)
    result[~ok] = 0.0
    return result


def bilinear_weights(points, spec: ViewSpec):
    """The four (row, col) neighbors and weights used by the bilinear gather.

    Returns (rows, cols, weights, ok) with shapes (N, 4), (N, 4), (N, 4),
    (N,). For in-range points the weights are non-negative and sum to 1.
    """
    h, w = spec.bins
    g0, g1, ok = _grid_coords(points, spec)
    r0, r1, f0 = _neighbors(g0, h)
    c0, c1, f1 = _neighbors(g1, w)
    rows = np.stack([r0, r0, r1, r1], axis=1)
    cols = np.stack([c0, c1, c0, c1], axis=1)
    weights = np.stack(
        [(1.0 - f0) * (1.0 - f1), (1.0 - f0) * f1, f0 * (1.0 - f1), f0 * f1], axis=1
    )
    return rows, cols, weights, ok


def gather_bilinear_backward(map_shape, points, spec: ViewSpec, upstream) -> np.ndarray:
    """Adjoint of gather_bilinear: scatter-add upstream rows into map space.

    map_shape is (H, W, C); upstream is (N, C) aligned with points. Satisfies
    <gather(m), upstream> = <m, backward(upstream)> up to rounding.
    """
    h, w, c = map_shape
    if (h, w) != spec.bins:
        raise ValueError(f"map shape {(h, w)} does not match spec {spec.bins}")
    up = np.asarray(upstream, dtype=float)
    rows, cols, weights, ok = bilinear_weights(points, spec)
    if up.shape != (len(rows), c):
        raise ValueError(f"upstream must be ({len(rows)}, {c}), got {up.shape}")
    grad = np.zeros((h, w, c))
    sel = np.flatnonzero(ok)
    for k in range(4):
        np.add.at(grad, (rows[sel, k], cols[sel, k]), weights[sel, k, None] * up[sel])
    return grad


def save_feature_map(fmap: PillarFeatureMap, path) -> None:
    """Write a map as a 12-byte (H, W, C) u32-LE header plus row-major f32-LE data."""
    data = np.ascontiguousarray(fmap.values, dtype="<f4")
    payload = _HEADER.pack(fmap.h, fmap.w, fmap.c) + data.tobytes()
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(payload)
    os.replace(tmp, path)


def load_feature_map(path) -> PillarFeatureMap:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER.size:
        raise ValueError(f"{path}: truncated feature map header")
    h, w, c = _HEADER.unpack_from(raw)
    expected = _HEADER.size + 4 * h * w * c
    if len(raw) != expected:
        raise ValueError(f"{path}: expected {expected} bytes for {h}x{w}x{c}, got {len(raw)}")
    values = np.frombuffer(raw, dtype="<f4", offset=_HEADER.size).astype(float)
    return PillarFeatureMap(values.reshape(h, w, c))
