"""Projections into the four working views (BEV, SPV, CYV, XZ) and 2D binning.

Each view maps a 3D point to two gridded coordinates (axis0 -> rows, axis1 ->
cols) plus a depth coordinate that is carried per point but never binned:

    BEV: (x, y) gridded, depth z
    SPV: (azimuth phi, inclination theta) gridded, depth d = |p|
    CYV: (azimuth phi, z) gridded, depth rho = hypot(x, y)
    XZ:  (x, z) gridded, depth y, split into y >= 0 and y < 0 half-spaces

Azimuths use atan2 and are reduced to [0, 2*pi). Binning is uniform with the
upper range boundary folded into the last bin so boundary points are kept.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

__all__ = [
    "ViewKind",
    "ViewSpec",
    "ViewCoord",
    "AngleUndefinedError",
    "project",
    "project_points",
    "bin_of",
    "bins_of",
    "bin_center",
    "bin_center_grid",
    "default_view_spec",
    "HORIZONTAL_RANGE",
    "VERTICAL_RANGE",
    "AZIMUTH_RANGE",
    "INCLINATION_RANGE",
    "RADIAL_RANGE",
    "DEFAULT_BINS",
]

_TWO_PI = 2.0 * math.pi

# Default detection ranges, shared by the whole pipeline.
HORIZONTAL_RANGE = (-75.2, 75.2)
VERTICAL_RANGE = (-3.0, 3.0)
AZIMUTH_RANGE = (0.0, _TWO_PI)
INCLINATION_RANGE = (0.485 * math.pi, 0.55 * math.pi)
RADIAL_RANGE = (0.0, 107.0)
DEFAULT_BINS = (512, 512)


class ViewKind(str, Enum):
    BEV = "bev"
    SPV = "spv"
    CYV = "cyv"
    XZ = "xz"


class AngleUndefinedError(ValueError):
    """The azimuth is undefined because the point sits on the Z axis."""


@dataclass(frozen=True)
class ViewCoord:
    """A projected point: gridded coordinates (u, v) plus the depth coordinate."""

    u: float
    v: float
    depth: float = math.nan


@dataclass(frozen=True)
class ViewSpec:
    """A view plus its 2D bin layout.

    bins is (H, W): axis0 is divided into H rows, axis1 into W columns.
    depth_range documents the expected span of the unbinned coordinate.
    y_sign only matters for XZ views: +1 keeps y >= 0, -1 keeps y < 0.
    """

    kind: ViewKind
    axis0_range: tuple[float, float]
    axis1_range: tuple[float, float]
    bins: tuple[int, int] = DEFAULT_BINS
    depth_range: tuple[float, float] | None = None
    y_sign: int = 1

    def __post_init__(self):
        object.__setattr__(self, "kind", ViewKind(self.kind))
        object.__setattr__(self, "axis0_range", _checked_range(self.axis0_range, "axis0"))
        object.__setattr__(self, "axis1_range", _checked_range(self.axis1_range, "axis1"))
        if self.depth_range is not None:
            object.__setattr__(self, "depth_range", _checked_range(self.depth_range, "depth"))
        h, w = self.bins
        if int(h) < 1 or int(w) < 1:
            raise ValueError(f"bins must be >= 1, got {self.bins}")
        object.__setattr__(self, "bins", (int(h), int(w)))
        if self.y_sign not in (1, -1):
            raise ValueError(f"y_sign must be +1 or -1, got {self.y_sign}")

    @property
    def h(self) -> int:
        return self.bins[0]

    @property
    def w(self) -> int:
        return self.bins[1]

    @property
    def n_pillars(self) -> int:
        return self.bins[0] * self.bins[1]

    def depth_midpoint(self) -> float:
        if self.depth_range is None:
            raise ValueError("view spec has no depth range")
        return 0.5 * (self.depth_range[0] + self.depth_range[1])


def _checked_range(rng, name) -> tuple[float, float]:
    lo, hi = (float(v) for v in rng)
    if not (math.isfinite(lo) and math.isfinite(hi)) or not lo < hi:
        raise ValueError(f"{name} range must be finite with min < max, got ({lo}, {hi})")
    return (lo, hi)


def default_view_spec(kind, bins: tuple[int, int] = DEFAULT_BINS, y_sign: int = 1) -> ViewSpec:
    """A ViewSpec with the default detection ranges for the given view."""
    kind = ViewKind(kind)
    if kind is ViewKind.BEV:
        return ViewSpec(kind, HORIZONTAL_RANGE, HORIZONTAL_RANGE, bins, VERTICAL_RANGE)
    if kind is ViewKind.SPV:
        return ViewSpec(kind, AZIMUTH_RANGE, INCLINATION_RANGE, bins, RADIAL_RANGE)
    if kind is ViewKind.CYV:
        return ViewSpec(kind, AZIMUTH_RANGE, VERTICAL_RANGE, bins, RADIAL_RANGE)
    return ViewSpec(kind, HORIZONTAL_RANGE, VERTICAL_RANGE, bins, HORIZONTAL_RANGE, y_sign)


def project(p, kind) -> ViewCoord:
    """Project one point into a view; see the module docstring for layouts.

    Raises AngleUndefinedError for SPV/CYV when x = y = 0 (the azimuth is
    meaningless there); callers must filter such points themselves.
    """
    kind = ViewKind(kind)
    x, y, z = (float(v) for v in p)
    if kind is ViewKind.BEV:
        return ViewCoord(x, y, z)
    if kind is ViewKind.XZ:
        return ViewCoord(x, z, y)
    if x == 0.0 and y == 0.0:
        raise AngleUndefinedError(f"azimuth undefined at x=y=0 for {kind.value} view")
    phi = math.atan2(y, x) % _TWO_PI
    if phi == _TWO_PI:
        phi = 0.0
    if kind is ViewKind.CYV:
        return ViewCoord(phi, z, math.hypot(x, y))
    d = math.sqrt(x * x + y * y + z * z)
    theta = math.acos(min(1.0, max(-1.0, z / d)))
    return ViewCoord(phi, theta, d)


def project_points(points, kind):
    """Vectorized projection of an (N, 3) array.

    Returns (coords, valid) where coords is (N, 3) rows of (u, v, depth) and
    valid marks points whose projection is defined; invalid rows are NaN.
    """
    kind = ViewKind(kind)
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    n = len(pts)
    coords = np.empty((n, 3))
    valid = np.ones(n, dtype=bool)
    x, y, z = pts[:, 0], pts[:, 1], pts[:, 2]
    if kind is ViewKind.BEV:
        coords[:, 0], coords[:, 1], coords[:, 2] = x, y, z
        return coords, valid
    if kind is ViewKind.XZ:
        coords[:, 0], coords[:, 1], coords[:, 2] = x, z, y
        return coords, valid
    on_axis = (x == 0.0) & (y == 0.0)
    valid = ~on_axis
    phi = np.mod(np.arctan2(y, x), _TWO_PI)
    phi[phi == _TWO_PI] = 0.0
    if kind is ViewKind.CYV:
        coords[:, 0], coords[:, 1], coords[:, 2] = phi, z, np.hypot(x, y)
    else:
        d = np.sqrt(x * x + y * y + z * z)
        with np.errstate(invalid="ignore", divide="ignore"):
            theta = np.arccos(np.clip(np.where(d > 0, z / d, 0.0), -1.0, 1.0))
        coords[:, 0], coords[:, 1], coords[:, 2] = phi, theta, d
    coords[on_axis] = np.nan
    return coords, valid


def _axis_bin(value: float, lo: float, hi: float, n: int):
    if not lo <= value <= hi:
        return None
    idx = int(math.floor((value - lo) * n / (hi - lo)))
    return min(idx, n - 1)


def bin_of(coord, spec: ViewSpec):
    """Map a projected coordinate to its (row, col) bin, or None if out of range.

    The upper boundary of each axis range falls into the last bin. For XZ
    views the point must also lie in the spec's half-space (y = 0 counts as
    the positive half).
    """
    if isinstance(coord, ViewCoord):
        u, v, depth = coord.u, coord.v, coord.depth
    else:
        u, v, depth = (float(c) for c in coord)
    if spec.kind is ViewKind.XZ and not _half_space_ok(depth, spec.y_sign):
        return None
    row = _axis_bin(u, *spec.axis0_range, spec.bins[0])
    col = _axis_bin(v, *spec.axis1_range, spec.bins[1])
    if row is None or col is None:
        return None
    return (row, col)


def _half_space_ok(depth, y_sign):
    return depth >= 0.0 if y_sign > 0 else depth < 0.0


def bins_of(coords: np.ndarray, spec: ViewSpec, valid=None):
    """Vectorized bin_of over (N, 3) projected coordinates.

    Returns (rows, cols, ok); rows/cols are only meaningful where ok.
    """
    u, v, depth = coords[:, 0], coords[:, 1], coords[:, 2]
    ok = np.ones(len(coords), dtype=bool) if valid is None else valid.copy()
    (lo0, hi0), (lo1, hi1) = spec.axis0_range, spec.axis1_range
    with np.errstate(invalid="ignore"):
        ok &= (u >= lo0) & (u <= hi0) & (v >= lo1) & (v <= hi1)
        if spec.kind is ViewKind.XZ:
            ok &= depth >= 0.0 if spec.y_sign > 0 else depth < 0.0
    h, w = spec.bins
    rows = np.zeros(len(coords), dtype=np.int64)
    cols = np.zeros(len(coords), dtype=np.int64)
    rows[ok] = np.minimum(
        np.floor((u[ok] - lo0) * h / (hi0 - lo0)).astype(np.int64), h - 1
    )
    cols[ok] = np.minimum(
        np.floor((v[ok] - lo1) * w / (hi1 - lo1)).astype(np.int64), w - 1
    )
    return rows, cols, ok


def bin_center(row: int, col: int, spec: ViewSpec) -> ViewCoord:
    """Continuous (u, v) coordinates of a bin center; depth is left unset."""
    h, w = spec.bins
    if not (0 <= row < h and 0 <= col < w):
        raise IndexError(f"bin ({row}, {col}) outside grid {spec.bins}")
    (lo0, hi0), (lo1, hi1) = spec.axis0_range, spec.axis1_range
    u = lo0 + (row + 0.5) * (hi0 - lo0) / h
    v = lo1 + (col + 0.5) * (hi1 - lo1) / w
    return ViewCoord(u, v)


@functools.lru_cache(maxsize=16)
def bin_center_grid(spec: ViewSpec) -> np.ndarray:
    """All bin centers as a read-only (H, W, 2) array of (u, v)."""
    h, w = spec.bins
    (lo0, hi0), (lo1, hi1) = spec.axis0_range, spec.axis1_range
    us = lo0 + (np.arange(h) + 0.5) * (hi0 - lo0) / h
    vs = lo1 + (np.arange(w) + 0.5) * (hi1 - lo1) / w
    out = np.empty((h, w, 2))
    out[:, :, 0] = us[:, None]
    out[:, :, 1] = vs[None, :]
    out.setflags(write=False)
    return out
