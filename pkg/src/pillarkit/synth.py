"""Deterministic synthetic LiDAR scenes: boxes plus surface/clutter points.

Scenes are a pure function of their configuration. Randomness comes from
counter-based Philox streams keyed on (seed, stream, entity index), so
per-box point sampling is independent of placement order. Boxes are placed
by rejection until every pair of BEV footprints is disjoint (the default),
which also guarantees no point lies in more than one box. Points are sampled
just inside the four vertical faces of each box (a crude stand-in for a
LiDAR surface return) plus uniform ground clutter.

On disk a scene is a small binary point file plus a JSON sidecar:

    <stem>.plrd: magic "PLRD", u16 version, u64 point count, N*3 f64 LE
    <stem>.json: {"format", "version", "boxes": [{box, class_id, num_points}]}
"""

from __future__ import annotations

import json
import math
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geom import Box7, iou_bev, point_in_box

__all__ = [
    "ClassSpec",
    "SceneConfig",
    "Scene",
    "SceneFormatError",
    "SceneGenerationError",
    "generate",
    "write_scene",
    "read_scene",
    "sidecar_path",
]

MAGIC = b"PLRD"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sHQ")

# distance points are pulled inside a face so containment survives the
# world-frame round trip (transform error is ~1e-14 m at 75 m range)
_FACE_INSET = 1e-6

_STREAM_PLACEMENT = 1
_STREAM_BOX_POINTS = 2
_STREAM_CLUTTER = 3


class SceneFormatError(ValueError):
    """A scene file is malformed (bad magic, version, or payload length)."""


class SceneGenerationError(RuntimeError):
    """Box placement failed within the attempt budget (range too crowded)."""


@dataclass(frozen=True)
class ClassSpec:
    """Size ranges (meters) for one object class."""

    name: str = "vehicle"
    length_range: tuple[float, float] = (3.8, 5.2)
    width_range: tuple[float, float] = (1.7, 2.2)
    height_range: tuple[float, float] = (1.4, 1.9)


@dataclass(frozen=True)
class SceneConfig:
    """Everything that determines a scene; equal configs give equal scenes."""

    seed: int = 0
    box_count: tuple[int, int] = (10, 30)
    classes: tuple[ClassSpec, ...] = (ClassSpec(),)
    horizontal_range: tuple[float, float] = (-75.2, 75.2)
    vertical_range: tuple[float, float] = (-3.0, 3.0)
    points_per_box: tuple[int, int] = (80, 240)
    clutter_points: int = 6000
    require_disjoint: bool = True
    max_attempts_per_box: int = 200

    def __post_init__(self):
        lo, hi = self.box_count
        if lo < 0 or hi < lo:
            raise ValueError(f"bad box count range {self.box_count}")
        lo, hi = self.points_per_box
        if lo < 0 or hi < lo:
            raise ValueError(f"bad points-per-box range {self.points_per_box}")
        if self.clutter_points < 0:
            raise ValueError("clutter_points must be >= 0")
        if not self.classes:
            raise ValueError("need at least one class")


@dataclass
class Scene:
    """Points plus labeled boxes; point_counts is the exact per-box occupancy."""

    points: np.ndarray
    boxes: list[Box7]
    class_ids: np.ndarray
    point_counts: np.ndarray = field(default=None)

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float).reshape(-1, 3)
        self.class_ids = np.asarray(self.class_ids, dtype=np.int64)
        if self.point_counts is None:
            self.point_counts = count_points_in_boxes(self.points, self.boxes)
        else:
            self.point_counts = np.asarray(self.point_counts, dtype=np.int64)


def count_points_in_boxes(points: np.ndarray, boxes) -> np.ndarray:
    """Exact per-box occupancy by re-testing every point."""
    return np.array([int(np.sum(point_in_box(points, b))) for b in boxes], dtype=np.int64)


def _stream_rng(seed: int, stream: int, index: int = 0) -> np.random.Generator:
    """A Philox generator keyed on (seed, stream, index); order independent."""
    key = (int(seed) & 0xFFFFFFFFFFFFFFFF) << 64 | (stream & 0xFFFFFFFF) << 32 | (index & 0xFFFFFFFF)
    return np.random.Generator(np.random.Philox(key=key))


def _sample_box(rng: np.random.Generator, cfg: SceneConfig):
    class_id = int(rng.integers(0, len(cfg.classes)))
    cls = cfg.classes[class_id]
    l = float(rng.uniform(*cls.length_range))
    w = float(rng.uniform(*cls.width_range))
    h = float(rng.uniform(*cls.height_range))
    theta = float(rng.uniform(-math.pi, math.pi))
    # keep the whole footprint inside the horizontal range
    margin = 0.5 * math.hypot(l, w)
    h_lo, h_hi = cfg.horizontal_range
    v_lo, v_hi = cfg.vertical_range
    if h_lo + margin >= h_hi - margin or v_lo + 0.5 * h >= v_hi - 0.5 * h:
        return None
    cx = float(rng.uniform(h_lo + margin, h_hi - margin))
    cy = float(rng.uniform(h_lo + margin, h_hi - margin))
    cz = float(rng.uniform(v_lo + 0.5 * h, v_hi - 0.5 * h))
    return Box7(cx, cy, cz, l, w, h, theta), class_id


def _surface_points(rng: np.random.Generator, box: Box7, count: int) -> np.ndarray:
    """Uniform samples just inside the box's four vertical faces."""
    hl = 0.5 * box.l - _FACE_INSET
    hw = 0.5 * box.w - _FACE_INSET
    hh = 0.5 * box.h - _FACE_INSET
    areas = np.array([box.l * box.h, box.l * box.h, box.w * box.h, box.w * box.h])
    faces = rng.choice(4, size=count, p=areas / areas.sum())
    a = rng.uniform(-1.0, 1.0, size=count)
    zs = rng.uniform(-hh, hh, size=count)
    lx = np.where(faces < 2, a * hl, np.where(faces == 2, hl, -hl))
    ly = np.where(faces < 2, np.where(faces == 0, hw, -hw), a * hw)
    c = math.cos(box.theta)
    s = math.sin(box.theta)
    out = np.empty((count, 3))
    out[:, 0] = box.cx + c * lx - s * ly
    out[:, 1] = box.cy + s * lx + c * ly
    out[:, 2] = box.cz + zs
    return out


def generate(cfg: SceneConfig) -> Scene:
    """Generate a scene deterministically from its configuration."""
    place_rng = _stream_rng(cfg.seed, _STREAM_PLACEMENT)
    n_boxes = int(place_rng.integers(cfg.box_count[0], cfg.box_count[1] + 1))
    boxes: list[Box7] = []
    class_ids = []
    for _ in range(n_boxes):
        for attempt in range(cfg.max_attempts_per_box + 1):
            if attempt == cfg.max_attempts_per_box:
                raise SceneGenerationError(
                    f"could not place box {len(boxes)} after {attempt} attempts"
                )
            sampled = _sample_box(place_rng, cfg)
            if sampled is None:
                raise SceneGenerationError("placement range too small for box sizes")
            box, class_id = sampled
            if cfg.require_disjoint and any(iou_bev(box, other) > 0.0 for other in boxes):
                continue
            boxes.append(box)
            class_ids.append(class_id)
            break

    chunks = []
    for i, box in enumerate(boxes):
        rng = _stream_rng(cfg.seed, _STREAM_BOX_POINTS, i)
        count = int(rng.integers(cfg.points_per_box[0], cfg.points_per_box[1] + 1))
        if count:
            chunks.append(_surface_points(rng, box, count))
    if cfg.clutter_points:
        rng = _stream_rng(cfg.seed, _STREAM_CLUTTER)
        clutter = np.empty((cfg.clutter_points, 3))
        clutter[:, 0] = rng.uniform(*cfg.horizontal_range, size=cfg.clutter_points)
        clutter[:, 1] = rng.uniform(*cfg.horizontal_range, size=cfg.clutter_points)
        clutter[:, 2] = rng.uniform(*cfg.vertical_range, size=cfg.clutter_points)
        chunks.append(clutter)
    points = np.concatenate(chunks) if chunks else np.zeros((0, 3))
    return Scene(points, boxes, np.array(class_ids, dtype=np.int64))


def sidecar_path(path) -> Path:
    return Path(path).with_suffix(".json")


def _atomic_write_bytes(path, payload: bytes) -> None:
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(payload)
    os.replace(tmp, path)


def write_scene(scene: Scene, path) -> None:
    """Write the point payload and its JSON sidecar atomically."""
    path = Path(path)
    data = np.ascontiguousarray(scene.points, dtype="<f8")
    header = _HEADER.pack(MAGIC, FORMAT_VERSION, len(scene.points))
    _atomic_write_bytes(path, header + data.tobytes())
    sidecar = {
        "format": "pillarkit-scene",
        "version": FORMAT_VERSION,
        "boxes": [
            {
                "box": [float(v) for v in box.as_array()],
                "class_id": int(cid),
                "num_points": int(n),
            }
            for box, cid, n in zip(scene.boxes, scene.class_ids, scene.point_counts)
        ],
    }
    payload = json.dumps(sidecar, sort_keys=True, indent=2) + "\n"
    _atomic_write_bytes(sidecar_path(path), payload.encode())


def read_scene(path) -> Scene:
    """Read a scene back; bit-exact inverse of write_scene."""
    path = Path(path)
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER.size:
        raise SceneFormatError(f"{path}: truncated header")
    magic, version, count = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise SceneFormatError(f"{path}: bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise SceneFormatError(f"{path}: unsupported version {version}")
    expected = _HEADER.size + 24 * count
    if len(raw) != expected:
        raise SceneFormatError(f"{path}: expected {expected} bytes for {count} points, got {len(raw)}")
    points = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size).astype(float).reshape(-1, 3)

    side = sidecar_path(path)
    try:
        meta = json.loads(side.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise SceneFormatError(f"{side}: {exc}") from exc
    if meta.get("format") != "pillarkit-scene" or meta.get("version") != FORMAT_VERSION:
        raise SceneFormatError(f"{side}: not a scene sidecar")
    boxes = []
    class_ids = []
    counts = []
    try:
        for entry in meta["boxes"]:
            boxes.append(Box7.from_array(entry["box"]))
            class_ids.append(int(entry["class_id"]))
            counts.append(int(entry["num_points"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise SceneFormatError(f"{side}: bad box record: {exc}") from exc
    return Scene(points, boxes, np.array(class_ids, dtype=np.int64), np.array(counts, dtype=np.int64))
