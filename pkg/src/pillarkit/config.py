"""Pipeline configuration: defaults for every stage, JSON round trip.

The default configuration carries the standard operating constants so a
bare run needs no config file: detection ranges per view, 512x512 grids,
smooth-L1 sigma 3, focal alpha 0.25 / gamma 2, NMS IoU 0.7 (vehicle) and
0.2 (pedestrian) with a top-200 cap, matching IoU 0.7 / 0.5, and the
0-30 m / 30-50 m / 50 m-inf distance bins.

Config files are strict: unknown keys anywhere raise ConfigError with the
offending path before any work happens. An unbounded distance-bin edge is
written as null and may be given as null or "inf".
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

from .detect import NmsConfig
from .evaluation import EvalConfig
from .losses import LossConfig
from .synth import ClassSpec, SceneConfig
from .targets import AnchorSpec
from .views import ViewKind, ViewSpec, default_view_spec

__all__ = [
    "ClassConfig",
    "PipelineConfig",
    "ConfigError",
    "default_config",
    "config_to_dict",
    "config_from_dict",
    "load_config",
    "save_config",
    "PARADIGMS",
    "INTERPOLATIONS",
]

PARADIGMS = ("anchor", "point", "pillar")
INTERPOLATIONS = ("nearest", "bilinear")


class ConfigError(ValueError):
    """The configuration file violates the schema."""


@dataclass(frozen=True)
class ClassConfig:
    """Detector-side settings for one object class."""

    class_id: int
    name: str
    nms_iou: float
    eval_iou: float
    anchor: AnchorSpec


def _default_views() -> dict[str, ViewSpec]:
    return {
        "bev": default_view_spec(ViewKind.BEV),
        "cyv": default_view_spec(ViewKind.CYV),
        "spv": default_view_spec(ViewKind.SPV),
        "xz_pos": default_view_spec(ViewKind.XZ, y_sign=1),
        "xz_neg": default_view_spec(ViewKind.XZ, y_sign=-1),
    }


@dataclass(frozen=True)
class PipelineConfig:
    """Aggregated settings for the batch pipeline.

    view_order fixes the per-point concatenation order when features from
    several views are gathered; the convention here is BEV first, then the
    cylindrical view, then any extras.
    """

    paradigm: str = "pillar"
    interp: str = "bilinear"
    nms_iou_kind: str = "bev"
    views: dict[str, ViewSpec] = None
    view_order: tuple[str, ...] = ("bev", "cyv")
    loss: LossConfig = LossConfig()
    nms: NmsConfig = NmsConfig()
    eval: EvalConfig = EvalConfig()
    scene: SceneConfig = SceneConfig()
    classes: tuple[ClassConfig, ...] = (
        ClassConfig(0, "vehicle", 0.7, 0.7, AnchorSpec(4.73, 2.08, 1.77, 0.0)),
        ClassConfig(1, "pedestrian", 0.2, 0.5, AnchorSpec(0.9, 0.9, 1.7, 0.0)),
    )

    def __post_init__(self):
        if self.views is None:
            object.__setattr__(self, "views", _default_views())
        if self.paradigm not in PARADIGMS:
            raise ConfigError(f"paradigm must be one of {PARADIGMS}, got {self.paradigm!r}")
        if self.interp not in INTERPOLATIONS:
            raise ConfigError(f"interp must be one of {INTERPOLATIONS}, got {self.interp!r}")
        if self.nms_iou_kind not in ("bev", "3d"):
            raise ConfigError(f"nms_iou_kind must be bev or 3d, got {self.nms_iou_kind!r}")
        for name in self.view_order:
            if name not in self.views:
                raise ConfigError(f"view_order references unknown view {name!r}")

    def bev(self) -> ViewSpec:
        return self.views["bev"]

    def class_by_id(self, class_id: int) -> ClassConfig:
        for cls in self.classes:
            if cls.class_id == class_id:
                return cls
        raise ConfigError(f"no class with id {class_id}")


def default_config() -> PipelineConfig:
    return PipelineConfig()


def _strict(mapping: dict, allowed, path: str) -> None:
    if not isinstance(mapping, dict):
        raise ConfigError(f"{path}: expected an object")
    unknown = set(mapping) - set(allowed)
    if unknown:
        raise ConfigError(f"{path}: unknown key(s) {sorted(unknown)}")


def _pair(value, path: str) -> tuple:
    if not isinstance(value, (list, tuple)) or len(value) != 2:
        raise ConfigError(f"{path}: expected [min, max]")
    return tuple(value)


def _view_to_dict(spec: ViewSpec) -> dict:
    return {
        "kind": spec.kind.value,
        "axis0_range": list(spec.axis0_range),
        "axis1_range": list(spec.axis1_range),
        "bins": list(spec.bins),
        "depth_range": None if spec.depth_range is None else list(spec.depth_range),
        "y_sign": spec.y_sign,
    }


def _view_from_dict(d: dict, path: str) -> ViewSpec:
    _strict(d, ("kind", "axis0_range", "axis1_range", "bins", "depth_range", "y_sign"), path)
    try:
        return ViewSpec(
            kind=d["kind"],
            axis0_range=_pair(d["axis0_range"], f"{path}.axis0_range"),
            axis1_range=_pair(d["axis1_range"], f"{path}.axis1_range"),
            bins=tuple(d.get("bins", (512, 512))),
            depth_range=None
            if d.get("depth_range") is None
            else _pair(d["depth_range"], f"{path}.depth_range"),
            y_sign=d.get("y_sign", 1),
        )
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def _bins_to_json(bins) -> list:
    return [[lo, None if math.isinf(hi) else hi] for lo, hi in bins]


def _bins_from_json(raw, path: str) -> tuple:
    out = []
    for i, pair in enumerate(raw):
        lo, hi = _pair(pair, f"{path}[{i}]")
        if hi is None or hi == "inf":
            hi = math.inf
        out.append((float(lo), float(hi)))
    return tuple(out)


def config_to_dict(cfg: PipelineConfig) -> dict:
    return {
        "paradigm": cfg.paradigm,
        "interp": cfg.interp,
        "nms_iou_kind": cfg.nms_iou_kind,
        "view_order": list(cfg.view_order),
        "views": {name: _view_to_dict(spec) for name, spec in sorted(cfg.views.items())},
        "loss": {
            "sigma": cfg.loss.sigma,
            "alpha": cfg.loss.alpha,
            "gamma": cfg.loss.gamma,
            "wrap_heading": cfg.loss.wrap_heading,
        },
        "nms": {
            "iou_threshold": cfg.nms.iou_threshold,
            "max_keep": cfg.nms.max_keep,
            "score_floor": cfg.nms.score_floor,
        },
        "eval": {
            "iou_threshold": cfg.eval.iou_threshold,
            "iou_kind": cfg.eval.iou_kind,
            "distance_bins": _bins_to_json(cfg.eval.distance_bins),
            "min_points_level1": cfg.eval.min_points_level1,
        },
        "scene": {
            "seed": cfg.scene.seed,
            "box_count": list(cfg.scene.box_count),
            "classes": [
                {
                    "name": c.name,
                    "length_range": list(c.length_range),
                    "width_range": list(c.width_range),
                    "height_range": list(c.height_range),
                }
                for c in cfg.scene.classes
            ],
            "horizontal_range": list(cfg.scene.horizontal_range),
            "vertical_range": list(cfg.scene.vertical_range),
            "points_per_box": list(cfg.scene.points_per_box),
            "clutter_points": cfg.scene.clutter_points,
            "require_disjoint": cfg.scene.require_disjoint,
            "max_attempts_per_box": cfg.scene.max_attempts_per_box,
        },
        "classes": [
            {
                "class_id": c.class_id,
                "name": c.name,
                "nms_iou": c.nms_iou,
                "eval_iou": c.eval_iou,
                "anchor": {
                    "length": c.anchor.length,
                    "width": c.anchor.width,
                    "height": c.anchor.height,
                    "center_z": c.anchor.center_z,
                    "orientations": list(c.anchor.orientations),
                },
            }
            for c in cfg.classes
        ],
    }


def config_from_dict(data: dict) -> PipelineConfig:
    _strict(
        data,
        (
            "paradigm",
            "interp",
            "nms_iou_kind",
            "view_order",
            "views",
            "loss",
            "nms",
            "eval",
            "scene",
            "classes",
        ),
        "config",
    )
    base = default_config()
    views = dict(base.views)
    if "views" in data:
        if not isinstance(data["views"], dict):
            raise ConfigError("config.views: expected an object")
        for name, raw in data["views"].items():
            views[name] = _view_from_dict(raw, f"config.views.{name}")

    loss = base.loss
    if "loss" in data:
        _strict(data["loss"], ("sigma", "alpha", "gamma", "wrap_heading"), "config.loss")
        try:
            loss = LossConfig(**data["loss"])
        except ValueError as exc:
            raise ConfigError(f"config.loss: {exc}") from exc

    nms = base.nms
    if "nms" in data:
        _strict(data["nms"], ("iou_threshold", "max_keep", "score_floor"), "config.nms")
        try:
            nms = NmsConfig(**data["nms"])
        except ValueError as exc:
            raise ConfigError(f"config.nms: {exc}") from exc

    evl = base.eval
    if "eval" in data:
        _strict(
            data["eval"],
            ("iou_threshold", "iou_kind", "distance_bins", "min_points_level1"),
            "config.eval",
        )
        kwargs = dict(data["eval"])
        if "distance_bins" in kwargs:
            kwargs["distance_bins"] = _bins_from_json(kwargs["distance_bins"], "config.eval.distance_bins")
        try:
            evl = EvalConfig(**kwargs)
        except ValueError as exc:
            raise ConfigError(f"config.eval: {exc}") from exc

    scene = base.scene
    if "scene" in data:
        _strict(
            data["scene"],
            (
                "seed",
                "box_count",
                "classes",
                "horizontal_range",
                "vertical_range",
                "points_per_box",
                "clutter_points",
                "require_disjoint",
                "max_attempts_per_box",
            ),
            "config.scene",
        )
        kwargs = dict(data["scene"])
        if "classes" in kwargs:
            specs = []
            for i, raw in enumerate(kwargs["classes"]):
                _strict(
                    raw,
                    ("name", "length_range", "width_range", "height_range"),
                    f"config.scene.classes[{i}]",
                )
                specs.append(
                    ClassSpec(
                        name=raw.get("name", f"class{i}"),
                        length_range=_pair(raw["length_range"], "length_range"),
                        width_range=_pair(raw["width_range"], "width_range"),
                        height_range=_pair(raw["height_range"], "height_range"),
                    )
                )
            kwargs["classes"] = tuple(specs)
        for key in ("box_count", "horizontal_range", "vertical_range", "points_per_box"):
            if key in kwargs:
                kwargs[key] = _pair(kwargs[key], f"config.scene.{key}")
        try:
            scene = SceneConfig(**kwargs)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"config.scene: {exc}") from exc

    classes = base.classes
    if "classes" in data:
        parsed = []
        for i, raw in enumerate(data["classes"]):
            _strict(
                raw,
                ("class_id", "name", "nms_iou", "eval_iou", "anchor"),
                f"config.classes[{i}]",
            )
            anchor = AnchorSpec()
            if "anchor" in raw:
                _strict(
                    raw["anchor"],
                    ("length", "width", "height", "center_z", "orientations"),
                    f"config.classes[{i}].anchor",
                )
                kwargs = dict(raw["anchor"])
                if "orientations" in kwargs:
                    kwargs["orientations"] = tuple(kwargs["orientations"])
                anchor = AnchorSpec(**kwargs)
            parsed.append(
                ClassConfig(
                    class_id=int(raw["class_id"]),
                    name=str(raw["name"]),
                    nms_iou=float(raw.get("nms_iou", 0.7)),
                    eval_iou=float(raw.get("eval_iou", 0.7)),
                    anchor=anchor,
                )
            )
        classes = tuple(parsed)

    return PipelineConfig(
        paradigm=data.get("paradigm", base.paradigm),
        interp=data.get("interp", base.interp),
        nms_iou_kind=data.get("nms_iou_kind", base.nms_iou_kind),
        views=views,
        view_order=tuple(data.get("view_order", base.view_order)),
        loss=loss,
        nms=nms,
        eval=evl,
        scene=scene,
        classes=classes,
    )


def load_config(path) -> PipelineConfig:
    try:
        with open(path) as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
    return config_from_dict(data)


def save_config(cfg: PipelineConfig, path) -> None:
    with open(path, "w") as fh:
        json.dump(config_to_dict(cfg), fh, sort_keys=True, indent=2)
        fh.write("\n")
