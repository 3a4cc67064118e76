"""Pillar-based 3D detection toolkit.

The non-learned half of a pillar detector: multi-view pillarization with
point/pillar feature projection, target assignment and box codecs for the
anchor/point/pillar paradigms, detection losses with analytic gradients,
oriented NMS, distance-binned mAP evaluation, and a deterministic synthetic
scene generator that closes the loop end to end.
"""

__version__ = "0.1.0"

from .geom import Box7, Point3, iou_3d, iou_bev, point_in_box, wrap_angle
from .views import ViewCoord, ViewKind, ViewSpec, bin_center, bin_of, default_view_spec, project
from .pillars import (
    PillarFeatureMap,
    PillarGrid,
    aggregate,
    build_grid,
    gather_bilinear,
    gather_bilinear_backward,
    gather_nearest,
)
from .targets import (
    AnchorSpec,
    Assignment,
    Label,
    RegressionTarget,
    assign_anchor,
    assign_pillar,
    assign_point,
    decode,
    encode,
    positive_fraction,
)
from .losses import LossConfig, LossValue, batch_loss, focal_loss, regression_loss, smooth_l1
from .detect import Detection, NmsConfig, decode_map, nms, run_pipeline
from .evaluation import EvalConfig, EvalResult, average_precision, evaluate, match
from .synth import Scene, SceneConfig, generate, read_scene, write_scene
from .config import PipelineConfig, default_config, load_config, save_config

__all__ = [
    "Box7",
    "Point3",
    "iou_3d",
    "iou_bev",
    "point_in_box",
    "wrap_angle",
    "ViewCoord",
    "ViewKind",
    "ViewSpec",
    "bin_center",
    "bin_of",
    "default_view_spec",
    "project",
    "PillarFeatureMap",
    "PillarGrid",
    "aggregate",
    "build_grid",
    "gather_bilinear",
    "gather_bilinear_backward",
    "gather_nearest",
    "AnchorSpec",
    "Assignment",
    "Label",
    "RegressionTarget",
    "assign_anchor",
    "assign_pillar",
    "assign_point",
    "decode",
    "encode",
    "positive_fraction",
    "LossConfig",
    "LossValue",
    "batch_loss",
    "focal_loss",
    "regression_loss",
    "smooth_l1",
    "Detection",
    "NmsConfig",
    "decode_map",
    "nms",
    "run_pipeline",
    "EvalConfig",
    "EvalResult",
    "average_precision",
    "evaluate",
    "match",
    "Scene",
    "SceneConfig",
    "generate",
    "read_scene",
    "write_scene",
    "PipelineConfig",
    "default_config",
    "load_config",
    "save_config",
]
