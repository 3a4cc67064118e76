"""Batch command-line surface: generate / assign / roundtrip / eval / bench.

Machine-readable output goes to stdout or files; progress and summaries go
to stderr, so commands are safe to pipe. Exit codes: 0 success, 1 a
roundtrip assertion failed, 2 usage or IO errors. PILLARKIT_THREADS caps
the worker count where commands parallelize over scenes.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, PipelineConfig, default_config, load_config
from .detect import NmsConfig, nms, decode_map, read_detections_jsonl, run_pipeline, write_detections_jsonl
from .evaluation import evaluate, result_csv_rows, result_to_json
from .pillars import aggregate, build_grid, gather_bilinear, gather_nearest
from .report import save_bench_chart, save_bin_ap_chart, save_pr_curves
from .synth import SceneFormatError, SceneGenerationError, generate, read_scene, sidecar_path, write_scene
from .targets import assign_anchor, assign_pillar, assign_point, write_assignment_jsonl

EXIT_OK = 0
EXIT_ASSERTION = 1
EXIT_USAGE = 2

ROUNDTRIP_AP_TOL = 1e-9

BENCH_STAGES = ("build_grid", "aggregate", "gather_nearest", "gather_bilinear", "assignment", "nms")


def worker_count() -> int:
    """Worker cap from PILLARKIT_THREADS, defaulting to the CPU count."""
    value = os.environ.get("PILLARKIT_THREADS")
    if value:
        return max(1, int(value))
    return os.cpu_count() or 1


def _log(message: str) -> None:
    print(message, file=sys.stderr)


def _atomic_write_text(path: Path, text: str) -> None:
    tmp = Path(f"{path}.tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def _config_for(args) -> PipelineConfig:
    cfg = load_config(args.config) if getattr(args, "config", None) else default_config()
    if getattr(args, "interp", None):
        cfg = replace(cfg, interp=args.interp)
    if getattr(args, "paradigm", None) and args.paradigm != "all":
        cfg = replace(cfg, paradigm=args.paradigm)
    return cfg


def _emit_json(payload: dict, out: str | None) -> None:
    text = json.dumps(payload, sort_keys=True, indent=2) + "\n"
    if out:
        _atomic_write_text(Path(out), text)
    else:
        sys.stdout.write(text)


def cmd_generate(args) -> int:
    cfg = _config_for(args)
    base_seed = args.seed if args.seed is not None else cfg.scene.seed
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    def build(index: int):
        return generate(replace(cfg.scene, seed=base_seed + index))

    workers = min(worker_count(), max(args.count, 1))
    with ThreadPoolExecutor(max_workers=workers) as pool:
        scenes = list(pool.map(build, range(args.count)))

    entries = []
    for index, scene in enumerate(scenes):
        scene_id = f"scene_{index:04d}"
        path = out_dir / f"{scene_id}.plrd"
        write_scene(scene, path)
        entries.append(
            {
                "id": scene_id,
                "points": path.name,
                "labels": sidecar_path(path).name,
                "seed": base_seed + index,
                "n_points": int(len(scene.points)),
                "n_boxes": len(scene.boxes),
            }
        )
    manifest = {
        "format": "pillarkit-manifest",
        "version": 1,
        "count": len(entries),
        "scenes": entries,
    }
    _atomic_write_text(out_dir / "manifest.json", json.dumps(manifest, sort_keys=True, indent=2) + "\n")
    _log(f"wrote {len(entries)} scene(s) under {out_dir}")
    return EXIT_OK


def cmd_assign(args) -> int:
    cfg = _config_for(args)
    scene = read_scene(args.scene)
    paradigm = args.paradigm or cfg.paradigm
    paradigms = ("pillar", "anchor", "point") if paradigm == "all" else (paradigm,)
    spec = cfg.bev()
    anchor = cfg.classes[0].anchor

    buffer = io.StringIO()
    fractions: dict[str, float] = {}
    for name in paradigms:
        if name == "pillar":
            assignment = assign_pillar(spec, scene.boxes)
        elif name == "anchor":
            assignment = assign_anchor(spec, anchor, scene.boxes)
        else:
            assignment = assign_point(scene.points, scene.boxes)
        write_assignment_jsonl(assignment, buffer)
        counts = assignment.counts()
        fraction = counts["positive"] / assignment.n_units if assignment.n_units else 0.0
        fractions[name] = fraction
        _log(f"{name}: {counts['positive']} positive of {assignment.n_units} units "
             f"(positive_fraction {fraction:.3e})")
    if "anchor" in fractions and "pillar" in fractions:
        _log(
            "anchor vs pillar positive_fraction: "
            f"{fractions['anchor']:.3e} vs {fractions['pillar']:.3e}"
        )
    if args.out:
        _atomic_write_text(Path(args.out), buffer.getvalue())
    else:
        sys.stdout.write(buffer.getvalue())
    return EXIT_OK


def cmd_roundtrip(args) -> int:
    cfg = _config_for(args)
    scene = read_scene(args.scene)
    iou_kind = args.iou_kind or cfg.eval.iou_kind
    spec = cfg.bev()

    results = []
    failed = False
    dets_buffer = io.StringIO()
    present = sorted(set(int(c) for c in scene.class_ids))
    for class_id in present:
        cls = cfg.class_by_id(class_id)
        selector = scene.class_ids == class_id
        boxes = [b for b, keep in zip(scene.boxes, selector) if keep]
        counts = scene.point_counts[selector]
        dets = run_pipeline(
            scene.points,
            spec,
            gt_boxes=boxes,
            nms_cfg=replace(cfg.nms, iou_threshold=cls.nms_iou),
            iou_kind=cfg.nms_iou_kind,
            class_id=class_id,
        )
        write_detections_jsonl(dets, args.scene_id, dets_buffer)
        eval_cfg = replace(cfg.eval, iou_threshold=cls.eval_iou, iou_kind=iou_kind)
        result = evaluate([(dets, boxes, counts)], eval_cfg)
        results.append(result_to_json(result, cls.name, iou_kind))
        if result.overall_ap is None:
            _log(f"{cls.name}: no ground truth above the point filter; AP absent")
        elif abs(result.overall_ap - 1.0) > ROUNDTRIP_AP_TOL:
            failed = True
            _log(f"{cls.name}: roundtrip AP {result.overall_ap!r} != 1.0")
        else:
            _log(f"{cls.name}: roundtrip AP 1.0 over {result.n_gt} box(es)")
    if not present:
        _log("scene has no boxes; AP absent")

    payload = {
        "scene": str(args.scene),
        "iou_kind": iou_kind,
        "interp": cfg.interp,
        "results": results,
    }
    _emit_json(payload, args.out)
    if args.dets_out:
        _atomic_write_text(Path(args.dets_out), dets_buffer.getvalue())
    return EXIT_ASSERTION if failed else EXIT_OK


def cmd_eval(args) -> int:
    cfg = _config_for(args)
    manifest_path = Path(args.manifest)
    manifest = json.loads(manifest_path.read_text())
    if manifest.get("format") != "pillarkit-manifest":
        raise ConfigError(f"{manifest_path}: not a scene manifest")
    scene_dir = manifest_path.parent
    scenes = {}
    for entry in manifest["scenes"]:
        scenes[entry["id"]] = read_scene(scene_dir / entry["points"])

    if args.iou_kind:
        cfg = replace(cfg, eval=replace(cfg.eval, iou_kind=args.iou_kind))
    with open(args.dets) as fh:
        dets_by_scene = read_detections_jsonl(fh)
    unknown = sorted(set(dets_by_scene) - set(scenes))
    if unknown:
        raise ConfigError(f"detections reference unknown scene id(s): {unknown}")

    per_class = []
    for cls in cfg.classes:
        has_any = any(
            any(d.class_id == cls.class_id for d in dets_by_scene.get(sid, ()))
            or bool(np.any(scene.class_ids == cls.class_id))
            for sid, scene in scenes.items()
        )
        if not has_any:
            continue
        triples = []
        for scene_id in sorted(scenes):
            scene = scenes[scene_id]
            dets = [d for d in dets_by_scene.get(scene_id, []) if d.class_id == cls.class_id]
            selector = scene.class_ids == cls.class_id
            boxes = [b for b, keep in zip(scene.boxes, selector) if keep]
            triples.append((dets, boxes, scene.point_counts[selector]))
        eval_cfg = replace(cfg.eval, iou_threshold=cls.eval_iou)
        per_class.append((cls.name, evaluate(triples, eval_cfg)))

    payload = {
        "iou_kind": cfg.eval.iou_kind,
        "results": [result_to_json(result, name, cfg.eval.iou_kind) for name, result in per_class],
    }
    _emit_json(payload, args.out)

    if args.out:
        out = Path(args.out)
        rows = []
        for index, (name, result) in enumerate(per_class):
            class_rows = result_csv_rows(result, name)
            rows.extend(class_rows if index == 0 else class_rows[1:])
        csv_path = out.with_suffix(".csv")
        sink = io.StringIO()
        csv.writer(sink).writerows(rows)
        _atomic_write_text(csv_path, sink.getvalue())
        if not args.no_figures and per_class:
            save_pr_curves(
                [(name, result.recall, result.precision) for name, result in per_class],
                out.with_name(out.stem + "_pr.png"),
            )
            save_bin_ap_chart(per_class, out.with_name(out.stem + "_bins.png"))
        _log(f"metrics written to {out} (+ CSV{'' if args.no_figures else ' and figures'})")
    return EXIT_OK


def _bench_scene(cfg: PipelineConfig, n_points: int, seed: int):
    base = generate(replace(cfg.scene, seed=seed, clutter_points=0))
    clutter = max(0, n_points - len(base.points))
    return generate(replace(cfg.scene, seed=seed, clutter_points=clutter))


def cmd_bench(args) -> int:
    cfg = _config_for(args)
    seed = args.seed if args.seed is not None else cfg.scene.seed
    sizes = [int(s) for s in args.sizes.split(",") if s]
    spec = cfg.bev()
    rows = []
    rng = np.random.default_rng(seed)
    for size in sizes:
        scene = _bench_scene(cfg, size, seed)
        points = scene.points
        features = rng.standard_normal((len(points), 8))

        start = time.perf_counter()
        grid = build_grid(points, spec)
        rows.append((len(points), "build_grid", time.perf_counter() - start))

        start = time.perf_counter()
        fmap = aggregate(features, grid)
        rows.append((len(points), "aggregate", time.perf_counter() - start))

        start = time.perf_counter()
        gather_nearest(fmap, grid)
        rows.append((len(points), "gather_nearest", time.perf_counter() - start))

        start = time.perf_counter()
        gather_bilinear(fmap, points, spec)
        rows.append((len(points), "gather_bilinear", time.perf_counter() - start))

        start = time.perf_counter()
        assignment = assign_pillar(spec, scene.boxes)
        rows.append((len(points), "assignment", time.perf_counter() - start))

        score_map = (assignment.labels == 1).astype(float).reshape(spec.bins)
        target_map = np.where(np.isnan(assignment.targets), 0.0, assignment.targets).reshape(*spec.bins, 7)
        start = time.perf_counter()
        candidates = decode_map(score_map, target_map, spec, score_floor=0.5)
        nms(candidates, cfg.nms, cfg.nms_iou_kind)
        rows.append((len(points), "nms", time.perf_counter() - start))
        _log(f"benchmarked {len(points)} points")

    sink = io.StringIO()
    writer = csv.writer(sink)
    writer.writerow(("n_points", "stage", "seconds"))
    for row in rows:
        writer.writerow((row[0], row[1], f"{row[2]:.6f}"))
    if args.out:
        out = Path(args.out)
        _atomic_write_text(out, sink.getvalue())
        if not args.no_figures:
            save_bench_chart(rows, out.with_suffix(".png"))
        _log(f"benchmark written to {out}")
    else:
        sys.stdout.write(sink.getvalue())
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pillarkit",
        description="Pillar-based detection pipeline: synthetic scenes, target "
        "assignment, oracle roundtrips, evaluation, and benchmarks.",
    )
    parser.add_argument("--version", action="version", version=f"pillarkit {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write synthetic scenes plus a manifest")
    p.add_argument("--config", help="pipeline config JSON")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--count", type=int, default=1)
    p.add_argument("--seed", type=int, help="base seed (scene i uses seed + i)")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("assign", help="export target assignments for one scene")
    p.add_argument("--config")
    p.add_argument("--scene", required=True, help="path to a .plrd scene")
    p.add_argument("--paradigm", choices=("pillar", "anchor", "point", "all"))
    p.add_argument("--interp", choices=("nearest", "bilinear"), help="override config.interp")
    p.add_argument("--out", help="JSONL output path (default stdout)")
    p.set_defaults(func=cmd_assign)

    p = sub.add_parser("roundtrip", help="oracle encode/decode/NMS/eval on one scene")
    p.add_argument("--config")
    p.add_argument("--scene", required=True)
    p.add_argument("--scene-id", dest="scene_id", default="scene_0000")
    p.add_argument("--iou-kind", choices=("bev", "3d"))
    p.add_argument("--interp", choices=("nearest", "bilinear"), help="override config.interp")
    p.add_argument("--out", help="metrics JSON path (default stdout)")
    p.add_argument("--dets-out", help="also write the detections as JSONL")
    p.set_defaults(func=cmd_roundtrip)

    p = sub.add_parser("eval", help="evaluate a detections file against a manifest")
    p.add_argument("--config")
    p.add_argument("--dets", required=True, help="detections JSONL")
    p.add_argument("--manifest", required=True, help="manifest.json from generate")
    p.add_argument("--iou-kind", choices=("bev", "3d"), help="override config.eval.iou_kind")
    p.add_argument("--out", help="metrics JSON path; CSV and figures land beside it")
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", help="per-stage wall times across point counts")
    p.add_argument("--config")
    p.add_argument("--sizes", default="2000,10000,50000", help="comma-separated point counts")
    p.add_argument("--seed", type=int)
    p.add_argument("--interp", choices=("nearest", "bilinear"), help="override config.interp")
    p.add_argument("--out", help="CSV path; figure lands beside it")
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    try:
        return args.func(args)
    except (ConfigError, SceneFormatError, SceneGenerationError, ValueError) as exc:
        print(f"pillarkit {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"pillarkit {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE


def entry() -> None:
    raise SystemExit(main())
