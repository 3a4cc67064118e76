import json
import math

import numpy as np
import pytest

from pillarkit.cli import main
from pillarkit.geom import Box7
from pillarkit.synth import Scene, sidecar_path, write_scene


def run(argv, capsys):
    code = main(argv)
    captured = capsys.readouterr()
    return code, captured.out, captured.err


def small_config(tmp_path, **scene_overrides):
    """A compact config so CLI tests stay fast: 64x64 grid, +-16 m range."""
    scene = {
        "seed": 0,
        "box_count": [3, 6],
        "horizontal_range": [-16.0, 16.0],
        "clutter_points": 800,
        "points_per_box": [40, 80],
    }
    scene.update(scene_overrides)
    config = {
        "views": {
            "bev": {
                "kind": "bev",
                "axis0_range": [-16.0, 16.0],
                "axis1_range": [-16.0, 16.0],
                "bins": [64, 64],
                "depth_range": [-3.0, 3.0],
            }
        },
        "scene": scene,
    }
    path = tmp_path / "config.json"
    path.write_text(json.dumps(config))
    return str(path)


@pytest.fixture
def scene_dir(tmp_path, capsys):
    cfg = small_config(tmp_path)
    out = tmp_path / "scenes"
    code = main(["generate", "--config", cfg, "--out-dir", str(out), "--count", "2"])
    capsys.readouterr()
    assert code == 0
    return out, cfg


class TestGenerate:
    def test_writes_scenes_and_manifest(self, scene_dir):
        out, _ = scene_dir
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["count"] == 2
        assert len(manifest["scenes"]) == 2
        for entry in manifest["scenes"]:
            assert (out / entry["points"]).exists()
            assert (out / entry["labels"]).exists()

    def test_rerun_is_byte_identical(self, tmp_path, capsys):
        cfg = small_config(tmp_path)
        a = tmp_path / "a"
        b = tmp_path / "b"
        assert main(["generate", "--config", cfg, "--out-dir", str(a), "--count", "2"]) == 0
        assert main(["generate", "--config", cfg, "--out-dir", str(b), "--count", "2"]) == 0
        capsys.readouterr()
        for name in ("manifest.json", "scene_0000.plrd", "scene_0000.json", "scene_0001.plrd"):
            assert (a / name).read_bytes() == (b / name).read_bytes()

    def test_seed_offsets(self, tmp_path, capsys):
        cfg = small_config(tmp_path)
        out = tmp_path / "seeded"
        assert main(["generate", "--config", cfg, "--out-dir", str(out), "--count", "2", "--seed", "7"]) == 0
        capsys.readouterr()
        manifest = json.loads((out / "manifest.json").read_text())
        assert [e["seed"] for e in manifest["scenes"]] == [7, 8]

    def test_thread_env_var(self, tmp_path, capsys, monkeypatch):
        monkeypatch.setenv("PILLARKIT_THREADS", "2")
        cfg = small_config(tmp_path)
        out = tmp_path / "threaded"
        assert main(["generate", "--config", cfg, "--out-dir", str(out), "--count", "3"]) == 0
        capsys.readouterr()
        single = tmp_path / "single"
        monkeypatch.setenv("PILLARKIT_THREADS", "1")
        assert main(["generate", "--config", cfg, "--out-dir", str(single), "--count", "3"]) == 0
        capsys.readouterr()
        assert (out / "scene_0002.plrd").read_bytes() == (single / "scene_0002.plrd").read_bytes()


class TestAssign:
    def test_pillar_assignment_jsonl(self, scene_dir, capsys, tmp_path):
        out, cfg = scene_dir
        dest = tmp_path / "assign.jsonl"
        code, _, err = run(
            ["assign", "--config", cfg, "--scene", str(out / "scene_0000.plrd"),
             "--paradigm", "pillar", "--out", str(dest)],
            capsys,
        )
        assert code == 0
        lines = [json.loads(line) for line in dest.read_text().splitlines()]
        summary = lines[-1]
        assert summary["summary"] is True
        assert summary["counts"]["positive"] == len(lines) - 1 > 0
        assert "positive_fraction" in err

    def test_all_paradigms_comparison(self, scene_dir, capsys):
        out, cfg = scene_dir
        code, stdout, err = run(
            ["assign", "--config", cfg, "--scene", str(out / "scene_0000.plrd"), "--paradigm", "all"],
            capsys,
        )
        assert code == 0
        assert "anchor vs pillar positive_fraction" in err
        kinds = {json.loads(line)["unit_kind"] for line in stdout.splitlines()}
        assert kinds == {"pillar", "anchor", "point"}

    def test_empty_scene_zero_fraction(self, tmp_path, capsys):
        cfg = small_config(tmp_path, box_count=[0, 0])
        out = tmp_path / "empty"
        assert main(["generate", "--config", cfg, "--out-dir", str(out)]) == 0
        capsys.readouterr()
        code, stdout, _ = run(
            ["assign", "--config", cfg, "--scene", str(out / "scene_0000.plrd"), "--paradigm", "pillar"],
            capsys,
        )
        assert code == 0
        summary = json.loads(stdout.splitlines()[-1])
        assert summary["positive_fraction"] == 0.0

    def test_unreadable_scene_exits_2(self, tmp_path, capsys):
        code, _, err = run(["assign", "--scene", str(tmp_path / "missing.plrd")], capsys)
        assert code == 2
        assert err


class TestRoundtrip:
    def test_oracle_scene_passes(self, scene_dir, capsys, tmp_path):
        out, cfg = scene_dir
        metrics = tmp_path / "metrics.json"
        code, _, err = run(
            ["roundtrip", "--config", cfg, "--scene", str(out / "scene_0000.plrd"),
             "--out", str(metrics)],
            capsys,
        )
        assert code == 0
        payload = json.loads(metrics.read_text())
        assert payload["results"][0]["overall_ap"] == 1.0
        assert "roundtrip AP 1.0" in err

    def test_detections_export(self, scene_dir, capsys, tmp_path):
        out, cfg = scene_dir
        dets = tmp_path / "dets.jsonl"
        code, _, _ = run(
            ["roundtrip", "--config", cfg, "--scene", str(out / "scene_0000.plrd"),
             "--dets-out", str(dets)],
            capsys,
        )
        assert code == 0
        records = [json.loads(line) for line in dets.read_text().splitlines()]
        assert records and all(len(r["box"]) == 7 for r in records)

    def test_corrupted_scene_fails_with_exit_1(self, scene_dir, capsys):
        out, cfg = scene_dir
        scene_path = out / "scene_0000.plrd"
        sidecar = sidecar_path(scene_path)
        meta = json.loads(sidecar.read_text())
        assert len(meta["boxes"]) >= 2
        # duplicate a box record: NMS suppresses the twin decode, recall drops
        meta["boxes"][1]["box"] = list(meta["boxes"][0]["box"])
        sidecar.write_text(json.dumps(meta))
        code, stdout, err = run(
            ["roundtrip", "--config", cfg, "--scene", str(scene_path)], capsys
        )
        assert code == 1
        assert "!= 1.0" in err
        payload = json.loads(stdout)
        assert payload["results"][0]["overall_ap"] < 1.0

    def test_interp_override_is_echoed(self, scene_dir, capsys):
        out, cfg = scene_dir
        code, stdout, _ = run(
            ["roundtrip", "--config", cfg, "--scene", str(out / "scene_0000.plrd"),
             "--interp", "nearest"],
            capsys,
        )
        assert code == 0
        assert json.loads(stdout)["interp"] == "nearest"

    def test_empty_scene_warns_exit_0(self, tmp_path, capsys):
        cfg = small_config(tmp_path, box_count=[0, 0])
        out = tmp_path / "empty"
        assert main(["generate", "--config", cfg, "--out-dir", str(out)]) == 0
        capsys.readouterr()
        code, stdout, err = run(
            ["roundtrip", "--config", cfg, "--scene", str(out / "scene_0000.plrd")], capsys
        )
        assert code == 0
        assert "no boxes" in err
        assert json.loads(stdout)["results"] == []


class TestEval:
    def test_oracle_detections_score_one(self, scene_dir, capsys, tmp_path):
        out, cfg = scene_dir
        dets = tmp_path / "dets.jsonl"
        manifest = json.loads((out / "manifest.json").read_text())
        with open(dets, "w") as fh:
            for entry in manifest["scenes"]:
                code = main(
                    ["roundtrip", "--config", cfg, "--scene", str(out / entry["points"]),
                     "--scene-id", entry["id"], "--dets-out", str(tmp_path / "part.jsonl")]
                )
                assert code == 0
                fh.write((tmp_path / "part.jsonl").read_text())
        capsys.readouterr()
        metrics = tmp_path / "metrics.json"
        code, _, _ = run(
            ["eval", "--config", cfg, "--dets", str(dets),
             "--manifest", str(out / "manifest.json"), "--out", str(metrics)],
            capsys,
        )
        assert code == 0
        payload = json.loads(metrics.read_text())
        vehicle = payload["results"][0]
        assert vehicle["class"] == "vehicle"
        assert vehicle["overall_ap"] == 1.0
        assert (tmp_path / "metrics.csv").exists()
        assert (tmp_path / "metrics_pr.png").exists()
        assert (tmp_path / "metrics_bins.png").exists()

    def test_empty_detections_zero_ap(self, scene_dir, capsys, tmp_path):
        out, cfg = scene_dir
        dets = tmp_path / "empty.jsonl"
        dets.write_text("")
        code, stdout, _ = run(
            ["eval", "--config", cfg, "--dets", str(dets), "--manifest", str(out / "manifest.json")],
            capsys,
        )
        assert code == 0
        payload = json.loads(stdout)
        assert payload["results"][0]["overall_ap"] == 0.0

    def test_hand_computed_micro_case(self, tmp_path, capsys):
        gt = [Box7(2.0, 0.0, 0.0, 4.0, 2.0, 1.5, 0.0), Box7(-6.0, 3.0, 0.0, 4.0, 2.0, 1.5, 0.9)]
        points = np.vstack([
            np.tile((2.0, 0.0, 0.0), (10, 1)),
            np.tile((-6.0, 3.0, 0.0), (10, 1)),
        ])
        scene = Scene(points, gt, np.array([0, 0]))
        scene_path = tmp_path / "scene_0000.plrd"
        write_scene(scene, scene_path)
        manifest = {
            "format": "pillarkit-manifest",
            "version": 1,
            "count": 1,
            "scenes": [{"id": "scene_0000", "points": "scene_0000.plrd",
                        "labels": "scene_0000.json", "seed": 0}],
        }
        (tmp_path / "manifest.json").write_text(json.dumps(manifest))
        dets = tmp_path / "dets.jsonl"
        far = Box7(14.0, -14.0, 0.0, 4.0, 2.0, 1.5, 0.0)
        with open(dets, "w") as fh:
            for box, score in ((gt[0], 0.9), (far, 0.8), (gt[1], 0.7)):
                fh.write(json.dumps({
                    "scene_id": "scene_0000", "class_id": 0, "score": score,
                    "box": [float(v) for v in box.as_array()],
                }) + "\n")
        code, stdout, _ = run(
            ["eval", "--dets", str(dets), "--manifest", str(tmp_path / "manifest.json")],
            capsys,
        )
        assert code == 0
        payload = json.loads(stdout)
        assert payload["results"][0]["overall_ap"] == pytest.approx(5.0 / 6.0, abs=1e-12)

    def test_iou_kind_override(self, scene_dir, capsys, tmp_path):
        out, cfg = scene_dir
        dets = tmp_path / "none.jsonl"
        dets.write_text("")
        code, stdout, _ = run(
            ["eval", "--config", cfg, "--dets", str(dets),
             "--manifest", str(out / "manifest.json"), "--iou-kind", "bev"],
            capsys,
        )
        assert code == 0
        assert json.loads(stdout)["iou_kind"] == "bev"

    def test_unknown_scene_id_exits_2(self, scene_dir, capsys, tmp_path):
        out, cfg = scene_dir
        dets = tmp_path / "dets.jsonl"
        dets.write_text(json.dumps({
            "scene_id": "nope", "class_id": 0, "score": 0.5,
            "box": [0, 0, 0, 1, 1, 1, 0],
        }) + "\n")
        code, _, err = run(
            ["eval", "--config", cfg, "--dets", str(dets), "--manifest", str(out / "manifest.json")],
            capsys,
        )
        assert code == 2
        assert "unknown scene id" in err

    def test_schema_violation_reports_line(self, scene_dir, capsys, tmp_path):
        out, cfg = scene_dir
        dets = tmp_path / "dets.jsonl"
        dets.write_text('{"scene_id": "scene_0000"}\n')
        code, _, err = run(
            ["eval", "--config", cfg, "--dets", str(dets), "--manifest", str(out / "manifest.json")],
            capsys,
        )
        assert code == 2
        assert "line 1" in err


class TestBench:
    def test_csv_schema_and_stages(self, tmp_path, capsys):
        cfg = small_config(tmp_path)
        out = tmp_path / "bench.csv"
        code, _, _ = run(
            ["bench", "--config", cfg, "--sizes", "1000,40000", "--out", str(out)], capsys
        )
        assert code == 0
        lines = out.read_text().splitlines()
        assert lines[0] == "n_points,stage,seconds"
        rows = [line.split(",") for line in lines[1:]]
        stages_per_size = {}
        for n_points, stage, seconds in rows:
            assert float(seconds) >= 0.0
            stages_per_size.setdefault(n_points, set()).add(stage)
        expected = {"build_grid", "aggregate", "gather_nearest", "gather_bilinear", "assignment", "nms"}
        assert len(stages_per_size) == 2
        for stages in stages_per_size.values():
            assert stages == expected
        assert (tmp_path / "bench.png").exists()

    def test_total_time_monotone_with_spread_sizes(self, tmp_path, capsys):
        cfg = small_config(tmp_path)
        out = tmp_path / "bench.csv"
        code, _, _ = run(
            ["bench", "--config", cfg, "--sizes", "1000,200000", "--out", str(out), "--no-figures"],
            capsys,
        )
        assert code == 0
        totals = {}
        for line in out.read_text().splitlines()[1:]:
            n_points, _, seconds = line.split(",")
            totals[int(n_points)] = totals.get(int(n_points), 0.0) + float(seconds)
        sizes = sorted(totals)
        assert totals[sizes[0]] <= totals[sizes[1]]


class TestUsage:
    def test_no_command_exits_2(self, capsys):
        assert main([]) == 2
        capsys.readouterr()

    def test_unknown_config_key_exits_2(self, tmp_path, capsys):
        bad = tmp_path / "bad.json"
        bad.write_text('{"nope": 1}')
        code, _, err = run(["generate", "--config", str(bad), "--out-dir", str(tmp_path / "x")], capsys)
        assert code == 2
        assert "unknown key" in err
