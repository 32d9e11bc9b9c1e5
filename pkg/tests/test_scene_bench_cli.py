import json
import subprocess
import sys

import numpy as np
import pytest

from groundmesh.bench import (
    CSV_COLUMNS,
    STAGES,
    TIMING_COLUMNS,
    StageTiming,
    bench_suite,
    default_suite,
    pose_error,
    read_csv_rows,
    run_pipeline,
)
from groundmesh.cli import main
from groundmesh.geometry import RigidScaleTransform
from groundmesh.metrics import sample_surface
from groundmesh.scene import SceneSpec, synth_scene


DEGENERATE = SceneSpec(shape="sphere", samples=1, resolution=16, seed=0)


def test_sphere_culling_keeps_half():
    spec = SceneSpec(shape="sphere", samples=20000, seed=4)
    scene = synth_scene(spec)
    frac = len(scene.target_cloud) / spec.samples
    assert abs(frac - 0.5) <= 0.05


def test_scene_deterministic():
    spec = SceneSpec(shape="union", noise_sigma=0.001, outlier_fraction=0.1, seed=9)
    a, b = synth_scene(spec), synth_scene(spec)
    assert np.array_equal(a.target_cloud.points, b.target_cloud.points)
    assert np.array_equal(a.gt_transform.rotation, b.gt_transform.rotation)
    assert a.clean_mask.sum() == len(a.clean_mask) - round(0.1 * len(a.clean_mask))


def test_clean_full_view_is_exact_transform():
    pose = RigidScaleTransform(0.15, np.eye(3), np.array([0.0, 0.0, 0.6]))
    spec = SceneSpec(shape="box", pose=pose, partial=False, samples=500, seed=3)
    scene = synth_scene(spec)
    # fixed poses draw nothing before the sampling seed
    rng = np.random.default_rng(3)
    seed = int(rng.integers(2 ** 63))
    samples = sample_surface(scene.source_mesh, 500, seed)
    assert np.array_equal(scene.target_cloud.points, pose.apply_points(samples.points))


def test_spec_validation():
    with pytest.raises(ValueError):
        SceneSpec(noise_sigma=-1)
    with pytest.raises(ValueError):
        SceneSpec(outlier_fraction=1.0)
    with pytest.raises(ValueError, match="degenerate view"):
        # seed 0 puts the only sample on the far side
        synth_scene(DEGENERATE)


def test_stage_timing_shares():
    t = StageTiming.from_seconds({"normals": 0.01, "fpfh": 0.2, "icp": 0.05})
    assert set(t.times_ms) == set(STAGES)
    assert abs(sum(t.shares_pct.values()) - 100.0) <= 0.1
    assert t.times_ms["fpfh"] == pytest.approx(200.0)
    z = StageTiming.from_seconds({})
    assert abs(sum(z.shares_pct.values()) - 100.0) <= 0.1


@pytest.fixture(scope="module")
def clean_union_run():
    scene = synth_scene(SceneSpec(shape="union", seed=11))
    return scene, run_pipeline(scene)


def test_run_pipeline_clean(clean_union_run):
    scene, (result, metrics, timing) = clean_union_run
    assert metrics.fscore_pct == 100.0
    assert pose_error(scene, result.transform) < 0.02 * scene.spec.object_diagonal
    assert abs(sum(timing.shares_pct.values()) - 100.0) <= 0.1
    assert all(timing.times_ms[s] >= 0 for s in STAGES)


def test_default_suite_shape():
    specs = default_suite(42)
    assert len(specs) == 25
    assert [s.shape for s in specs[:4]] == ["sphere", "box", "torus", "union"]
    assert all(s.noise_sigma == pytest.approx(0.005 * 0.15) for s in specs)
    assert default_suite(42) == specs


def strip_timing(rows):
    return [{k: v for k, v in r.items() if k not in TIMING_COLUMNS} for r in rows]


def test_bench_deterministic_and_recomputable(tmp_path):
    specs = default_suite(42, count=2)
    r1 = bench_suite(specs, tmp_path / "a")
    r2 = bench_suite(specs, tmp_path / "b", workers=2)
    rows1, rows2 = read_csv_rows(tmp_path / "a/results.csv"), read_csv_rows(tmp_path / "b/results.csv")
    assert list(rows1[0]) == CSV_COLUMNS
    assert strip_timing(rows1) == strip_timing(rows2)
    for name in ("scene_000_sphere_registered.ply", "scene_001_box_transform.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    summary = json.loads((tmp_path / "a/summary.json").read_text())
    for key in ("time_ms", "chamfer_mm", "fscore_pct", "add_pct"):
        col = np.array([float(r[key]) for r in rows1 if not r["error"]])
        assert abs(summary[key][0] - col.mean()) <= 1e-9
        assert abs(summary[key][1] - col.std()) <= 1e-9
    assert summary["success_rate"] == np.mean([int(r["success"]) for r in rows1])
    assert "±" in (tmp_path / "a/report.txt").read_text()
    assert r1.success_rate == r2.success_rate


def test_bench_records_failures():
    rep = bench_suite([DEGENERATE])
    assert len(rep.failures) == 1 and "degenerate view" in rep.failures[0].error
    with pytest.raises(ValueError):
        bench_suite([])


# --- CLI ----------------------------------------------------------------------

@pytest.fixture(scope="module")
def scene_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("scene")
    rc = main(["scene", "synth", "--shape", "union", "--diag", "0.15", "--noise", "0.00075",
               "--partial", "--seed", "5", "--depth", "--out", str(out)])
    assert rc == 0
    return out


def test_cli_register_and_eval(scene_dir, capsys):
    out = scene_dir / "est.json"
    rc = main(["register", "--source", str(scene_dir / "source.ply"), "--target", str(scene_dir / "target.ply"),
               "--seed", "0", "--out", str(out)])
    assert rc in (0, 3)
    assert len(json.loads(out.read_text())["rotation"]) == 9
    capsys.readouterr()
    rc = main(["eval", "--pred", str(scene_dir / "source.ply"), "--pred-transform", str(out),
               "--gt", str(scene_dir / "source.ply"), "--gt-transform", str(scene_dir / "gt_transform.json"),
               "--tau", "0.02", "--samples", "5000", "--seed", "1"])
    assert rc == 0
    report = json.loads(capsys.readouterr().out)
    assert report["fscore_pct"] == 100.0


def test_cli_not_converged_exit(scene_dir):
    rc = main(["register", "--source", str(scene_dir / "source.ply"), "--target", str(scene_dir / "target.ply"),
               "--icp-iters", "1", "--out", str(scene_dir / "short.json")])
    assert rc == 3


def test_cli_decode(tmp_path, capsys):
    rc = main(["decode", "--shape", "torus", "--resolution", "64", "--mode", "hier", "--out",
               str(tmp_path / "t.ply"), "--stats", str(tmp_path / "s.json")])
    assert rc == 0
    stats = json.loads((tmp_path / "s.json").read_text())
    assert stats["reduction"] > 0.5 and stats["faces"] > 0
    assert main(["decode", "--shape", "torus", "--resolution", "64", "--coarse", "48",
                 "--out", str(tmp_path / "x.ply")]) == 2


def test_cli_depth_align(scene_dir, tmp_path, capsys):
    from groundmesh.depth import DepthImage
    from groundmesh.io import read_depth, write_depth

    sensor, intr = read_depth(scene_dir / "depth.raw")
    write_depth(tmp_path / "pred.raw", DepthImage(sensor.values * 4.0), intr)
    capsys.readouterr()
    rc = main(["depth", "align", "--sensor", str(scene_dir / "depth.raw"), "--pred", str(tmp_path / "pred.raw"),
               "--mask", str(scene_dir / "mask.raw"), "--out", str(tmp_path / "metric.raw")])
    assert rc == 0
    assert json.loads(capsys.readouterr().out)["scale"] == 0.25
    metric, _ = read_depth(tmp_path / "metric.raw")
    assert np.array_equal(metric.values, sensor.values)


def test_cli_exit_codes(scene_dir, tmp_path):
    missing = str(tmp_path / "nope.ply")
    assert main(["register", "--source", missing, "--target", missing, "--out", str(tmp_path / "t.json")]) == 4
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"scale": 1, "rotation": [1, 0, 0, 0, 1, 0, 0, 0, -1], "translation": [0, 0, 0]}))
    src = str(scene_dir / "source.ply")
    assert main(["eval", "--pred", src, "--gt", src, "--gt-transform", str(bad)]) == 2
    # a cloud where a mesh is required
    assert main(["register", "--source", str(scene_dir / "target.ply"), "--target", str(scene_dir / "target.ply"),
                 "--out", str(tmp_path / "t.json")]) == 2
    with pytest.raises(SystemExit) as e:
        main(["scene", "synth", "--shape", "cone", "--out", str(tmp_path)])
    assert e.value.code == 2


def test_cli_bench_subprocess(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "groundmesh.cli", "bench", "--suite", "default", "--scenes", "1",
                           "--quiet", "--out", str(tmp_path)], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert "F-score" in proc.stdout
    assert (tmp_path / "results.csv").exists()
