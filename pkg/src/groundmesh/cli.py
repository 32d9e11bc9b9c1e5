"""Command-line entry point: ``groundmesh <command> ...``.

Exit codes: 0 success, 2 invalid input, 3 registration did not converge,
4 file I/O failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

EXIT_OK, EXIT_INVALID, EXIT_NOT_CONVERGED, EXIT_IO = 0, 2, 3, 4


def _dump(obj):
    print(json.dumps(obj, indent=2, sort_keys=True))


def cmd_scene_synth(a):
    from .io import write_depth, write_mask, write_ply, write_transform
    from .scene import SceneSpec, synth_scene

    spec = SceneSpec(shape=a.shape, object_diagonal=a.diag, partial=a.partial, noise_sigma=a.noise,
                     outlier_fraction=a.outliers, samples=a.samples, seed=a.seed)
    scene = synth_scene(spec, with_depth=a.depth)
    os.makedirs(a.out, exist_ok=True)
    write_ply(os.path.join(a.out, "source.ply"), scene.source_mesh, binary=not a.ascii)
    write_ply(os.path.join(a.out, "target.ply"), scene.target_cloud, binary=not a.ascii)
    write_transform(os.path.join(a.out, "gt_transform.json"), scene.gt_transform)
    if a.depth:
        write_depth(os.path.join(a.out, "depth.raw"), scene.depth, scene.intrinsics)
        write_mask(os.path.join(a.out, "mask.raw"), scene.mask)
    info = {"shape": a.shape, "seed": a.seed, "target_points": len(scene.target_cloud),
            "source_vertices": len(scene.source_mesh.vertices), "rotation_ambiguous": scene.rotation_ambiguous}
    with open(os.path.join(a.out, "scene.json"), "w") as f:
        json.dump(info, f, indent=2)
    _dump(info)
    return EXIT_OK


def cmd_register(a):
    from .geometry import PointCloud, TriangleMesh
    from .io import read_ply, write_transform
    from .registration import IcpConfig, RansacConfig, RegistrationParams, register_object

    source = read_ply(a.source)
    target = read_ply(a.target)
    if not isinstance(source, TriangleMesh):
        raise ValueError("--source must be a triangle mesh")
    if isinstance(target, TriangleMesh):
        target = PointCloud(target.vertices)
    params = RegistrationParams(seed=a.seed)
    ransac_cfg = icp_cfg = None
    if a.ransac_iters is not None or a.inlier_thresh is not None:
        base = RansacConfig()
        thresh = a.inlier_thresh
        if thresh is None:
            from .geometry import bbox_diagonal
            thresh = 1.5 * bbox_diagonal(target) / 30.0
        ransac_cfg = RansacConfig(max_iterations=a.ransac_iters or base.max_iterations,
                                  inlier_threshold=thresh, seed=a.seed)
    if a.icp_iters is not None:
        from .geometry import bbox_diagonal
        icp_cfg = IcpConfig(max_iterations=a.icp_iters,
                            max_correspondence_distance=1.5 * bbox_diagonal(target) / 30.0,
                            estimate_scale=params.refine_scale, cull_backfacing=True,
                            viewpoint=params.viewpoint)
    result = register_object(source, target, ransac_cfg, icp_cfg, params)
    write_transform(a.out, result.transform)
    _dump(result.summary())
    return EXIT_OK if result.converged else EXIT_NOT_CONVERGED


def cmd_decode(a):
    from .geometry import Aabb
    from .io import write_ply
    from .mc import marching_cubes
    from .scene import make_oracle
    from .sdf import HierarchicalConfig, dense_decode, hierarchical_decode

    if a.resolution < 1:
        raise ValueError("--resolution must be positive")
    oracle = make_oracle(a.shape)
    bounds = Aabb([-1.0, -1.0, -1.0], [1.0, 1.0, 1.0])
    if a.mode == "dense":
        grid, stats = dense_decode(oracle, a.resolution, bounds)
    else:
        cfg = HierarchicalConfig(coarse_resolution=a.coarse, band_halfwidth_voxels=a.band)
        grid, stats = hierarchical_decode(oracle, a.resolution, bounds, cfg)
    mesh = marching_cubes(grid)
    write_ply(a.out, mesh, binary=not a.ascii)
    info = stats.to_dict()
    info.update({"vertices": len(mesh.vertices), "faces": len(mesh.faces), "mode": a.mode,
                 "resolution": a.resolution})
    if a.stats:
        with open(a.stats, "w") as f:
            json.dump(info, f, indent=2)
    _dump(info)
    return EXIT_OK


def cmd_depth_align(a):
    from .depth import median_scale_align
    from .io import read_depth, read_mask, write_depth

    sensor, intr = read_depth(a.sensor)
    pred, _ = read_depth(a.pred)
    mask = read_mask(a.mask)
    s, metric = median_scale_align(sensor, pred, mask)
    write_depth(a.out, metric, intr)
    _dump({"scale": s})
    return EXIT_OK


def cmd_eval(a):
    from .geometry import TriangleMesh, apply_transform
    from .io import read_ply, read_transform
    from .metrics import MetricsConfig, evaluate

    def posed(geom, path):
        if not path:
            return geom
        T = read_transform(path)
        if isinstance(geom, TriangleMesh):
            return TriangleMesh(T.apply_points(geom.vertices), geom.faces)
        return apply_transform(geom, T)

    pred = posed(read_ply(a.pred), a.pred_transform)
    gt = posed(read_ply(a.gt), a.gt_transform)
    report = evaluate(pred, gt, MetricsConfig(fscore_threshold=a.tau, sample_count=a.samples, seed=a.seed))
    _dump(report.to_dict())
    return EXIT_OK


def cmd_bench(a):
    from .bench import bench_suite, default_suite
    from .registration import RegistrationParams

    if a.suite == "default":
        specs = default_suite(a.seed)
    else:
        specs = default_suite(a.seed, noise_fraction=0.0)
    if a.scenes is not None:
        specs = specs[:a.scenes]

    def progress(rec):
        status = rec.error or f"ADD {rec.add_pct:.2f}%  F {rec.metrics.fscore_pct:.1f}%"
        print(f"[{rec.index + 1}/{len(specs)}] {rec.spec.shape:<7} {status}", file=sys.stderr, flush=True)

    report = bench_suite(specs, a.out, RegistrationParams(seed=a.seed), repeats=a.repeats,
                         workers=a.workers, progress=None if a.quiet else progress)
    print(report.table())
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="groundmesh", description="Mesh registration and SDF decoding toolkit.")
    sub = p.add_subparsers(dest="command", required=True)

    scene = sub.add_parser("scene", help="synthetic scenes").add_subparsers(dest="scene_command", required=True)
    s = scene.add_parser("synth", help="write a synthetic single-view scene")
    s.add_argument("--shape", choices=["sphere", "box", "torus", "union"], required=True)
    s.add_argument("--diag", type=float, default=0.15, help="object bbox diagonal, meters")
    s.add_argument("--noise", type=float, default=0.0, help="Gaussian noise sigma, meters")
    s.add_argument("--outliers", type=float, default=0.0, help="fraction of points replaced by outliers")
    s.add_argument("--partial", action="store_true", help="keep only points facing the camera")
    s.add_argument("--samples", type=int, default=10000)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--depth", action="store_true", help="also write a depth raster and mask")
    s.add_argument("--ascii", action="store_true", help="write ASCII PLY")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_scene_synth)

    r = sub.add_parser("register", help="align a mesh to an observed cloud")
    r.add_argument("--source", required=True)
    r.add_argument("--target", required=True)
    r.add_argument("--ransac-iters", type=int)
    r.add_argument("--inlier-thresh", type=float)
    r.add_argument("--icp-iters", type=int)
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_register)

    d = sub.add_parser("decode", help="decode an analytic SDF into a mesh")
    d.add_argument("--shape", choices=["sphere", "box", "torus", "union"], required=True)
    d.add_argument("--resolution", type=int, default=128)
    d.add_argument("--mode", choices=["dense", "hier"], default="hier")
    d.add_argument("--coarse", type=int)
    d.add_argument("--band", type=float, default=1.5)
    d.add_argument("--ascii", action="store_true")
    d.add_argument("--out", required=True)
    d.add_argument("--stats")
    d.set_defaults(func=cmd_decode)

    depth = sub.add_parser("depth", help="depth rasters").add_subparsers(dest="depth_command", required=True)
    al = depth.add_parser("align", help="median-scale a predicted depth map to sensor depth")
    al.add_argument("--sensor", required=True)
    al.add_argument("--pred", required=True)
    al.add_argument("--mask", required=True)
    al.add_argument("--out", required=True)
    al.set_defaults(func=cmd_depth_align)

    e = sub.add_parser("eval", help="Chamfer distance and F-score between meshes")
    e.add_argument("--pred", required=True)
    e.add_argument("--gt", required=True)
    e.add_argument("--gt-transform")
    e.add_argument("--pred-transform", help="pose applied to --pred first")
    e.add_argument("--tau", type=float, default=0.02)
    e.add_argument("--samples", type=int, default=10000)
    e.add_argument("--seed", type=int, default=0)
    e.set_defaults(func=cmd_eval)

    b = sub.add_parser("bench", help="run the synthetic registration suite")
    b.add_argument("--suite", choices=["default", "clean"], default="default")
    b.add_argument("--seed", type=int, default=42)
    b.add_argument("--scenes", type=int, help="run only the first N scenes")
    b.add_argument("--repeats", type=int, default=1)
    b.add_argument("--workers", type=int, default=1)
    b.add_argument("--quiet", action="store_true")
    b.add_argument("--out", required=True)
    b.set_defaults(func=cmd_bench)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_IO
    except (ValueError, KeyError, TypeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
