"""Compare the compiled kernels with the numpy fallback on typical workloads.

    python benchmarks/bench_kernels.py [--repeat 3]
"""

import argparse
import time

import numpy as np

from groundmesh import _backend
from groundmesh.features import compute_fpfh, compute_spfh, mutual_match
from groundmesh.geometry import Aabb, PointCloud, estimate_normals
from groundmesh.mc import marching_cubes
from groundmesh.sdf import dense_decode, make_torus


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def workloads():
    rng = np.random.default_rng(0)
    pts = rng.normal(size=(4000, 3))
    pts /= np.linalg.norm(pts, axis=1, keepdims=True)
    cloud = estimate_normals(PointCloud(pts), 20, viewpoint=(0, 0, 0))
    radius = 0.15
    fa = compute_fpfh(cloud, radius)
    fb = compute_fpfh(cloud.select(rng.permutation(len(cloud))), radius)
    grid, _ = dense_decode(make_torus((0, 0, 0), 0.5, 0.2), 96, Aabb([-1, -1, -1], [1, 1, 1]))
    return {
        "spfh (4k pts)": lambda b: compute_spfh(cloud, radius, backend=b),
        "fpfh (4k pts)": lambda b: compute_fpfh(cloud, radius, backend=b),
        "mutual match (4k x 4k)": lambda b: mutual_match(fa, fb, backend=b),
        "marching cubes (96^3)": lambda b: marching_cubes(grid, backend=b),
    }


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    if not _backend.compiled_available():
        print("compiled kernels are not built; only the numpy fallback is available")
    print(f"{'workload':<26}{'cython s':>10}{'python s':>10}{'speedup':>9}")
    for name, fn in workloads().items():
        tp, _ = best_of(lambda: fn("python"), args.repeat)
        if not _backend.compiled_available():
            print(f"{name:<26}{'-':>10}{tp:>10.3f}{'-':>9}")
            continue
        tc, _ = best_of(lambda: fn("cython"), args.repeat)
        print(f"{name:<26}{tc:>10.3f}{tp:>10.3f}{tp / tc:>8.1f}x")


if __name__ == "__main__":
    main()
