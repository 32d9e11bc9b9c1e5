"""Synthetic single-view scenes with known object pose."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .depth import CameraIntrinsics, render_points
from .geometry import (
    Aabb,
    PointCloud,
    RigidScaleTransform,
    TriangleMesh,
    bbox_diagonal,
    random_rotation,
)
from .mc import marching_cubes
from .metrics import sample_surface
from .sdf import dense_decode, make_box, make_sphere, make_torus, make_union

SHAPES = ("sphere", "box", "torus", "union")
# shapes whose rotation cannot be recovered from geometry alone
ROTATION_AMBIGUOUS = {"sphere", "box", "torus"}


def make_oracle(shape, params=None):
    """Analytic oracle for a named shape; ``params`` overrides the defaults."""
    p = dict(params or {})
    if shape == "sphere":
        return make_sphere(p.get("center", (0, 0, 0)), p.get("radius", 0.5))
    if shape == "box":
        return make_box(p.get("center", (0, 0, 0)), p.get("half_extents", (0.5, 0.32, 0.2)))
    if shape == "torus":
        return make_torus(p.get("center", (0, 0, 0)), p.get("major", 0.45), p.get("minor", 0.18))
    if shape == "union":
        box = make_box(p.get("box_center", (-0.15, -0.05, 0.0)), p.get("half_extents", (0.35, 0.25, 0.18)))
        sph = make_sphere(p.get("sphere_center", (0.3, 0.2, 0.15)), p.get("radius", 0.28))
        return make_union(box, sph)
    raise ValueError(f"unknown shape {shape!r}; expected one of {SHAPES}")


@dataclass(frozen=True)
class SceneSpec:
    shape: str = "box"
    params: dict = field(default_factory=dict)
    object_diagonal: float = 0.15
    pose: RigidScaleTransform | None = None
    view_direction: tuple | None = None
    partial: bool = True
    noise_sigma: float = 0.0
    outlier_fraction: float = 0.0
    samples: int = 10000
    resolution: int = 128
    seed: int = 0

    def __post_init__(self):
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be non-negative")
        if not 0 <= self.outlier_fraction < 1:
            raise ValueError("outlier_fraction must lie in [0, 1)")
        if not self.object_diagonal > 0:
            raise ValueError("object_diagonal must be positive")


@dataclass(frozen=True, eq=False)
class Scene:
    """Canonical mesh (unit bounding-box diagonal) and its posed, observed cloud."""

    source_mesh: TriangleMesh
    target_cloud: PointCloud
    gt_transform: RigidScaleTransform
    spec: SceneSpec
    clean_mask: np.ndarray
    depth: object = None
    intrinsics: CameraIntrinsics | None = None
    mask: object = None

    @property
    def rotation_ambiguous(self):
        return self.spec.shape in ROTATION_AMBIGUOUS


def canonical_mesh(shape, params=None, resolution=128):
    """Marching-cubes mesh of a shape, centred and scaled to unit diagonal."""
    oracle = make_oracle(shape, params)
    grid, _ = dense_decode(oracle, resolution, Aabb([-1, -1, -1], [1, 1, 1]))
    mesh = marching_cubes(grid)
    v = mesh.vertices
    center = 0.5 * (v.min(axis=0) + v.max(axis=0))
    return TriangleMesh((v - center) / bbox_diagonal(v), mesh.faces)


def default_intrinsics():
    return CameraIntrinsics(fx=600.0, fy=600.0, cx=319.5, cy=239.5, width=640, height=480)


def synth_scene(spec, with_depth=False):
    """Build a scene deterministically from ``spec``.

    The camera sits at the origin looking down +z. Points facing away from
    the viewing direction are culled to imitate a single view.
    """
    rng = np.random.default_rng(spec.seed)
    mesh = canonical_mesh(spec.shape, spec.params, spec.resolution)
    if spec.pose is not None:
        gt = spec.pose
    else:
        t = np.array([rng.uniform(-0.08, 0.08), rng.uniform(-0.06, 0.06), rng.uniform(0.55, 0.8)])
        gt = RigidScaleTransform(spec.object_diagonal, random_rotation(rng), t)
    samples = sample_surface(mesh, spec.samples, int(rng.integers(2 ** 63)))
    pts = gt.apply_points(samples.points)
    nrm = samples.normals @ gt.rotation.T
    if spec.partial:
        if spec.view_direction is not None:
            view = np.asarray(spec.view_direction, dtype=np.float64)
            view = view / np.linalg.norm(view)
        else:
            view = gt.translation / np.linalg.norm(gt.translation)
        keep = nrm @ (-view) > 0
        if not keep.any():
            raise ValueError("degenerate view")
        pts = pts[keep]
    pts = pts.copy()
    if spec.noise_sigma > 0:
        pts += rng.normal(scale=spec.noise_sigma, size=pts.shape)
    clean = np.ones(len(pts), dtype=bool)
    n_out = int(round(spec.outlier_fraction * len(pts)))
    if n_out:
        lo, hi = pts.min(axis=0), pts.max(axis=0)
        mid, half = 0.5 * (lo + hi), 0.75 * (hi - lo)
        which = np.sort(rng.choice(len(pts), n_out, replace=False))
        pts[which] = mid + rng.uniform(-1.0, 1.0, size=(n_out, 3)) * half
        clean[which] = False
    cloud = PointCloud(pts)
    depth = intr = dmask = None
    if with_depth:
        intr = default_intrinsics()
        depth, dmask = render_points(pts, intr)
    return Scene(mesh, cloud, gt, spec, clean, depth, intr, dmask)


def add_error(mesh_points, est, gt):
    """Mean displacement of model points under the estimated vs true pose."""
    d = est.apply_points(mesh_points) - gt.apply_points(mesh_points)
    return float(np.mean(np.linalg.norm(d, axis=1)))


def adds_error(mesh_points, est, gt):
    """Symmetric ADD: mean closest-point distance between the two posed models."""
    from scipy.spatial import cKDTree

    a = est.apply_points(mesh_points)
    b = gt.apply_points(mesh_points)
    d, _ = cKDTree(b).query(a)
    return float(np.mean(d))
