"""Depth rasters: median scale alignment of predicted depth and back-projection."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import PointCloud


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if self.width < 1 or self.height < 1:
            raise ValueError("image size must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point must lie inside the image")

    def to_dict(self):
        return {"width": self.width, "height": self.height,
                "fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy}


@dataclass(frozen=True, eq=False)
class DepthImage:
    """Row-major metric depth; 0 marks an invalid pixel."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2:
            raise ValueError("depth raster must be 2D (height, width)")
        if not np.all(np.isfinite(v)) or np.any(v < 0):
            raise ValueError("depth values must be finite and non-negative")
        object.__setattr__(self, "values", v)

    @property
    def height(self):
        return self.values.shape[0]

    @property
    def width(self):
        return self.values.shape[1]

    @property
    def valid(self):
        return self.values > 0


@dataclass(frozen=True, eq=False)
class BinaryMask:
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values).astype(bool)
        if v.ndim != 2:
            raise ValueError("mask must be 2D (height, width)")
        object.__setattr__(self, "values", v)

    @property
    def shape(self):
        return self.values.shape


def _check_shapes(*rasters):
    shapes = {r.values.shape for r in rasters}
    if len(shapes) != 1:
        raise ValueError(f"raster dimensions differ: {sorted(shapes)}")


def lower_median(x):
    """Lower-middle order statistic (never averages two samples)."""
    x = np.sort(np.asarray(x).reshape(-1))
    return x[(len(x) - 1) // 2]


def median_scale_align(d_sensor, d_pred, mask):
    """Scale predicted depth so its in-mask median matches the sensor's.

    Medians run over pixels inside ``mask`` that are valid in both rasters.
    Every valid predicted pixel is scaled, including ones the sensor missed.
    """
    _check_shapes(d_sensor, d_pred, mask)
    joint = mask.values & d_sensor.valid & d_pred.valid
    if not joint.any():
        raise ValueError("no overlap for scale alignment")
    med_pred = lower_median(d_pred.values[joint])
    if not med_pred > 0:
        raise ValueError("degenerate prediction")
    s = lower_median(d_sensor.values[joint]) / med_pred
    return float(s), DepthImage(s * d_pred.values)


def masked_crop(depth, mask):
    _check_shapes(depth, mask)
    return DepthImage(np.where(mask.values, depth.values, 0.0))


def backproject(depth, intr, mask=None):
    """Pinhole back-projection of valid in-mask pixels, row-major order."""
    if (depth.height, depth.width) != (intr.height, intr.width):
        raise ValueError("depth raster does not match intrinsics")
    sel = depth.valid if mask is None else depth.valid & mask.values
    if mask is not None:
        _check_shapes(depth, mask)
    if not sel.any():
        raise ValueError("no valid pixel to back-project")
    v, u = np.nonzero(sel)
    d = depth.values[v, u]
    pts = np.stack([d * (u - intr.cx) / intr.fx, d * (v - intr.cy) / intr.fy, d], axis=1)
    return PointCloud(pts)


def project(points, intr):
    """Pixel coordinates (u, v) of camera-frame points."""
    p = np.asarray(points, dtype=np.float64)
    return intr.fx * p[:, 0] / p[:, 2] + intr.cx, intr.fy * p[:, 1] / p[:, 2] + intr.cy


def render_points(points, intr):
    """Z-buffer a camera-frame cloud into a depth raster and its coverage mask."""
    u, v = project(points, intr)
    ui = np.round(u).astype(np.int64)
    vi = np.round(v).astype(np.int64)
    z = np.asarray(points)[:, 2]
    ok = (ui >= 0) & (ui < intr.width) & (vi >= 0) & (vi < intr.height) & (z > 0)
    depth = np.full((intr.height, intr.width), np.inf)
    np.minimum.at(depth, (vi[ok], ui[ok]), z[ok])
    mask = np.isfinite(depth)
    depth[~mask] = 0.0
    return DepthImage(depth), BinaryMask(mask)
