"""Depth-map rendering and the surveyed loss/cost formulations.

These are the numeric operations the learned calibrators optimize, kept
standalone so they can be evaluated and tested without any network: sparse
depth rendering, photometric and point-cloud distance losses, smooth-L1
quaternion regression loss, the weighted loss combination, and the local
correlation cost volume.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import Extrinsic, Intrinsics, canonicalize_quaternion, project_points

__all__ = [
    "DepthMap",
    "CostVolume",
    "render_depth_map",
    "photometric_loss",
    "cloud_distance_loss",
    "smooth_l1_quat_loss",
    "combined_loss",
    "cost_volume",
]


@dataclass
class DepthMap:
    """Sparse per-pixel depth in meters; 0 marks an invalid (empty) pixel."""

    depth: np.ndarray

    def __post_init__(self):
        self.depth = np.asarray(self.depth, dtype=np.float64)
        if self.depth.ndim != 2:
            raise ValueError("depth map must be 2D")

    @property
    def height(self) -> int:
        return self.depth.shape[0]

    @property
    def width(self) -> int:
        return self.depth.shape[1]

    @property
    def valid(self) -> np.ndarray:
        return self.depth > 0.0

    def to_uint16(self) -> np.ndarray:
        """Depth scaled by 256 as uint16 (the usual depth-PNG convention)."""
        return np.clip(np.round(self.depth * 256.0), 0, 65535).astype(np.uint16)

    def save_png16(self, path) -> None:
        """Debug dump as a 16-bit grayscale PNG, zero = invalid."""
        from PIL import Image

        Image.fromarray(self.to_uint16(), mode="I;16").save(path, format="PNG")


@dataclass
class CostVolume:
    """Per-pixel correlation costs over a (2d+1)^2 displacement window.

    costs has shape (H, W, (2d+1)**2); the window axis is row-major over
    (dv, du) displacements from -d to +d.
    """

    d: int
    costs: np.ndarray

    @property
    def height(self) -> int:
        return self.costs.shape[0]

    @property
    def width(self) -> int:
        return self.costs.shape[1]


def render_depth_map(
    points: np.ndarray,
    k: Intrinsics,
    h: Extrinsic,
    width: int | None = None,
    height: int | None = None,
) -> DepthMap:
    """Project a cloud onto the image plane as a nearest-pixel sparse depth map.

    Points behind the camera or outside the image are dropped; when several
    points hit the same pixel the smallest depth wins (z-buffer).
    """
    width = k.width if width is None else width
    height = k.height if height is None else height
    if width <= 0 or height <= 0:
        raise ValueError("image dimensions must be positive")

    depth = np.full((height, width), np.inf)
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if points.shape[0] > 0:
        u, v, z, valid = project_points(points, k, h)
        ui = np.rint(u[valid]).astype(np.int64)
        vi = np.rint(v[valid]).astype(np.int64)
        zi = z[valid]
        inside = (ui >= 0) & (ui < width) & (vi >= 0) & (vi < height)
        np.minimum.at(depth, (vi[inside], ui[inside]), zi[inside])

    depth[~np.isfinite(depth)] = 0.0
    return DepthMap(depth)


def photometric_loss(pred: DepthMap, gt: DepthMap) -> float:
    """Mean squared depth difference over pixels valid in both maps."""
    if pred.depth.shape != gt.depth.shape:
        raise ValueError("depth map dimensions differ")
    both = pred.valid & gt.valid
    if not both.any():
        raise ValueError("no jointly valid pixels to compare")
    diff = pred.depth[both] - gt.depth[both]
    return float(np.mean(diff * diff))


def cloud_distance_loss(pred: np.ndarray, gt: np.ndarray) -> float:
    """Mean Euclidean distance between index-aligned point clouds."""
    pred = np.asarray(pred, dtype=np.float64).reshape(-1, 3)
    gt = np.asarray(gt, dtype=np.float64).reshape(-1, 3)
    if pred.shape != gt.shape:
        raise ValueError("clouds must have equal length")
    if pred.shape[0] == 0:
        raise ValueError("empty clouds")
    return float(np.mean(np.linalg.norm(pred - gt, axis=1)))


def smooth_l1_quat_loss(q_pred: np.ndarray, q_gt: np.ndarray) -> float:
    """Smooth-L1 (beta = 1) loss between two unit quaternions.

    Both inputs are canonicalized first so q and -q compare equal
    (quaternion double cover).
    """
    q_pred = np.asarray(q_pred, dtype=np.float64).reshape(4)
    q_gt = np.asarray(q_gt, dtype=np.float64).reshape(4)
    for q in (q_pred, q_gt):
        if abs(np.linalg.norm(q) - 1.0) > 1e-9:
            raise ValueError("quaternions must be unit norm")
    d = np.abs(canonicalize_quaternion(q_pred) - canonicalize_quaternion(q_gt))
    per_component = np.where(d < 1.0, 0.5 * d * d, d - 0.5)
    return float(per_component.sum())


def combined_loss(l_t: float, l_p: float, lambda_t: float, lambda_p: float) -> float:
    """Weighted sum lambda_t * L_T + lambda_p * L_P."""
    if lambda_t < 0 or lambda_p < 0:
        raise ValueError("loss weights must be non-negative")
    if lambda_t == 0 and lambda_p == 0:
        raise ValueError("at least one loss weight must be positive")
    return lambda_t * l_t + lambda_p * l_p


def cost_volume(rgb: np.ndarray, lidar: np.ndarray, d: int = 2) -> CostVolume:
    """Local correlation volume between two (H, W, C) feature maps.

    cost(p1, p2) = <rgb(p1), lidar(p2)> / C for every p2 in the
    (2d+1) x (2d+1) window around p1; displacements that fall outside the
    image contribute cost 0. The default window radius of 2 pixels matches
    the usual feature-matching setup.
    """
    rgb = np.asarray(rgb, dtype=np.float64)
    lidar = np.asarray(lidar, dtype=np.float64)
    if rgb.ndim != 3 or rgb.shape != lidar.shape:
        raise ValueError("feature maps must share an (H, W, C) shape")
    if d < 0:
        raise ValueError("window radius must be >= 0")
    hgt, wid, channels = rgb.shape

    padded = np.zeros((hgt + 2 * d, wid + 2 * d, channels))
    padded[d : d + hgt, d : d + wid] = lidar

    costs = np.empty((hgt, wid, (2 * d + 1) ** 2))
    idx = 0
    for dv in range(-d, d + 1):
        for du in range(-d, d + 1):
            shifted = padded[d + dv : d + dv + hgt, d + du : d + du + wid]
            costs[:, :, idx] = np.einsum("hwc,hwc->hw", rgb, shifted) / channels
            idx += 1
    return CostVolume(d=d, costs=costs)
