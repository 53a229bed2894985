"""Pinhole projection of LiDAR clouds into sparse depth maps."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .formats import CameraModel, FormatError, PointCloud, RigidPose, SparseDepthMap

Z_MIN = 0.1


def round_half_up(a: np.ndarray) -> np.ndarray:
    return np.floor(np.asarray(a) + 0.5).astype(np.int64)


def project_points(points_cam: np.ndarray, cam: CameraModel, z_min: float = Z_MIN):
    """Project camera-frame points; returns integer pixels, depths and the kept-point index."""
    pts = np.asarray(points_cam, dtype=np.float64).reshape(-1, 3)
    z = pts[:, 2]
    front = np.flatnonzero(z > z_min)
    pts = pts[front]
    u = round_half_up(cam.fx * pts[:, 0] / pts[:, 2] + cam.cx)
    v = round_half_up(cam.fy * pts[:, 1] / pts[:, 2] + cam.cy)
    inside = (u >= 0) & (u < cam.width) & (v >= 0) & (v < cam.height)
    return u[inside], v[inside], pts[inside, 2], front[inside]


def _zbuffer(width: int, height: int, xs, ys, depths) -> SparseDepthMap:
    if len(xs) == 0:
        return SparseDepthMap.empty(width, height)
    lin = ys * width + xs
    # lexsort: primary key pixel, secondary depth; first of each pixel group is the nearest
    order = np.lexsort((depths, lin))
    lin_sorted = lin[order]
    first = np.ones(len(order), dtype=bool)
    first[1:] = lin_sorted[1:] != lin_sorted[:-1]
    keep = order[first]
    return SparseDepthMap(width, height, xs[keep], ys[keep], depths[keep])


def project_point_cloud(cloud: PointCloud, pose: RigidPose, cam: CameraModel,
                        z_min: float = Z_MIN) -> SparseDepthMap:
    """Transform a sensor-frame cloud into the camera and z-buffer it onto the pixel grid.

    Pixels are rounded half-up; when several points hit one pixel the
    smallest depth is kept.
    """
    p_cam = pose.apply(cloud.points)
    u, v, z, _ = project_points(p_cam, cam, z_min)
    return _zbuffer(cam.width, cam.height, u, v, z)


def merge_sparse_maps(maps: Sequence[SparseDepthMap]) -> SparseDepthMap:
    if not maps:
        raise ValueError("merge_sparse_maps needs at least one map")
    width, height = maps[0].width, maps[0].height
    for m in maps[1:]:
        if (m.width, m.height) != (width, height):
            raise FormatError(
                f"sparse map size mismatch: {(m.width, m.height)} vs {(width, height)}")
    xs = np.concatenate([m.xs for m in maps])
    ys = np.concatenate([m.ys for m in maps])
    ds = np.concatenate([m.depths for m in maps])
    return _zbuffer(width, height, xs, ys, ds)
