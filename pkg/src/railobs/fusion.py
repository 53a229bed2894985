"""LiDAR-guided correction of a monocular depth map.

Residuals ``lidar - monocular`` at projected LiDAR pixels are spread over the
image by barycentric-linear interpolation on a Delaunay triangulation of
the sample pixels. Outside the convex hull each pixel takes the residual of
its nearest sample (ties go to the smaller ``(y, x)``). The corrected map is
the monocular map plus this residual field.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import Delaunay, QhullError, cKDTree

from .formats import D_MAX, DepthRaster, FormatError, SparseDepthMap


@dataclass(frozen=True)
class ResidualSamples:
    """Residuals at integer pixels, stored column-wise."""

    xs: np.ndarray
    ys: np.ndarray
    residuals: np.ndarray

    def __len__(self) -> int:
        return len(self.xs)

    def __iter__(self):
        return zip(self.xs.tolist(), self.ys.tolist(), self.residuals.tolist())


@dataclass(frozen=True)
class ResidualField:
    """Dense residual map ``R`` (meters, may be negative) plus the hull mask."""

    values: np.ndarray
    inside_hull: np.ndarray

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]


def compute_residuals(sparse: SparseDepthMap, raw: DepthRaster) -> ResidualSamples:
    if (sparse.width, sparse.height) != (raw.width, raw.height):
        raise FormatError(
            f"residuals: sparse map {sparse.width}x{sparse.height} vs raw {raw.width}x{raw.height}")
    dm = raw.values[sparse.ys, sparse.xs]
    ok = ~np.isnan(dm)
    return ResidualSamples(sparse.xs[ok], sparse.ys[ok], sparse.depths[ok] - dm[ok])


def _canonical(samples) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    if isinstance(samples, ResidualSamples):
        xs, ys, rs = samples.xs, samples.ys, samples.residuals
    else:
        arr = np.asarray(list(samples), dtype=np.float64).reshape(-1, 3)
        xs, ys, rs = arr[:, 0], arr[:, 1], arr[:, 2]
    xs = np.asarray(xs, np.int64)
    ys = np.asarray(ys, np.int64)
    rs = np.asarray(rs, np.float64)
    if not np.all(np.isfinite(rs)):
        raise ValueError("residuals must be finite")
    # sort by (y, x) so the triangulation never depends on input order;
    # repeated pixels are averaged
    lin = ys * (int(xs.max(initial=0)) + 1) + xs
    uniq, inv = np.unique(lin, return_inverse=True)
    if len(uniq) != len(lin):
        sums = np.bincount(inv, weights=rs)
        cnt = np.bincount(inv)
        first = np.zeros(len(uniq), np.int64)
        first[inv[::-1]] = np.arange(len(lin))[::-1]
        return xs[first], ys[first], sums / cnt
    order = np.argsort(lin, kind="stable")
    return xs[order], ys[order], rs[order]


def _nearest(xs, ys, rs, qx, qy) -> np.ndarray:
    pts = np.stack([xs, ys], -1).astype(np.float64)
    q = np.stack([qx, qy], -1).astype(np.float64)
    tree = cKDTree(pts)
    k = min(8, len(pts))
    dist, idx = tree.query(q, k=k)
    if k == 1:
        return rs[idx]
    dist, idx = dist.reshape(len(q), k), idx.reshape(len(q), k)
    # samples are sorted by (y, x), so among equidistant ones the smallest index wins
    tied = np.isclose(dist, dist[:, :1], rtol=0, atol=1e-9)
    cand = np.where(tied, idx, np.iinfo(np.int64).max)
    best = cand.min(axis=1)
    out = rs[best]
    overflow = np.flatnonzero(tied[:, -1]) if k < len(pts) else np.zeros(0, np.int64)
    for i in overflow:
        # more ties than neighbours fetched; gather all of them
        near = tree.query_ball_point(q[i], dist[i, 0] + 1e-9)
        out[i] = rs[min(near)]
    return out


def interpolate_residuals(samples, width: int, height: int) -> ResidualField:
    """Dense residual field from scattered integer-pixel residuals."""
    if len(samples) == 0:
        raise ValueError("no LiDAR support: cannot interpolate zero residual samples")
    xs, ys, rs = _canonical(samples)
    v, u = np.mgrid[0:height, 0:width]
    qx, qy = u.reshape(-1), v.reshape(-1)
    out = np.empty(width * height)
    inside = np.zeros(width * height, bool)

    tri = None
    if len(xs) >= 3:
        try:
            tri = Delaunay(np.stack([xs, ys], -1).astype(np.float64))
        except QhullError:
            tri = None  # collinear or otherwise flat support

    if tri is not None:
        q = np.stack([qx, qy], -1).astype(np.float64)
        simplex = tri.find_simplex(q)
        inside = simplex >= 0
        s = simplex[inside]
        T = tri.transform[s]
        b = np.einsum("ijk,ik->ij", T[:, :2], q[inside] - T[:, 2])
        w = np.concatenate([b, 1 - b.sum(axis=1, keepdims=True)], axis=1)
        verts = tri.simplices[s]
        out[inside] = (rs[verts] * w).sum(axis=1)
    outside = ~inside
    if outside.any():
        out[outside] = _nearest(xs, ys, rs, qx[outside], qy[outside])
    # exact reproduction at support pixels
    in_img = (xs >= 0) & (xs < width) & (ys >= 0) & (ys < height)
    out[ys[in_img] * width + xs[in_img]] = rs[in_img]
    return ResidualField(out.reshape(height, width), inside.reshape(height, width))


def refine_depth(raw: DepthRaster, residual_field: ResidualField | np.ndarray) -> DepthRaster:
    """``D_r = D_m + R``; invalid raw pixels stay invalid, results clamped to (0, 655]."""
    R = residual_field.values if isinstance(residual_field, ResidualField) else np.asarray(residual_field)
    if R.shape != raw.values.shape:
        raise FormatError(f"refine: residual field {R.shape} vs raw {raw.values.shape}")
    out = raw.values + R
    tiny = np.nextafter(0.0, 1.0)
    out = np.where(np.isnan(raw.values), np.nan, np.clip(out, tiny, D_MAX))
    return DepthRaster(out)


def refine_with_lidar(raw: DepthRaster, sparse: SparseDepthMap) -> tuple[DepthRaster, ResidualField | None]:
    """Residuals, interpolation and correction in one call; returns raw unchanged
    when no LiDAR sample lands on a valid raw pixel."""
    res = compute_residuals(sparse, raw)
    if len(res) == 0:
        return raw, None
    field = interpolate_residuals(res, raw.width, raw.height)
    return refine_depth(raw, field), field
