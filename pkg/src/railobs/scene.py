"""Primitive-based synthetic scenes with analytic depth.

Everything lives in the camera frame (+X right, +Y down, +Z forward). The
ground is the plane ``y = height``; a track ribbon is a labelled strip on
that plane. Depth is the z-coordinate of the first surface hit by the ray
through a pixel centre, so a fronto-parallel plane at ``z = 50`` renders
as exactly 50.0 everywhere.

LiDAR sampling casts rays on an azimuth/elevation grid from each sensor.
With ``snap_to_pixels`` (the default) every hit is moved to the surface
point seen through the centre of the camera pixel it lands on, and kept
only if that point is also visible from the sensor. The resulting clouds
agree with the rendered raster to floating-point precision.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .formats import (D_MAX, CameraModel, DepthRaster, FormatError, InstanceMask, PointCloud,
                      RigidPose)
from .geometry import Z_MIN, round_half_up

_EPS = 1e-9


@dataclass(frozen=True)
class GroundPlane:
    height: float = 2.5
    kind = "ground"

    def to_dict(self):
        return {"type": "ground", "height": self.height}


@dataclass(frozen=True)
class VerticalPlane:
    """Fronto-parallel rectangle at depth ``z`` (unbounded by default)."""

    z: float
    x_min: float = -math.inf
    x_max: float = math.inf
    y_min: float = -math.inf
    y_max: float = math.inf
    kind = "plane"

    def __post_init__(self):
        if self.z <= 0 or not (self.x_max > self.x_min and self.y_max > self.y_min):
            raise FormatError("vertical plane: degenerate extent")

    def to_dict(self):
        d = {"type": "plane", "z": self.z}
        for k in ("x_min", "x_max", "y_min", "y_max"):
            v = getattr(self, k)
            if math.isfinite(v):
                d[k] = v
        return d


@dataclass(frozen=True)
class Box:
    """Axis-aligned box given by its centre and edge lengths (meters)."""

    center: tuple[float, float, float]
    size: tuple[float, float, float]
    kind = "box"

    def __post_init__(self):
        if len(self.size) != 3 or min(self.size) <= 0:
            raise FormatError(f"box: degenerate size {self.size}")
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))
        object.__setattr__(self, "size", tuple(float(s) for s in self.size))

    @property
    def lo(self):
        return np.array(self.center) - np.array(self.size) / 2

    @property
    def hi(self):
        return np.array(self.center) + np.array(self.size) / 2

    def moved(self, delta) -> "Box":
        return Box(tuple(np.array(self.center) + np.asarray(delta, float)), self.size)

    def to_dict(self):
        return {"type": "box", "center": list(self.center), "size": list(self.size)}


@dataclass(frozen=True)
class TrackRibbon:
    """Strip on the ground plane: ``|x - (x_offset + curvature*z**2/2)| <= half_width``."""

    half_width: float = 0.75
    x_offset: float = 0.0
    curvature: float = 0.0
    z_min: float = 0.0
    z_max: float = 250.0
    kind = "track"

    def __post_init__(self):
        if self.half_width <= 0 or self.z_max <= self.z_min:
            raise FormatError("track ribbon: degenerate extent")

    def contains(self, x, z):
        xc = self.x_offset + 0.5 * self.curvature * z * z
        return (np.abs(x - xc) <= self.half_width) & (z >= self.z_min) & (z <= self.z_max)

    def to_dict(self):
        return {"type": "track", "half_width": self.half_width, "x_offset": self.x_offset,
                "curvature": self.curvature, "z_min": self.z_min, "z_max": self.z_max}


_PRIMITIVES = {"ground": GroundPlane, "plane": VerticalPlane, "box": Box, "track": TrackRibbon}


def primitive_from_dict(d: dict):
    d = dict(d)
    kind = d.pop("type", None)
    if kind not in _PRIMITIVES:
        raise FormatError(f"scene: unknown primitive type {kind!r}")
    if kind == "box":
        return Box(tuple(d["center"]), tuple(d["size"]))
    return _PRIMITIVES[kind](**d)


@dataclass(frozen=True)
class ObjectAnnotation:
    primitive: int
    class_label: str
    track_id: int | None = None
    score: float = 1.0

    def to_dict(self):
        return {"primitive": self.primitive, "class": self.class_label,
                "track_id": self.track_id, "score": self.score}

    @classmethod
    def from_dict(cls, d):
        return cls(int(d["primitive"]), d["class"], d.get("track_id"), float(d.get("score", 1.0)))


@dataclass(frozen=True)
class LidarSpec:
    sensor_id: str
    pose: RigidPose
    azimuth: tuple[float, float, int] = (-40.0, 40.0, 64)
    elevation: tuple[float, float, int] = (-25.0, 5.0, 32)
    max_range: float = 250.0
    snap_to_pixels: bool = True

    def directions(self) -> np.ndarray:
        """Unit ray directions in the sensor frame (x forward, y left, z up)."""
        az = np.deg2rad(np.linspace(*self.azimuth[:2], int(self.azimuth[2])))
        el = np.deg2rad(np.linspace(*self.elevation[:2], int(self.elevation[2])))
        A, E = np.meshgrid(az, el)
        return np.stack([np.cos(E) * np.cos(A), np.cos(E) * np.sin(A), np.sin(E)], -1).reshape(-1, 3)

    def to_dict(self):
        return {"sensor_id": self.sensor_id, "pose": self.pose.to_dict(),
                "azimuth": list(self.azimuth), "elevation": list(self.elevation),
                "max_range": self.max_range, "snap_to_pixels": self.snap_to_pixels}

    @classmethod
    def from_dict(cls, d):
        return cls(d["sensor_id"], RigidPose.from_dict(d["pose"]),
                   tuple(d.get("azimuth", (-40.0, 40.0, 64))),
                   tuple(d.get("elevation", (-25.0, 5.0, 32))),
                   float(d.get("max_range", 250.0)), bool(d.get("snap_to_pixels", True)))


# sensor frame (x fwd, y left, z up) -> camera frame (x right, y down, z fwd)
LIDAR_TO_CAMERA = np.array([[0.0, -1.0, 0.0], [0.0, 0.0, -1.0], [1.0, 0.0, 0.0]])


def lidar_pose(position, yaw_deg: float = 0.0) -> RigidPose:
    """Pose of a forward-looking LiDAR at ``position`` (camera frame), yawed about its up axis."""
    c, s = math.cos(math.radians(yaw_deg)), math.sin(math.radians(yaw_deg))
    yaw = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    return RigidPose(LIDAR_TO_CAMERA @ yaw, np.asarray(position, float))


@dataclass(frozen=True)
class SceneSpec:
    camera: CameraModel
    primitives: tuple = ()
    annotations: tuple[ObjectAnnotation, ...] = ()
    lidars: tuple[LidarSpec, ...] = ()

    def __post_init__(self):
        if not self.primitives:
            raise FormatError("scene: at least one primitive is required")
        object.__setattr__(self, "primitives", tuple(self.primitives))
        object.__setattr__(self, "annotations", tuple(self.annotations))
        object.__setattr__(self, "lidars", tuple(self.lidars))
        for a in self.annotations:
            if not 0 <= a.primitive < len(self.primitives):
                raise FormatError(f"scene: annotation refers to missing primitive {a.primitive}")
        if any(p.kind == "track" for p in self.primitives) and self.ground is None:
            raise FormatError("scene: a track ribbon needs a ground plane")

    @property
    def ground(self) -> GroundPlane | None:
        return next((p for p in self.primitives if p.kind == "ground"), None)

    def to_dict(self):
        return {"camera": self.camera.to_dict(),
                "primitives": [p.to_dict() for p in self.primitives],
                "annotations": [a.to_dict() for a in self.annotations],
                "lidars": [l.to_dict() for l in self.lidars]}

    @classmethod
    def from_dict(cls, d):
        return cls(CameraModel.from_dict(d["camera"]),
                   tuple(primitive_from_dict(p) for p in d["primitives"]),
                   tuple(ObjectAnnotation.from_dict(a) for a in d.get("annotations", ())),
                   tuple(LidarSpec.from_dict(l) for l in d.get("lidars", ())))


# -- ray casting --------------------------------------------------------------

def _hit_ground(p: GroundPlane, o, d):
    with np.errstate(divide="ignore", invalid="ignore"):
        t = (p.height - o[:, 1]) / d[:, 1]
    return np.where((d[:, 1] > 0) & (t > _EPS), t, np.inf)


def _hit_plane(p: VerticalPlane, o, d):
    with np.errstate(divide="ignore", invalid="ignore"):
        t = (p.z - o[:, 2]) / d[:, 2]
    x = o[:, 0] + t * d[:, 0]
    y = o[:, 1] + t * d[:, 1]
    ok = (t > _EPS) & (x >= p.x_min) & (x <= p.x_max) & (y >= p.y_min) & (y <= p.y_max)
    return np.where(ok, t, np.inf)


def _hit_box(b: Box, o, d):
    lo, hi = b.lo, b.hi
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / d
        t1 = (lo - o) * inv
        t2 = (hi - o) * inv
    # axis-parallel rays: inside the slab -> (-inf, inf), outside -> empty
    par = d == 0
    inside = (o >= lo) & (o <= hi)
    tmin_ax = np.where(par, np.where(inside, -np.inf, np.inf), np.minimum(t1, t2))
    tmax_ax = np.where(par, np.where(inside, np.inf, -np.inf), np.maximum(t1, t2))
    tn = tmin_ax.max(axis=1)
    tf = tmax_ax.min(axis=1)
    ok = (tn <= tf) & (tn > _EPS)
    return np.where(ok, tn, np.inf)


_HITTERS = {"ground": _hit_ground, "plane": _hit_plane, "box": _hit_box}


def cast_rays(primitives: Sequence, origins, directions, only: Sequence[int] | None = None):
    """Nearest hit parameter ``t`` and primitive index (-1 on miss) per ray."""
    d = np.asarray(directions, dtype=np.float64).reshape(-1, 3)
    o = np.broadcast_to(np.asarray(origins, dtype=np.float64), d.shape)
    best = np.full(len(d), np.inf)
    idx = np.full(len(d), -1, dtype=np.int64)
    for i, prim in enumerate(primitives):
        if prim.kind not in _HITTERS or (only is not None and i not in only):
            continue
        t = _HITTERS[prim.kind](prim, o, d)
        closer = t < best
        best[closer] = t[closer]
        idx[closer] = i
    return best, idx


def pixel_rays(cam: CameraModel) -> np.ndarray:
    """Rays through pixel centres with unit z component, shape (H*W, 3)."""
    v, u = np.mgrid[0:cam.height, 0:cam.width]
    return np.stack([(u - cam.cx) / cam.fx, (v - cam.cy) / cam.fy, np.ones_like(u, float)],
                    -1).reshape(-1, 3).astype(np.float64)


def depth_at(spec: SceneSpec, u, v) -> np.ndarray:
    """Analytic depth along the camera ray through continuous pixel coords (NaN on miss)."""
    u = np.atleast_1d(np.asarray(u, float))
    v = np.atleast_1d(np.asarray(v, float))
    cam = spec.camera
    d = np.stack([(u - cam.cx) / cam.fx, (v - cam.cy) / cam.fy, np.ones_like(u)], -1)
    t, _ = cast_rays(spec.primitives, np.zeros(3), d)
    return np.where(t <= D_MAX, t, np.nan)


@dataclass(frozen=True)
class GroundTruthObject:
    """Annotated object with the metadata used by evaluation filters."""

    mask: InstanceMask
    distance_m: float | None
    visible_fraction: float
    in_danger_area: bool | None = None

    def to_dict(self):
        d = self.mask.to_dict()
        d.update(distance_m=self.distance_m, visible_fraction=self.visible_fraction)
        if self.in_danger_area is not None:
            d["in_danger_area"] = self.in_danger_area
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(InstanceMask.from_dict(d), d.get("distance_m"),
                   float(d.get("visible_fraction", 1.0)), d.get("in_danger_area"))


@dataclass(frozen=True)
class SceneRender:
    depth: DepthRaster
    masks: list[InstanceMask]
    clouds: list[PointCloud]
    poses: list[RigidPose]
    objects: list[GroundTruthObject]
    track_mask: InstanceMask
    track_mask_amodal: InstanceMask


def _track_mask(spec, t, idx, rays, shape):
    ribbon = [p for p in spec.primitives if p.kind == "track"]
    hit_ground = np.zeros(len(t), bool)
    for i, p in enumerate(spec.primitives):
        if p.kind == "ground":
            hit_ground |= idx == i
    m = np.zeros(len(t), bool)
    if ribbon and hit_ground.any():
        pts = rays[hit_ground] * t[hit_ground, None]
        inside = np.zeros(len(pts), bool)
        for r in ribbon:
            inside |= r.contains(pts[:, 0], pts[:, 2])
        m[hit_ground] = inside
    return InstanceMask(m.reshape(shape), "track")


def sample_lidar(spec: SceneSpec, lidar: LidarSpec, depth: np.ndarray, frame_index: int = 0) -> PointCloud:
    R, o = lidar.pose.rotation, lidar.pose.translation
    dirs = lidar.directions() @ R.T
    if len(dirs) == 0:
        return PointCloud(np.zeros((0, 3)), frame_index, lidar.sensor_id)
    t, idx = cast_rays(spec.primitives, o, dirs)
    hit = (idx >= 0) & (t <= lidar.max_range)
    pts = o + dirs[hit] * t[hit, None]
    if lidar.snap_to_pixels:
        cam = spec.camera
        pts = pts[pts[:, 2] > Z_MIN]
        u = round_half_up(cam.fx * pts[:, 0] / pts[:, 2] + cam.cx)
        v = round_half_up(cam.fy * pts[:, 1] / pts[:, 2] + cam.cy)
        ok = (u >= 0) & (u < cam.width) & (v >= 0) & (v < cam.height)
        lin = np.unique(v[ok] * cam.width + u[ok])
        vv, uu = np.divmod(lin, cam.width)
        z = depth[vv, uu]
        good = ~np.isnan(z)
        uu, vv, z = uu[good], vv[good], z[good]
        pts = np.stack([(uu - cam.cx) / cam.fx * z, (vv - cam.cy) / cam.fy * z, z], -1)
        # keep only surface points the sensor itself can see
        to = pts - o
        dist = np.linalg.norm(to, axis=1)
        t2, _ = cast_rays(spec.primitives, o, to / dist[:, None])
        seen = (t2 >= dist * (1 - 1e-9) - 1e-9) & (dist <= lidar.max_range)
        pts = pts[seen]
    return PointCloud(lidar.pose.inverse_apply(pts), frame_index, lidar.sensor_id)


def render_scene(spec: SceneSpec, frame_index: int = 0) -> SceneRender:
    cam = spec.camera
    shape = (cam.height, cam.width)
    rays = pixel_rays(cam)
    t, idx = cast_rays(spec.primitives, np.zeros(3), rays)
    valid = np.isfinite(t) & (t <= D_MAX)
    depth = np.where(valid, t, np.nan).reshape(shape)
    idx = np.where(valid, idx, -1)

    masks, objects = [], []
    for a in spec.annotations:
        visible = (idx == a.primitive).reshape(shape)
        ta, _ = cast_rays(spec.primitives, np.zeros(3), rays, only=[a.primitive])
        amodal_area = int((np.isfinite(ta) & (ta <= D_MAX)).sum())
        m = InstanceMask(visible, a.class_label, a.score, a.track_id)
        masks.append(m)
        dist = float(np.min(depth[visible])) if visible.any() else None
        frac = m.area / amodal_area if amodal_area else 0.0
        objects.append(GroundTruthObject(m, dist, frac))

    track = _track_mask(spec, t, idx, rays, shape)
    # amodal track: annotated obstacles removed from the scene
    annotated = {a.primitive for a in spec.annotations}
    keep = [i for i in range(len(spec.primitives)) if i not in annotated]
    ta, ia = cast_rays(spec.primitives, np.zeros(3), rays, only=keep)
    track_amodal = _track_mask(spec, ta, ia, rays, shape)

    clouds = [sample_lidar(spec, l, depth, frame_index) for l in spec.lidars]
    return SceneRender(DepthRaster(depth), masks, clouds, [l.pose for l in spec.lidars],
                       objects, track, track_amodal)


# -- simulated monocular estimate -------------------------------------------------

@dataclass(frozen=True)
class BiasSpec:
    """Smooth bias field plus optional per-pixel Gaussian noise.

    ``linear`` ramps from 0 at the first row/column to ``amplitude`` at the last;
    ``quadratic`` is ``amplitude * (nx**2 + ny**2) / 2`` with ``nx, ny`` in [-1, 1],
    reaching ``amplitude`` at the image corners.
    """

    kind: str = "none"
    amplitude: float = 0.0
    axis: str = "y"
    noise_sigma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("none", "constant", "linear", "quadratic"):
            raise ValueError(f"unknown bias kind {self.kind!r}")

    def field(self, width: int, height: int) -> np.ndarray:
        v, u = np.mgrid[0:height, 0:width].astype(np.float64)
        if self.kind == "constant":
            return np.full((height, width), float(self.amplitude))
        if self.kind == "linear":
            if self.axis == "x":
                return self.amplitude * u / max(width - 1, 1)
            return self.amplitude * v / max(height - 1, 1)
        if self.kind == "quadratic":
            hx, hy = max((width - 1) / 2, 0.5), max((height - 1) / 2, 0.5)
            nx, ny = (u - (width - 1) / 2) / hx, (v - (height - 1) / 2) / hy
            return self.amplitude * (nx * nx + ny * ny) / 2
        return np.zeros((height, width))

    def to_dict(self):
        return {"kind": self.kind, "amplitude": self.amplitude, "axis": self.axis,
                "noise_sigma": self.noise_sigma, "seed": self.seed}

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


MIN_DEPTH = 0.01


def corrupt_monocular(gt: DepthRaster, bias_spec: BiasSpec | Sequence[BiasSpec],
                      frame_index: int = 0) -> DepthRaster:
    specs = [bias_spec] if isinstance(bias_spec, BiasSpec) else list(bias_spec)
    out = gt.values.copy()
    for i, b in enumerate(specs):
        if b.kind != "none":
            out = out + b.field(gt.width, gt.height)
        if b.noise_sigma > 0:
            ss = np.random.SeedSequence([b.seed, int(frame_index), 100 + i])
            rng = np.random.Generator(np.random.Philox(ss))
            out = out + b.noise_sigma * rng.standard_normal(out.shape)
    out = np.where(np.isnan(gt.values), np.nan, np.clip(out, MIN_DEPTH, D_MAX))
    return DepthRaster(out)


def translated(spec: SceneSpec, offsets: dict[int, Sequence[float]]) -> SceneSpec:
    prims = list(spec.primitives)
    for i, delta in offsets.items():
        if prims[i].kind != "box":
            raise FormatError("scene: only boxes can move")
        prims[i] = prims[i].moved(delta)
    return replace(spec, primitives=tuple(prims))
