"""Shared domain types and on-disk formats.

Depth rasters use a small binary container::

    b"DMF1" | width u32 LE | height u32 LE | width*height f32 LE (row-major)

Invalid pixels are stored as quiet NaN. Point clouds are text files with
``#``-prefixed header lines followed by one ``x y z`` triple per line.
Masks and detection lists are JSON; mask foreground is run-length encoded
over the row-major flattened image as alternating background/foreground
counts, starting with background.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

D_MAX = 655.0
DEPTH_MAGIC = b"DMF1"
CLASS_LABELS = ("person", "vehicle", "animal", "tool", "train", "other", "track")


class FormatError(ValueError):
    """Raised when a file or in-memory value violates a format invariant."""


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class CameraModel:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise FormatError("camera: focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise FormatError("camera: principal point outside the image")

    @property
    def K(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in ("fx", "fy", "cx", "cy", "width", "height")}

    @classmethod
    def from_dict(cls, d: dict) -> "CameraModel":
        try:
            return cls(float(d["fx"]), float(d["fy"]), float(d["cx"]), float(d["cy"]),
                       int(d["width"]), int(d["height"]))
        except (KeyError, TypeError) as exc:
            raise FormatError(f"camera: {exc}") from exc


@dataclass(frozen=True, eq=False)
class RigidPose:
    """Sensor-to-camera transform: ``p_cam = rotation @ p_sensor + translation``."""

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        R = np.array(self.rotation, dtype=np.float64).reshape(3, 3)
        t = np.array(self.translation, dtype=np.float64).reshape(3)
        if not np.allclose(R.T @ R, np.eye(3), atol=1e-9, rtol=0):
            raise FormatError("pose: rotation is not orthonormal")
        if abs(np.linalg.det(R) - 1.0) > 1e-9:
            raise FormatError("pose: rotation determinant is not +1")
        object.__setattr__(self, "rotation", _frozen(R))
        object.__setattr__(self, "translation", _frozen(t))

    def __eq__(self, other):
        if not isinstance(other, RigidPose):
            return NotImplemented
        return np.array_equal(self.rotation, other.rotation) and np.array_equal(self.translation, other.translation)

    __hash__ = None

    def apply(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points, dtype=np.float64) @ self.rotation.T + self.translation

    def inverse_apply(self, points: np.ndarray) -> np.ndarray:
        return (np.asarray(points, dtype=np.float64) - self.translation) @ self.rotation

    def to_dict(self) -> dict:
        return {"rotation": self.rotation.tolist(), "translation": self.translation.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "RigidPose":
        try:
            return cls(np.array(d["rotation"], dtype=float), np.array(d["translation"], dtype=float))
        except (KeyError, ValueError, TypeError) as exc:
            raise FormatError(f"pose: {exc}") from exc


@dataclass(frozen=True)
class PointCloud:
    points: np.ndarray
    frame_index: int = 0
    sensor_id: str = "lidar"

    def __post_init__(self):
        pts = np.array(self.points, dtype=np.float64).reshape(-1, 3)
        if not np.all(np.isfinite(pts)):
            raise FormatError("point cloud: non-finite coordinate")
        if int(self.frame_index) < 0:
            raise FormatError("point cloud: negative frame_index")
        # the id names the lidar_<id>.xyz file and sits in a one-token header field
        if not self.sensor_id or any(c.isspace() for c in self.sensor_id):
            raise FormatError(f"point cloud: bad sensor id {self.sensor_id!r}")
        object.__setattr__(self, "points", _frozen(pts))

    def __len__(self) -> int:
        return len(self.points)


@dataclass(frozen=True)
class DepthRaster:
    """Dense metric depth, shape (height, width), NaN marks invalid pixels.

    Values are held in float64; the file format stores float32, so writing
    quantizes and a raster read back from disk round-trips bit-exactly.
    """

    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64)
        if v.ndim != 2:
            raise FormatError("depth raster: values must be 2-D (height, width)")
        ok = ~np.isnan(v)
        if np.any(~np.isfinite(v[ok])) or np.any(v[ok] <= 0) or np.any(v[ok] > D_MAX):
            raise FormatError(f"depth raster: valid values must lie in (0, {D_MAX}]")
        object.__setattr__(self, "values", _frozen(v))

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def valid(self) -> np.ndarray:
        return ~np.isnan(self.values)


@dataclass(frozen=True)
class SparseDepthMap:
    """Pixel-indexed depth samples; at most one sample per pixel."""

    width: int
    height: int
    xs: np.ndarray
    ys: np.ndarray
    depths: np.ndarray

    def __post_init__(self):
        xs = np.array(self.xs, dtype=np.int64).reshape(-1)
        ys = np.array(self.ys, dtype=np.int64).reshape(-1)
        d = np.array(self.depths, dtype=np.float64).reshape(-1)
        if not (len(xs) == len(ys) == len(d)):
            raise FormatError("sparse map: xs, ys, depths lengths differ")
        if len(xs):
            if xs.min() < 0 or xs.max() >= self.width or ys.min() < 0 or ys.max() >= self.height:
                raise FormatError("sparse map: sample outside the image")
            if not np.all(np.isfinite(d)) or np.any(d <= 0):
                raise FormatError("sparse map: depths must be positive and finite")
            if len(np.unique(ys * self.width + xs)) != len(xs):
                raise FormatError("sparse map: more than one sample on a pixel")
        object.__setattr__(self, "xs", _frozen(xs))
        object.__setattr__(self, "ys", _frozen(ys))
        object.__setattr__(self, "depths", _frozen(d))

    def __len__(self) -> int:
        return len(self.xs)

    @classmethod
    def empty(cls, width: int, height: int) -> "SparseDepthMap":
        return cls(width, height, np.zeros(0, np.int64), np.zeros(0, np.int64), np.zeros(0))

    def to_dense(self) -> np.ndarray:
        out = np.full((self.height, self.width), np.nan)
        out[self.ys, self.xs] = self.depths
        return out


def rle_encode(mask: np.ndarray) -> list[int]:
    flat = np.asarray(mask, dtype=bool).reshape(-1)
    if flat.size == 0:
        return [0]
    change = np.flatnonzero(flat[1:] != flat[:-1]) + 1
    bounds = np.concatenate([[0], change, [flat.size]])
    counts = np.diff(bounds).tolist()
    if flat[0]:
        counts = [0] + counts
    return counts


def rle_decode(counts: Sequence[int], width: int, height: int) -> np.ndarray:
    total = width * height
    counts = list(counts)
    if any((not isinstance(c, (int, np.integer))) or isinstance(c, bool) or c < 0 for c in counts):
        raise FormatError("mask rle: counts must be non-negative integers")
    if sum(counts) > total:
        raise FormatError(f"mask rle: runs overrun the {width}x{height} image")
    if sum(counts) != total:
        raise FormatError(f"mask rle: runs cover {sum(counts)} of {total} pixels")
    values = np.zeros(len(counts), dtype=bool)
    values[1::2] = True
    return np.repeat(values, counts).reshape(height, width)


@dataclass(frozen=True)
class InstanceMask:
    """Binary mask with detection metadata. ``data`` is a (height, width) bool array."""

    data: np.ndarray
    class_label: str = "other"
    score: float = 1.0
    track_id: int | None = None

    def __post_init__(self):
        m = np.array(self.data, dtype=bool)
        if m.ndim != 2:
            raise FormatError("mask: data must be 2-D")
        if self.class_label not in CLASS_LABELS:
            raise FormatError(f"mask: unknown class label {self.class_label!r}")
        if not (0.0 <= float(self.score) <= 1.0):
            raise FormatError("mask: score outside [0, 1]")
        if self.track_id is not None and int(self.track_id) < 0:
            raise FormatError("mask: negative track_id")
        object.__setattr__(self, "data", _frozen(m))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def area(self) -> int:
        return int(self.data.sum())

    @property
    def rle(self) -> list[int]:
        return rle_encode(self.data)

    def with_data(self, data: np.ndarray) -> "InstanceMask":
        return InstanceMask(data, self.class_label, self.score, self.track_id)

    @classmethod
    def empty(cls, width: int, height: int, class_label: str = "track") -> "InstanceMask":
        return cls(np.zeros((height, width), bool), class_label)

    def to_dict(self) -> dict:
        d = {"width": self.width, "height": self.height, "class": self.class_label,
             "score": float(self.score), "rle": self.rle}
        if self.track_id is not None:
            d["track_id"] = int(self.track_id)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "InstanceMask":
        if not isinstance(d, dict):
            raise FormatError("mask: expected a JSON object")
        for key in ("width", "height", "class", "rle"):
            if key not in d:
                raise FormatError(f"mask: missing field {key!r}")
        w, h = d["width"], d["height"]
        if not all(isinstance(v, int) and not isinstance(v, bool) and v > 0 for v in (w, h)):
            raise FormatError("mask: width/height must be positive integers")
        if not isinstance(d["rle"], list):
            raise FormatError("mask: rle must be a list")
        score = d.get("score", 1.0)
        if not isinstance(score, (int, float)) or isinstance(score, bool) or not math.isfinite(score):
            raise FormatError("mask: score must be a number")
        tid = d.get("track_id")
        if tid is not None and (not isinstance(tid, int) or isinstance(tid, bool)):
            raise FormatError("mask: track_id must be an integer")
        return cls(rle_decode(d["rle"], w, h), d["class"], float(score), tid)


@dataclass(frozen=True)
class FrameBundle:
    frame_index: int
    raw_depth: DepthRaster | None
    track_mask: InstanceMask
    detections: tuple[InstanceMask, ...] = ()
    clouds: tuple[tuple[PointCloud, RigidPose], ...] = ()
    image: Path | None = None

    def __post_init__(self):
        shape = self.track_mask.data.shape
        if self.raw_depth is not None and self.raw_depth.values.shape != shape:
            raise FormatError("frame: raw depth and track mask sizes differ")
        for m in self.detections:
            if m.data.shape != shape:
                raise FormatError("frame: detection mask size differs from track mask")
        object.__setattr__(self, "detections", tuple(self.detections))
        object.__setattr__(self, "clouds", tuple(self.clouds))

    @property
    def width(self) -> int:
        return self.track_mask.width

    @property
    def height(self) -> int:
        return self.track_mask.height


ESTIMATORS = ("sparse_mode", "dense_mode_raw", "dense_mode_refined", "mean_k_raw", "mean_k_refined")


@dataclass(frozen=True)
class DistanceRecord:
    frame_index: int
    object_index: int
    track_id: int | None
    class_label: str
    score: float
    estimator: str
    distance_m: float | None
    filtered_distance_m: float | None
    is_obstacle: bool
    reason: str | None = None

    def to_dict(self) -> dict:
        return {
            "frame_index": self.frame_index, "object_index": self.object_index,
            "track_id": self.track_id, "class": self.class_label, "score": self.score,
            "estimator": self.estimator, "distance_m": self.distance_m,
            "filtered_distance_m": self.filtered_distance_m, "is_obstacle": self.is_obstacle,
            "reason": self.reason,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DistanceRecord":
        return cls(d["frame_index"], d["object_index"], d.get("track_id"), d["class"],
                   d["score"], d["estimator"], d.get("distance_m"),
                   d.get("filtered_distance_m"), d["is_obstacle"], d.get("reason"))


# -- depth rasters ---------------------------------------------------------

def encode_depth_raster(raster: DepthRaster) -> bytes:
    header = DEPTH_MAGIC + struct.pack("<II", raster.width, raster.height)
    return header + raster.values.astype("<f4").tobytes()


def decode_depth_raster(buf: bytes) -> DepthRaster:
    if len(buf) < 12:
        raise FormatError(f"depth raster: header truncated ({len(buf)} bytes)")
    if buf[:4] != DEPTH_MAGIC:
        raise FormatError(f"depth raster: bad magic {buf[:4]!r}")
    width, height = struct.unpack("<II", buf[4:12])
    if width == 0 or height == 0:
        raise FormatError(f"depth raster: zero width/height ({width}x{height})")
    payload = len(buf) - 12
    if payload != 4 * width * height:
        raise FormatError(
            f"depth raster: size mismatch, width*height={width * height} but payload holds {payload / 4:g} values")
    values = np.frombuffer(buf, dtype="<f4", offset=12).reshape(height, width)
    ok = ~np.isnan(values)
    if np.any(~np.isfinite(values[ok])) or np.any(values[ok] <= 0) or np.any(values[ok] > D_MAX):
        raise FormatError("depth raster: values must be NaN or in (0, 655]")
    return DepthRaster(values.astype(np.float64))


def write_depth_raster(raster: DepthRaster, path) -> None:
    Path(path).write_bytes(encode_depth_raster(raster))


def read_depth_raster(path) -> DepthRaster:
    return decode_depth_raster(Path(path).read_bytes())


# -- masks and detections ------------------------------------------------------

def write_mask(mask: InstanceMask, path) -> None:
    Path(path).write_text(json.dumps(mask.to_dict()))


def _load_json(text: str, what: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise FormatError(f"{what}: invalid JSON ({exc})") from exc


def read_mask(path) -> InstanceMask:
    return InstanceMask.from_dict(_load_json(Path(path).read_text(), "mask"))


def detections_to_dict(frame_index: int, masks: Iterable[InstanceMask]) -> dict:
    return {"frame_index": int(frame_index), "objects": [m.to_dict() for m in masks]}


def detections_from_dict(doc) -> tuple[int, list[InstanceMask]]:
    if not isinstance(doc, dict) or "objects" not in doc or not isinstance(doc["objects"], list):
        raise FormatError("detections: expected an object with an 'objects' list")
    fi = doc.get("frame_index", 0)
    if not isinstance(fi, int) or isinstance(fi, bool) or fi < 0:
        raise FormatError("detections: frame_index must be a non-negative integer")
    masks = [InstanceMask.from_dict(o) for o in doc["objects"]]
    if len({m.data.shape for m in masks}) > 1:
        raise FormatError("detections: masks have differing sizes")
    return fi, masks


def write_detections(frame_index: int, masks: Iterable[InstanceMask], path) -> None:
    Path(path).write_text(json.dumps(detections_to_dict(frame_index, masks)))


def read_detections(path) -> tuple[int, list[InstanceMask]]:
    return detections_from_dict(_load_json(Path(path).read_text(), "detections"))


# -- point clouds ----------------------------------------------------------------

def encode_point_cloud(cloud: PointCloud) -> str:
    lines = [f"# frame_index: {cloud.frame_index}", f"# sensor: {cloud.sensor_id}"]
    lines += [f"{x!r} {y!r} {z!r}" for x, y, z in cloud.points.tolist()]
    return "\n".join(lines) + "\n"


def decode_point_cloud(text: str) -> PointCloud:
    header: dict[str, str] = {}
    rows = []
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        if line.startswith("#"):
            key, sep, value = line[1:].partition(":")
            if not sep:
                raise FormatError(f"point cloud: malformed header line {lineno}")
            header[key.strip()] = value.strip()
            continue
        parts = line.split()
        if len(parts) != 3:
            raise FormatError(f"point cloud: line {lineno} has {len(parts)} fields, expected 3")
        try:
            rows.append([float(p) for p in parts])
        except ValueError as exc:
            raise FormatError(f"point cloud: line {lineno}: {exc}") from exc
    if "frame_index" not in header or "sensor" not in header:
        raise FormatError("point cloud: header must carry frame_index and sensor")
    try:
        fi = int(header["frame_index"])
    except ValueError as exc:
        raise FormatError(f"point cloud: bad frame_index {header['frame_index']!r}") from exc
    if fi < 0:
        raise FormatError("point cloud: negative frame_index")
    return PointCloud(np.array(rows, dtype=np.float64).reshape(-1, 3), fi, header["sensor"])


def write_point_cloud(cloud: PointCloud, path) -> None:
    Path(path).write_text(encode_point_cloud(cloud))


def read_point_cloud(path) -> PointCloud:
    return decode_point_cloud(Path(path).read_text())
