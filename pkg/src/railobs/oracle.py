"""Synthetic sequences with analytic ground truth, written in the pipeline's input layout."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .formats import (CameraModel, InstanceMask, write_depth_raster, write_detections, write_mask,
                      write_point_cloud)
from .scene import (BiasSpec, Box, GroundPlane, LidarSpec, ObjectAnnotation, SceneRender, SceneSpec,
                    TrackRibbon, VerticalPlane, corrupt_monocular, lidar_pose, render_scene, translated)


def default_camera(width: int = 640, height: int = 400) -> CameraModel:
    f = 400.0 * width / 640
    return CameraModel(f, f, width / 2, height / 2, width, height)


def default_lidars(azimuth=(-40.0, 40.0, 64), elevation=(-25.0, 5.0, 32)) -> tuple[LidarSpec, ...]:
    return (
        LidarSpec("left", lidar_pose((-1.0, -0.4, 0.2), 4.0), azimuth, elevation),
        LidarSpec("center", lidar_pose((0.0, -0.5, 0.5)), azimuth, elevation),
        LidarSpec("right", lidar_pose((1.0, -0.4, 0.2), -4.0), azimuth, elevation),
    )


def default_scene(camera: CameraModel | None = None, lidars=None, obstacles: bool = True) -> SceneSpec:
    """Straight track, backdrop at 400 m, a vehicle on the track, a person at the
    track edge and a second person well off to the side."""
    camera = camera or default_camera()
    prims = [GroundPlane(2.5), TrackRibbon(0.75, 0.0, 0.0, 0.0, 250.0), VerticalPlane(400.0)]
    ann = []
    if obstacles:
        prims += [
            Box((0.0, 1.6, 100.0), (2.0, 1.8, 3.0)),
            Box((8.0, 1.625, 30.0), (0.6, 1.75, 0.5)),
            Box((0.9, 1.625, 45.0), (0.6, 1.75, 0.5)),
        ]
        ann = [ObjectAnnotation(3, "vehicle", 1, 0.91),
               ObjectAnnotation(4, "person", 2, 0.88),
               ObjectAnnotation(5, "person", 3, 0.84)]
    return SceneSpec(camera, tuple(prims), tuple(ann), default_lidars() if lidars is None else lidars)


@dataclass(frozen=True)
class SequenceSpec:
    scene: SceneSpec
    num_frames: int = 100
    velocities: dict = field(default_factory=dict)  # primitive index -> per-frame displacement
    bias: tuple[BiasSpec, ...] = ()
    fragment_frames: tuple[int, ...] = ()

    def scene_at(self, frame_index: int) -> SceneSpec:
        if not self.velocities:
            return self.scene
        return translated(self.scene, {i: np.asarray(v, float) * frame_index for i, v in self.velocities.items()})

    def to_dict(self):
        return {"scene": self.scene.to_dict(), "num_frames": self.num_frames,
                "velocities": {str(k): list(v) for k, v in self.velocities.items()},
                "bias": [b.to_dict() for b in self.bias], "fragment_frames": list(self.fragment_frames)}

    @classmethod
    def from_dict(cls, d):
        return cls(SceneSpec.from_dict(d["scene"]), int(d.get("num_frames", 100)),
                   {int(k): tuple(v) for k, v in d.get("velocities", {}).items()},
                   tuple(BiasSpec.from_dict(b) for b in d.get("bias", ())),
                   tuple(d.get("fragment_frames", ())))


def default_sequence(num_frames: int = 100, camera: CameraModel | None = None, seed: int = 7,
                     noise_sigma: float = 0.05, fragment_frames=()) -> SequenceSpec:
    """Obstacles approach the camera; the monocular estimate carries a ramp,
    a bowl and per-pixel noise."""
    bias = (BiasSpec("linear", 4.0, "y"), BiasSpec("quadratic", 8.0),
            BiasSpec("constant", 2.0, noise_sigma=noise_sigma, seed=seed))
    return SequenceSpec(default_scene(camera), num_frames,
                        {3: (0.0, 0.0, -0.5), 4: (0.0, 0.0, 0.1), 5: (0.0, 0.0, -0.15)},
                        bias, tuple(fragment_frames))


def fragment_mask(mask: InstanceMask, lo: float = 0.4, hi: float = 0.6) -> InstanceMask:
    """Delete a band of occupied rows so the mask splits into two row-bands."""
    rows = np.flatnonzero(mask.data.any(axis=1))
    if len(rows) < 3:
        return mask
    n = len(rows)
    a, b = rows[0] + int(lo * n), rows[0] + max(int(hi * n), int(lo * n) + 1)
    data = mask.data.copy()
    data[a:b] = False
    return mask.with_data(data)


@dataclass
class OracleFrame:
    frame_index: int
    render: SceneRender
    raw: object
    track: InstanceMask


def make_frame(spec: SequenceSpec, frame_index: int) -> OracleFrame:
    render = render_scene(spec.scene_at(frame_index), frame_index)
    raw = corrupt_monocular(render.depth, spec.bias, frame_index) if spec.bias else render.depth
    track = render.track_mask_amodal
    if frame_index in spec.fragment_frames:
        track = fragment_mask(track)
    return OracleFrame(frame_index, render, raw, track)


def default_config_dict(spec: SequenceSpec, **extra) -> dict:
    d = {"camera": spec.scene.camera.to_dict(),
         "sensors": {l.sensor_id: l.pose.to_dict() for l in spec.scene.lidars},
         "input_dir": ".", "output_dir": "out"}
    d.update(extra)
    return d


def write_frame(frame: OracleFrame, frame_dir: Path) -> None:
    frame_dir.mkdir(parents=True, exist_ok=True)
    r = frame.render
    write_depth_raster(frame.raw, frame_dir / "raw_depth.dmf")
    write_depth_raster(r.depth, frame_dir / "gt_depth.dmf")
    write_mask(frame.track, frame_dir / "track.json")
    visible = [m for m in r.masks if m.area > 0]
    write_detections(frame.frame_index, visible, frame_dir / "detections.json")
    objs = [o.to_dict() for o in r.objects if o.mask.area > 0]
    (frame_dir / "gt_objects.json").write_text(json.dumps({"frame_index": frame.frame_index, "objects": objs}))
    for cloud in r.clouds:
        write_point_cloud(cloud, frame_dir / f"lidar_{cloud.sensor_id}.xyz")


def write_sequence(spec: SequenceSpec, out_dir, **config_extra) -> Path:
    """Render every frame into ``out_dir`` and write a ready-to-run ``config.json``."""
    out = Path(out_dir)
    (out / "frames").mkdir(parents=True, exist_ok=True)
    (out / "sequence.json").write_text(json.dumps(spec.to_dict(), indent=1))
    for f in range(spec.num_frames):
        write_frame(make_frame(spec, f), out / "frames" / f"{f:06d}")
    cfg = default_config_dict(spec, **config_extra)
    (out / "config.json").write_text(json.dumps(cfg, indent=1))
    return out / "config.json"
