"""Range-dependent LiDAR noise and dropout.

Each point at range ``r`` (from the sensor origin) survives with
probability ``1 - min(drop_max, drop0 + drop1 * r)`` and is shifted along
its ray by Gaussian noise of standard deviation ``sigma0 + sigma1 * r``.

Random draws come from Philox streams keyed by ``(base_seed, frame_index)``.
Point ``i`` always consumes element ``i`` of the keep and noise streams, so
the result for a point depends only on the seed, the frame and its index.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .formats import PointCloud


@dataclass(frozen=True)
class DegradationParams:
    sigma0: float = 0.02
    sigma1: float = 0.0005
    drop0: float = 0.02
    drop1: float = 0.002
    drop_max: float = 0.8
    base_seed: int = 0

    def __post_init__(self):
        if self.sigma0 < 0 or self.sigma1 < 0:
            raise ValueError("noise sigmas must be non-negative")
        if not (0 <= self.drop0 <= 1 and 0 <= self.drop_max <= 1) or self.drop1 < 0:
            raise ValueError("dropout parameters out of range")

    def sigma(self, r):
        return self.sigma0 + self.sigma1 * np.asarray(r, dtype=np.float64)

    def drop_probability(self, r):
        return np.minimum(self.drop_max, self.drop0 + self.drop1 * np.asarray(r, dtype=np.float64))

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "DegradationParams":
        return cls(**d)


def _stream(base_seed: int, frame_index: int, stream: int) -> np.random.Generator:
    ss = np.random.SeedSequence([base_seed & (2**64 - 1), int(frame_index), stream])
    return np.random.Generator(np.random.Philox(ss))


def draw_perturbations(n: int, params: DegradationParams, frame_index: int):
    """Uniform keep draws and standard-normal noise draws for ``n`` points."""
    u = _stream(params.base_seed, frame_index, 0).random(n)
    z = _stream(params.base_seed, frame_index, 1).standard_normal(n)
    return u, z


def degrade_cloud(cloud: PointCloud, params: DegradationParams, frame_index: int | None = None,
                  return_noise: bool = False):
    """Apply dropout and radial noise. With ``return_noise`` also return
    ``(kept_index, applied_noise)`` for the surviving points."""
    if frame_index is None:
        frame_index = cloud.frame_index
    pts = cloud.points
    n = len(pts)
    u, z = draw_perturbations(n, params, frame_index)
    r = np.linalg.norm(pts, axis=1)
    keep = u >= params.drop_probability(r)
    if params.sigma0 == 0 and params.sigma1 == 0:
        noise = np.zeros(n)
        out = pts[keep].copy()
    else:
        noise = z * params.sigma(r)
        # a draw that would push a point through the sensor origin drops it
        keep &= (r > 0) & (r + noise > 0)
        scale = (r + noise) / np.where(r > 0, r, 1.0)
        out = pts[keep] * scale[keep, None]
    result = PointCloud(out, cloud.frame_index, cloud.sensor_id)
    if return_noise:
        idx = np.flatnonzero(keep)
        return result, idx, noise[keep]
    return result
