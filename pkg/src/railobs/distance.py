"""Per-object distance from depth values under a segmentation mask."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .formats import DepthRaster, DistanceRecord, FormatError, InstanceMask, SparseDepthMap

DEFAULT_BIN_WIDTH = 0.5
DEFAULT_K_PERCENT = 20.0


class NoDepthSupport(ValueError):
    """No usable depth value lies under the object mask."""


@dataclass(frozen=True)
class MaskDepthSample:
    depths: np.ndarray
    source: str

    def __len__(self) -> int:
        return len(self.depths)


def collect_mask_depths(mask: InstanceMask, source: SparseDepthMap | DepthRaster) -> MaskDepthSample:
    if isinstance(source, SparseDepthMap):
        if (source.width, source.height) != (mask.width, mask.height):
            raise FormatError("collect: sparse map and mask sizes differ")
        hit = mask.data[source.ys, source.xs]
        return MaskDepthSample(source.depths[hit], "sparse")
    if source.values.shape != mask.data.shape:
        raise FormatError("collect: raster and mask sizes differ")
    vals = source.values[mask.data]
    return MaskDepthSample(vals[~np.isnan(vals)], "dense")


def _values(sample) -> np.ndarray:
    d = sample.depths if isinstance(sample, MaskDepthSample) else np.asarray(sample, dtype=np.float64)
    if len(d) == 0:
        raise NoDepthSupport("no depth support under the mask")
    return np.asarray(d, dtype=np.float64)


def estimate_mode(sample, bin_width: float = DEFAULT_BIN_WIDTH) -> float:
    """Mean of the values in the most populated ``bin_width`` histogram bin.

    Bins are ``[k*bin_width, (k+1)*bin_width)``; ties go to the nearer bin.
    """
    if bin_width <= 0:
        raise ValueError("bin_width must be positive")
    d = _values(sample)
    bins = np.floor(d / bin_width).astype(np.int64)
    uniq, counts = np.unique(bins, return_counts=True)
    best = uniq[np.argmax(counts)]  # unique is sorted and argmax takes the first maximum
    return float(d[bins == best].mean())


def k_count(n: int, k_percent: float) -> int:
    # rounding guards against 0.07 * 100 == 7.000000000000001
    return max(1, min(n, math.ceil(round(k_percent * n / 100.0, 9))))


def mean_k_smallest(sample, k_percent: float = DEFAULT_K_PERCENT) -> float:
    if not 0 < k_percent <= 100:
        raise ValueError("k_percent must lie in (0, 100]")
    d = _values(sample)
    m = k_count(len(d), k_percent)
    return float(np.partition(d, m - 1)[:m].mean())


def size_adaptive_k(mask_area: int, lo: float = 5.0, hi: float = 50.0) -> float:
    """Mask-size rule for k: ``clamp(2000 / area * 100, 5, 50)`` percent."""
    if mask_area <= 0:
        return hi
    return float(min(hi, max(lo, 2000.0 / mask_area * 100.0)))


@dataclass(frozen=True)
class EstimatorParams:
    bin_width: float = DEFAULT_BIN_WIDTH
    k_percent: float = DEFAULT_K_PERCENT
    adaptive_k: bool = False
    sparse_fallback: bool = True


def estimate_distance(mask: InstanceMask, strategy: str, sparse: SparseDepthMap | None,
                      raw: DepthRaster | None, refined: DepthRaster | None,
                      params: EstimatorParams = EstimatorParams()) -> tuple[float | None, str | None]:
    """Distance in meters for one strategy, or ``(None, reason)``."""
    k = size_adaptive_k(mask.area) if params.adaptive_k else params.k_percent
    sources = {"sparse_mode": sparse, "dense_mode_raw": raw, "dense_mode_refined": refined,
               "mean_k_raw": raw, "mean_k_refined": refined}
    if strategy not in sources:
        raise ValueError(f"unknown estimator {strategy!r}")
    src = sources[strategy]
    if src is None:
        return None, f"{strategy}: depth source not enabled"
    sample = collect_mask_depths(mask, src)
    if len(sample) == 0:
        if strategy == "sparse_mode" and params.sparse_fallback and refined is not None:
            return estimate_distance(mask, "dense_mode_refined", sparse, raw, refined, params)
        return None, f"{strategy}: no depth support under the mask"
    if strategy.startswith("mean_k"):
        return mean_k_smallest(sample, k), None
    return estimate_mode(sample, params.bin_width), None


def estimate_object_distance(obj: InstanceMask, sparse: SparseDepthMap | None, raw: DepthRaster | None,
                             refined: DepthRaster | None, strategy: str,
                             params: EstimatorParams = EstimatorParams(), *, frame_index: int = 0,
                             object_index: int = 0, is_obstacle: bool = False) -> DistanceRecord:
    dist, reason = estimate_distance(obj, strategy, sparse, raw, refined, params)
    return DistanceRecord(frame_index, object_index, obj.track_id, obj.class_label, float(obj.score),
                          strategy, dist, dist, is_obstacle, reason)
