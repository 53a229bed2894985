"""Weighted depth losses and evaluation metrics.

Pixel weights are evaluated at the ground-truth depth. Three schemes are
available: ``threshold`` (1 up to ``T``, ``alpha`` beyond), ``linear_decay``
(1 up to ``T``, then linearly down to ``alpha`` at ``d_max``) and
``frequency`` (one weight per 30 m bin, inverse to the bin's pixel share;
the last of the 22 bins covers [630, 655]).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .formats import D_MAX, DepthRaster, FormatError, InstanceMask

N_FREQ_BINS = 22
FREQ_BIN_WIDTH = 30.0
REFERENCE_WIDTH = 2560


@dataclass(frozen=True)
class WeightScheme:
    variant: str = "threshold"
    T: float = 200.0
    alpha: float = 0.1
    d_max: float = D_MAX
    frequency_weights: tuple[float, ...] = ()

    def __post_init__(self):
        if self.variant not in ("threshold", "linear_decay", "frequency"):
            raise ValueError(f"unknown weighting variant {self.variant!r}")
        if not (0 < self.alpha <= 1) or not (0 < self.T < self.d_max):
            raise ValueError("need 0 < alpha <= 1 and 0 < T < d_max")
        if self.variant == "frequency":
            if len(self.frequency_weights) != N_FREQ_BINS or min(self.frequency_weights) <= 0:
                raise ValueError(f"frequency scheme needs {N_FREQ_BINS} positive weights")


def frequency_bin(d):
    return np.minimum(np.floor(np.asarray(d, dtype=np.float64) / FREQ_BIN_WIDTH), N_FREQ_BINS - 1).astype(np.int64)


def pixel_weights(d: np.ndarray, scheme: WeightScheme) -> np.ndarray:
    d = np.asarray(d, dtype=np.float64)
    if np.any(d < 0) or np.any(d > scheme.d_max):
        raise ValueError(f"depth outside [0, {scheme.d_max}]")
    if scheme.variant == "threshold":
        return np.where(d <= scheme.T, 1.0, scheme.alpha)
    if scheme.variant == "linear_decay":
        ramp = 1.0 - (1.0 - scheme.alpha) * (d - scheme.T) / (scheme.d_max - scheme.T)
        return np.where(d <= scheme.T, 1.0, ramp)
    return np.asarray(scheme.frequency_weights, dtype=np.float64)[frequency_bin(d)]


def pixel_weight(d: float, scheme: WeightScheme) -> float:
    return float(pixel_weights(np.array([d]), scheme)[0])


def bin_counts(rasters: Iterable[DepthRaster]) -> np.ndarray:
    counts = np.zeros(N_FREQ_BINS, dtype=np.int64)
    for r in rasters:
        v = r.values[r.valid]
        counts += np.bincount(frequency_bin(v), minlength=N_FREQ_BINS)
    return counts


def frequency_weights(counts: Sequence[int]) -> tuple[float, ...]:
    """Weights inversely proportional to pooled pixel counts, scaled so the
    most populated bin gets 1. Empty bins take the largest finite weight."""
    c = np.asarray(counts, dtype=np.float64)
    if c.sum() <= 0:
        raise ValueError("no valid pixels to compute bin frequencies")
    w = np.zeros_like(c)
    nz = c > 0
    w[nz] = c.max() / c[nz]
    w[~nz] = w[nz].max()
    return tuple(float(x) for x in w)


def _pair(pred: DepthRaster, gt: DepthRaster):
    if pred.values.shape != gt.values.shape:
        raise FormatError(f"raster size mismatch: {pred.values.shape} vs {gt.values.shape}")
    ok = pred.valid & gt.valid
    return pred.values[ok], gt.values[ok]


def weighted_mse(pred: DepthRaster, gt: DepthRaster, scheme: WeightScheme) -> float:
    p, g = _pair(pred, gt)
    if len(g) == 0:
        raise ValueError("weighted_mse: no pixel is valid in both rasters")
    w = pixel_weights(g, scheme)
    return float(np.sum(w * (p - g) ** 2) / len(g))


def mae_ranges(pred: DepthRaster, gt: DepthRaster,
               ranges: Sequence[tuple[float, float]] = ((0, 200), (200, 300), (300, D_MAX))
               ) -> dict[tuple[float, float], float]:
    """MAE per ground-truth depth range ``[lo, hi)``; the last range also includes ``hi``.
    Empty ranges are left out of the result."""
    p, g = _pair(pred, gt)
    err = np.abs(p - g)
    out = {}
    for i, (lo, hi) in enumerate(ranges):
        sel = (g >= lo) & ((g <= hi) if i == len(ranges) - 1 else (g < hi))
        if sel.any():
            out[(lo, hi)] = float(err[sel].mean())
    return out


def mask_iou(a: np.ndarray, b: np.ndarray) -> float:
    union = np.count_nonzero(a | b)
    return np.count_nonzero(a & b) / union if union else 0.0


def iou_matrix(pred: Sequence[InstanceMask], gt: Sequence[InstanceMask]) -> np.ndarray:
    if not pred or not gt:
        return np.zeros((len(pred), len(gt)))
    shapes = {m.data.shape for m in (*pred, *gt)}
    if len(shapes) != 1:
        raise FormatError(f"match: masks have differing sizes {sorted(shapes)}")
    P = np.stack([m.data.reshape(-1) for m in pred]).astype(np.float64)
    G = np.stack([m.data.reshape(-1) for m in gt]).astype(np.float64)
    inter = P @ G.T
    union = P.sum(1)[:, None] + G.sum(1)[None, :] - inter
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(union > 0, inter / union, 0.0)


@dataclass
class MatchResult:
    pairs: list[tuple[int, int, float]]  # (pred index, gt index, IoU)
    n_pred: int
    n_gt: int
    per_class: dict[str, dict] = field(default_factory=dict)

    @property
    def tpr(self) -> float | None:
        return len(self.pairs) / self.n_gt if self.n_gt else None

    @property
    def mean_iou(self) -> float | None:
        return float(np.mean([p[2] for p in self.pairs])) if self.pairs else None

    @property
    def miou(self) -> float | None:
        vals = [c["mean_iou"] for c in self.per_class.values() if c["mean_iou"] is not None]
        return float(np.mean(vals)) if vals else None


def match_detections(pred: Sequence[InstanceMask], gt: Sequence[InstanceMask],
                     iou_threshold: float = 0.5) -> MatchResult:
    """Greedy one-to-one matching in descending IoU order.

    Ties prefer the smaller prediction index, then the smaller gt index.
    Pairs with IoU below the threshold are never matched.
    """
    iou = iou_matrix(pred, gt)
    cand = [(-iou[i, j], i, j) for i in range(len(pred)) for j in range(len(gt)) if iou[i, j] >= iou_threshold]
    cand.sort()
    used_p, used_g, pairs = set(), set(), []
    for neg, i, j in cand:
        if i in used_p or j in used_g:
            continue
        used_p.add(i)
        used_g.add(j)
        pairs.append((i, j, -neg))
    pairs.sort(key=lambda t: t[1])
    per_class: dict[str, dict] = {}
    for j, g in enumerate(gt):
        c = per_class.setdefault(g.class_label, {"n_gt": 0, "matched": 0, "ious": []})
        c["n_gt"] += 1
    for i, j, v in pairs:
        c = per_class[gt[j].class_label]
        c["matched"] += 1
        c["ious"].append(v)
    for c in per_class.values():
        c["tpr"] = c["matched"] / c["n_gt"]
        c["mean_iou"] = float(np.mean(c.pop("ious"))) if c["matched"] else None
    return MatchResult(pairs, len(pred), len(gt), per_class)


@dataclass(frozen=True)
class EvalFilter:
    min_visible_fraction: float = 0.75
    min_area_px: float = 1200.0
    max_range_m: float = 200.0
    require_in_danger_area: bool = True
    reference_width: int = REFERENCE_WIDTH

    def __post_init__(self):
        if not 0 <= self.min_visible_fraction <= 1:
            raise ValueError("min_visible_fraction must lie in [0, 1]")
        if self.min_area_px <= 0 or self.max_range_m <= 0:
            raise ValueError("thresholds must be positive")

    def area_threshold(self, image_width: int) -> float:
        return self.min_area_px * (image_width / self.reference_width) ** 2


def passes_eval_filter(obj, flt: EvalFilter, expanded_track: InstanceMask | None = None) -> bool:
    """``obj`` needs ``mask``, ``distance_m``, ``visible_fraction`` and optionally ``in_danger_area``."""
    m = obj.mask
    if not obj.visible_fraction > flt.min_visible_fraction:
        return False
    if not m.area > flt.area_threshold(m.width):
        return False
    if obj.distance_m is None or not obj.distance_m <= flt.max_range_m:
        return False
    if flt.require_in_danger_area:
        inside = obj.in_danger_area
        if inside is None:
            if expanded_track is None:
                raise ValueError("danger-area test needs a flag on the object or the expanded track")
            inside = bool(np.any(m.data & expanded_track.data))
        if not inside:
            return False
    return True


def apply_eval_filter(objects, flt: EvalFilter, expanded_track: InstanceMask | None = None) -> list:
    return [o for o in objects if passes_eval_filter(o, flt, expanded_track)]

