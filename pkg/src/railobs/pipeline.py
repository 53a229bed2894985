"""Per-frame orchestration, sequence runs and evaluation.

A sequence directory holds one sub-directory per frame under ``frames/``::

    frames/000000/raw_depth.dmf      monocular depth (DMF1)
    frames/000000/track.json         track segmentation mask
    frames/000000/detections.json    detected object masks
    frames/000000/lidar_<id>.xyz     one cloud per configured sensor
    frames/000000/gt_depth.dmf       optional ground-truth depth
    frames/000000/gt_objects.json    optional ground-truth objects
    frames/000000/image.ppm          optional camera image

Frames are processed strictly in index order because the track-mask
fallback and the temporal filters carry state from frame to frame.
Within a frame the LiDAR branch (projection, fusion) and the track-mask
branch run side by side and are joined before any distance is estimated.
"""

from __future__ import annotations

import json
import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .distance import EstimatorParams, estimate_object_distance
from .formats import (ESTIMATORS, CameraModel, DepthRaster, DistanceRecord, FormatError, FrameBundle,
                      InstanceMask, RigidPose, SparseDepthMap, read_depth_raster, read_detections,
                      read_mask, read_point_cloud)
from .fusion import refine_with_lidar
from .geometry import merge_sparse_maps, project_point_cloud
from .lidar_sim import DegradationParams, degrade_cloud
from .metrics import EvalFilter, apply_eval_filter, mae_ranges, match_detections
from .roi import TrackMaskState, discriminate_obstacle, expand_track_mask, validate_track_mask
from .scene import GroundTruthObject
from .tracking import WINDOW_SIZES, TemporalFilter

log = logging.getLogger(__name__)

OUTPUT_ENV = "RAILOBS_OUTPUT_DIR"
STAGE_SETTINGS = ("sparse_only", "raw_only", "raw_sparse", "refined")
STAGES = ("ingest", "project", "fuse", "roi", "estimate", "filter", "emit")
_NEEDS = {
    "sparse_mode": {"sparse"},
    "dense_mode_raw": {"raw"}, "mean_k_raw": {"raw"},
    "dense_mode_refined": {"refined"}, "mean_k_refined": {"refined"},
}
_PROVIDES = {
    "sparse_only": {"sparse"}, "raw_only": {"raw"},
    "raw_sparse": {"raw", "sparse"}, "refined": {"raw", "sparse", "refined"},
}


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class PipelineConfig:
    camera: CameraModel
    sensors: dict[str, RigidPose] = field(default_factory=dict)
    expansion: float = 0.25
    track_min_area_fraction: float = 0.5
    track_horizon: int = 30
    estimators: tuple[str, ...] = ESTIMATORS
    bin_width: float = 0.5
    k_percent: float = 20.0
    adaptive_k: bool = False
    sparse_fallback: bool = True
    window: int = 1
    weight_scheme: str = "linear"
    staleness: int | None = None
    window_sizes: tuple[int, ...] = WINDOW_SIZES
    degradation: DegradationParams | None = None
    eval_filter: EvalFilter = EvalFilter()
    stages: str = "refined"
    input_dir: Path | None = None
    output_dir: Path | None = None
    annotate: bool = True
    parallel: bool = True

    def __post_init__(self):
        if self.stages not in STAGE_SETTINGS:
            raise ConfigError(f"stages must be one of {STAGE_SETTINGS}, got {self.stages!r}")
        bad = [e for e in self.estimators if e not in ESTIMATORS]
        if bad:
            raise ConfigError(f"unknown estimators {bad}")
        if self.expansion < 0:
            raise ConfigError("expansion must be >= 0")
        if self.bin_width <= 0 or not 0 < self.k_percent <= 100:
            raise ConfigError("bin_width must be > 0 and k_percent in (0, 100]")
        if self.window < 1 or any(w < 1 for w in self.window_sizes):
            raise ConfigError("window sizes must be >= 1")
        if self.weight_scheme not in ("linear", "exponential"):
            raise ConfigError(f"unknown weight scheme {self.weight_scheme!r}")
        object.__setattr__(self, "estimators", tuple(self.estimators))
        object.__setattr__(self, "window_sizes", tuple(self.window_sizes))

    @property
    def active_estimators(self) -> tuple[str, ...]:
        have = _PROVIDES[self.stages]
        return tuple(e for e in self.estimators if _NEEDS[e] <= have)

    @property
    def needs_lidar(self) -> bool:
        return "sparse" in _PROVIDES[self.stages]

    @property
    def needs_raw(self) -> bool:
        return "raw" in _PROVIDES[self.stages]

    @property
    def estimator_params(self) -> EstimatorParams:
        return EstimatorParams(self.bin_width, self.k_percent, self.adaptive_k, self.sparse_fallback)

    def resolved_output_dir(self) -> Path | None:
        env = os.environ.get(OUTPUT_ENV)
        return Path(env) if env else self.output_dir

    def to_dict(self) -> dict:
        d = {}
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name == "camera":
                v = v.to_dict()
            elif f.name == "sensors":
                v = {k: p.to_dict() for k, p in v.items()}
            elif f.name == "degradation":
                v = v.to_dict() if v is not None else None
            elif f.name == "eval_filter":
                v = {g.name: getattr(v, g.name) for g in fields(v)}
            elif isinstance(v, Path):
                v = str(v)
            elif isinstance(v, tuple):
                v = list(v)
            d[f.name] = v
        return d

    @classmethod
    def from_dict(cls, d: dict, base_dir: Path | None = None) -> "PipelineConfig":
        d = dict(d)
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}")
        try:
            d["camera"] = CameraModel.from_dict(d["camera"])
            d["sensors"] = {k: RigidPose.from_dict(v) for k, v in d.get("sensors", {}).items()}
            if d.get("degradation") is not None:
                d["degradation"] = DegradationParams.from_dict(d["degradation"])
            if "eval_filter" in d:
                d["eval_filter"] = EvalFilter(**d["eval_filter"])
            for key in ("input_dir", "output_dir"):
                if d.get(key) is not None:
                    p = Path(d[key])
                    d[key] = p if p.is_absolute() or base_dir is None else base_dir / p
            return cls(**d)
        except ConfigError:
            raise
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"invalid config: {exc}") from exc


def load_config(path, **overrides) -> PipelineConfig:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    doc.update({k: v for k, v in overrides.items() if v is not None})
    return PipelineConfig.from_dict(doc, base_dir=path.parent)


# -- per-frame processing ---------------------------------------------------------

@dataclass
class PipelineState:
    """Frame-to-frame state; advanced by exactly one caller, in frame order."""

    track: TrackMaskState = field(default_factory=TrackMaskState)
    filters: dict[str, TemporalFilter] = field(default_factory=dict)

    @classmethod
    def for_config(cls, config: PipelineConfig) -> "PipelineState":
        return cls(TrackMaskState(min_area_fraction=config.track_min_area_fraction,
                                  horizon=config.track_horizon),
                   {e: TemporalFilter(config.window, config.staleness, config.weight_scheme)
                    for e in config.active_estimators})


@dataclass
class FrameResult:
    frame_index: int
    records: list[DistanceRecord]
    used_fallback: bool
    durations_us: dict[str, int]
    expanded_track: InstanceMask | None = None
    sparse: SparseDepthMap | None = None
    refined: DepthRaster | None = None

    def to_dict(self) -> dict:
        return {"frame_index": self.frame_index, "used_fallback": self.used_fallback,
                "durations_us": self.durations_us, "records": [r.to_dict() for r in self.records]}


def _timed(durations, name, fn, *args):
    t0 = time.perf_counter_ns()
    out = fn(*args)
    durations[name] = durations.get(name, 0) + (time.perf_counter_ns() - t0) // 1000
    return out


def _depth_branch(bundle: FrameBundle, config: PipelineConfig, durations: dict):
    sparse = refined = None

    def project():
        maps = []
        for cloud, pose in bundle.clouds:
            if config.degradation is not None:
                cloud = degrade_cloud(cloud, config.degradation, bundle.frame_index)
            maps.append(project_point_cloud(cloud, pose, config.camera))
        return merge_sparse_maps(maps) if maps else SparseDepthMap.empty(bundle.width, bundle.height)

    if config.needs_lidar:
        sparse = _timed(durations, "project", project)
    if config.stages == "refined" and bundle.raw_depth is not None:
        refined = _timed(durations, "fuse", lambda: refine_with_lidar(bundle.raw_depth, sparse)[0])
    return sparse, refined


def _roi_branch(bundle: FrameBundle, config: PipelineConfig, state: PipelineState, durations: dict):
    def roi():
        chosen, new_state, fallback = validate_track_mask(bundle.track_mask, state.track, bundle.frame_index)
        return expand_track_mask(chosen, config.expansion), new_state, fallback
    return _timed(durations, "roi", roi)


def process_frame(bundle: FrameBundle, config: PipelineConfig, state: PipelineState,
                  executor: ThreadPoolExecutor | None = None) -> tuple[FrameResult, PipelineState]:
    """Run every enabled stage for one frame. ``state`` is updated in place and returned."""
    if (bundle.width, bundle.height) != (config.camera.width, config.camera.height):
        raise FormatError(f"frame {bundle.frame_index}: size {bundle.width}x{bundle.height} "
                          f"does not match camera {config.camera.width}x{config.camera.height}")
    if config.needs_raw and bundle.raw_depth is None:
        raise FormatError(f"frame {bundle.frame_index}: raw depth required by stages={config.stages}")
    d_depth: dict[str, int] = {}
    d_roi: dict[str, int] = {}
    if executor is not None:
        fut_depth = executor.submit(_depth_branch, bundle, config, d_depth)
        fut_roi = executor.submit(_roi_branch, bundle, config, state, d_roi)
        (sparse, refined), (expanded, track_state, fallback) = fut_depth.result(), fut_roi.result()
    else:
        sparse, refined = _depth_branch(bundle, config, d_depth)
        expanded, track_state, fallback = _roi_branch(bundle, config, state, d_roi)
    # barrier: both branches are complete past this point
    durations = {s: 0 for s in STAGES}
    durations.update(d_depth)
    durations.update(d_roi)
    state.track = track_state

    params = config.estimator_params

    def estimate():
        out = []
        for i, det in enumerate(bundle.detections):
            flag = discriminate_obstacle(det, expanded)
            for est in config.active_estimators:
                out.append(estimate_object_distance(det, sparse, bundle.raw_depth, refined, est, params,
                                                    frame_index=bundle.frame_index, object_index=i,
                                                    is_obstacle=flag))
        return out

    records = _timed(durations, "estimate", estimate)

    def filt():
        out = []
        for r in records:
            f = state.filters.setdefault(
                r.estimator, TemporalFilter(config.window, config.staleness, config.weight_scheme))
            try:
                filtered = f.update(r.track_id, r.frame_index, r.distance_m)
                out.append(replace(r, filtered_distance_m=filtered))
            except ValueError as exc:
                out.append(replace(r, reason=str(exc)))
        for f in state.filters.values():
            f.prune(bundle.frame_index + 1)
        return out

    records = _timed(durations, "filter", filt)
    return FrameResult(bundle.frame_index, records, fallback, durations, expanded, sparse, refined), state


# -- sequence I/O -----------------------------------------------------------------

def frame_dirs(input_dir: Path) -> list[Path]:
    root = Path(input_dir) / "frames"
    if not root.is_dir():
        raise ConfigError(f"no frames/ directory under {input_dir}")
    return sorted(p for p in root.iterdir() if p.is_dir())


def load_frame(frame_dir: Path, config: PipelineConfig) -> FrameBundle:
    frame_dir = Path(frame_dir)
    index = int(frame_dir.name)
    raw = read_depth_raster(frame_dir / "raw_depth.dmf") if config.needs_raw else None
    track = read_mask(frame_dir / "track.json")
    _, dets = read_detections(frame_dir / "detections.json")
    clouds = []
    if config.needs_lidar:
        for sensor, pose in config.sensors.items():
            clouds.append((read_point_cloud(frame_dir / f"lidar_{sensor}.xyz"), pose))
    image = frame_dir / "image.ppm"
    return FrameBundle(index, raw, track, tuple(dets), tuple(clouds), image if image.exists() else None)


def load_ground_truth(frame_dir: Path) -> list[GroundTruthObject] | None:
    p = Path(frame_dir) / "gt_objects.json"
    if not p.exists():
        return None
    doc = json.loads(p.read_text())
    return [GroundTruthObject.from_dict(o) for o in doc["objects"]]


@dataclass
class FrameEval:
    frame_index: int
    detections: list[InstanceMask]
    gt_objects: list[GroundTruthObject] | None
    expanded_track: InstanceMask | None
    records: list[DistanceRecord]


def _range_key(r) -> str:
    return f"{r[0]:g}-{r[1]:g}"


def evaluate(frames: Sequence[FrameEval], config: PipelineConfig,
             estimators: Sequence[str] | None = None) -> dict:
    """Detection metrics over filtered ground truth and a distance MAE table
    (estimator x tracking window) over matched, filtered ground-truth objects."""
    estimators = list(estimators or config.active_estimators)
    frames = sorted(frames, key=lambda f: f.frame_index)
    per_class: dict[str, dict] = {}
    matches = {}
    for fe in frames:
        if fe.gt_objects is None:
            continue
        kept = apply_eval_filter(fe.gt_objects, config.eval_filter, fe.expanded_track)
        m = match_detections(fe.detections, [g.mask for g in kept])
        matches[fe.frame_index] = {i: kept[j] for i, j, _ in m.pairs}
        for cls, c in m.per_class.items():
            agg = per_class.setdefault(cls, {"n_gt": 0, "matched": 0, "iou_sum": 0.0})
            agg["n_gt"] += c["n_gt"]
            agg["matched"] += c["matched"]
            if c["mean_iou"] is not None:
                agg["iou_sum"] += c["mean_iou"] * c["matched"]
    detection = {}
    for cls, agg in sorted(per_class.items()):
        detection[cls] = {"n_gt": agg["n_gt"], "tpr": agg["matched"] / agg["n_gt"] if agg["n_gt"] else None,
                          "mean_iou": agg["iou_sum"] / agg["matched"] if agg["matched"] else None}
    total_gt = sum(a["n_gt"] for a in per_class.values())
    total_matched = sum(a["matched"] for a in per_class.values())
    ious = [d["mean_iou"] for d in detection.values() if d["mean_iou"] is not None]

    table: dict[str, dict[str, dict]] = {}
    for est in estimators:
        row = {}
        for w in config.window_sizes:
            flt = TemporalFilter(w, config.staleness, config.weight_scheme)
            errs = []
            for fe in frames:
                matched = matches.get(fe.frame_index, {})
                for r in sorted((r for r in fe.records if r.estimator == est), key=lambda r: r.object_index):
                    try:
                        f = flt.update(r.track_id, fe.frame_index, r.distance_m)
                    except ValueError:
                        f = r.distance_m
                    g = matched.get(r.object_index)
                    if g is not None and f is not None and g.distance_m is not None:
                        errs.append(abs(f - g.distance_m))
                flt.prune(fe.frame_index + 1)
            row[str(w)] = {"mae": float(np.mean(errs)) if errs else None, "n": len(errs)}
        table[est] = row
    return {
        "frames": len(frames),
        "detection": {"per_class": detection,
                      "tpr": total_matched / total_gt if total_gt else None,
                      "miou": float(np.mean(ious)) if ious else None},
        "distance_mae": table,
        "window_sizes": list(config.window_sizes),
    }


def format_table(summary: dict) -> str:
    ws = summary["window_sizes"]
    lines = ["estimator            " + "".join(f"{'W=' + str(w):>10}" for w in ws)]
    for est, row in summary["distance_mae"].items():
        cells = "".join(f"{row[str(w)]['mae']:>10.3f}" if row[str(w)]["mae"] is not None else f"{'-':>10}"
                        for w in ws)
        lines.append(f"{est:<21}{cells}")
    det = summary["detection"]
    lines.append("")
    for cls, d in det["per_class"].items():
        tpr = "-" if d["tpr"] is None else f"{100 * d['tpr']:.1f}%"
        iou = "-" if d["mean_iou"] is None else f"{d['mean_iou']:.3f}"
        lines.append(f"{cls:<10} n_gt={d['n_gt']:<6} TPR={tpr:<8} IoU={iou}")
    return "\n".join(lines) + "\n"


def write_json(path: Path, doc) -> None:
    Path(path).write_text(json.dumps(doc, indent=1, sort_keys=True))


def run_sequence(config: PipelineConfig, frame_limit: int | None = None,
                 write_outputs: bool = True) -> tuple[dict, list[FrameResult]]:
    """Process every frame in order, evaluate against ground truth where present
    and write records, annotated frames and ``summary.json``."""
    from .annotate import annotate_frame, write_ppm

    if config.input_dir is None:
        raise ConfigError("config.input_dir is required")
    out_dir = config.resolved_output_dir() if write_outputs else None
    if out_dir is not None:
        (out_dir / "records").mkdir(parents=True, exist_ok=True)
        if config.annotate:
            (out_dir / "annotated").mkdir(parents=True, exist_ok=True)
    dirs = frame_dirs(config.input_dir)[:frame_limit]
    state = PipelineState.for_config(config)
    results, evals, skipped = [], [], []
    depth_err: dict[str, dict[str, list[float]]] = {"raw": {}, "refined": {}}
    executor = ThreadPoolExecutor(max_workers=2) if config.parallel else None
    try:
        for fdir in dirs:
            t0 = time.perf_counter_ns()
            try:
                bundle = load_frame(fdir, config)
            except FileNotFoundError as exc:
                log.warning("skipping frame %s: %s", fdir.name, exc)
                skipped.append({"frame": fdir.name, "reason": str(exc)})
                continue
            ingest_us = (time.perf_counter_ns() - t0) // 1000
            result, state = process_frame(bundle, config, state, executor)
            result.durations_us["ingest"] = ingest_us
            t_emit = time.perf_counter_ns()
            if out_dir is not None:
                write_json(out_dir / "records" / f"{bundle.frame_index:06d}.json", result.to_dict())
                if config.annotate:
                    ppm, sidecar = annotate_frame(bundle, result.records, result.expanded_track)
                    write_ppm(out_dir / "annotated" / f"{bundle.frame_index:06d}.ppm", ppm)
                    write_json(out_dir / "annotated" / f"{bundle.frame_index:06d}.json", sidecar)
            gt_path = fdir / "gt_depth.dmf"
            if gt_path.exists() and bundle.raw_depth is not None:
                gt = read_depth_raster(gt_path)
                for name, pred in (("raw", bundle.raw_depth), ("refined", result.refined)):
                    if pred is None:
                        continue
                    _accumulate_depth_error(depth_err[name], pred, gt)
            result.durations_us["emit"] += (time.perf_counter_ns() - t_emit) // 1000
            result.durations_us["total"] = (time.perf_counter_ns() - t0) // 1000
            results.append(result)
            evals.append(FrameEval(bundle.frame_index, list(bundle.detections), load_ground_truth(fdir),
                                   result.expanded_track, result.records))
    finally:
        if executor is not None:
            executor.shutdown()
    summary = evaluate(evals, config)
    summary["skipped_frames"] = skipped
    summary["fallback_frames"] = [r.frame_index for r in results if r.used_fallback]
    summary["stages"] = config.stages
    summary["depth_mae"] = {name: {k: float(np.sum(v[0]) / v[1]) for k, v in acc.items() if v[1]}
                            for name, acc in depth_err.items() if acc}
    if out_dir is not None:
        write_json(out_dir / "summary.json", summary)
        (out_dir / "summary.txt").write_text(format_table(summary))
    return summary, results


DEPTH_RANGES = ((0.0, 200.0), (200.0, 300.0), (300.0, 655.0))


def _accumulate_depth_error(acc: dict, pred: DepthRaster, gt: DepthRaster) -> None:
    counts = {}
    ok = pred.valid & gt.valid
    g = gt.values[ok]
    for i, r in enumerate(DEPTH_RANGES):
        sel = (g >= r[0]) & ((g <= r[1]) if i == len(DEPTH_RANGES) - 1 else (g < r[1]))
        counts[r] = int(sel.sum())
    for r, mae in mae_ranges(pred, gt, DEPTH_RANGES).items():
        slot = acc.setdefault(_range_key(r), [0.0, 0])
        slot[0] += mae * counts[r]
        slot[1] += counts[r]


def load_stored_records(records_dir: Path) -> dict[int, list[DistanceRecord]]:
    out = {}
    for p in sorted(Path(records_dir).glob("*.json")):
        doc = json.loads(p.read_text())
        out[doc["frame_index"]] = [DistanceRecord.from_dict(r) for r in doc["records"]]
    return out


def evaluate_stored(config: PipelineConfig, records_dir: Path) -> dict:
    """Re-run evaluation from records written by ``run_sequence``; the danger
    area is rebuilt from the stored track masks."""
    stored = load_stored_records(records_dir)
    state = TrackMaskState(min_area_fraction=config.track_min_area_fraction, horizon=config.track_horizon)
    evals = []
    ests = set()
    for fdir in frame_dirs(config.input_dir):
        idx = int(fdir.name)
        if idx not in stored:
            continue
        track = read_mask(fdir / "track.json")
        chosen, state, _ = validate_track_mask(track, state, idx)
        _, dets = read_detections(fdir / "detections.json")
        ests.update(r.estimator for r in stored[idx])
        evals.append(FrameEval(idx, dets, load_ground_truth(fdir), expand_track_mask(chosen, config.expansion),
                               stored[idx]))
    order = [e for e in ESTIMATORS if e in ests]
    return evaluate(evals, config, order)
