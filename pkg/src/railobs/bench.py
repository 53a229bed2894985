"""Per-stage latency study across stage settings.

Each setting (raw only, raw + LiDAR, raw + LiDAR + refinement) replays the
same sequence ``repetitions`` times. The first frame of every setting is a
warm-up and is dropped before statistics are taken.
"""

from __future__ import annotations

import csv
import io
import time
from dataclasses import replace
from typing import Sequence

import numpy as np

from .fusion import interpolate_residuals
from .pipeline import STAGES, PipelineConfig, run_sequence

BENCH_SETTINGS = ("raw_only", "raw_sparse", "refined")
PERCENTILES = (5, 25, 50, 75, 95)


def _stats(samples: Sequence[float], bins: int = 20) -> dict:
    a = np.asarray(samples, dtype=np.float64)
    counts, edges = np.histogram(a, bins=bins)
    return {"n": int(a.size), "mean_us": float(a.mean()),
            "percentiles_us": {str(p): float(np.percentile(a, p)) for p in PERCENTILES},
            "histogram": {"counts": counts.tolist(), "edges_us": edges.tolist()}}


def bench(config: PipelineConfig, repetitions: int = 3, settings: Sequence[str] = BENCH_SETTINGS,
          frame_limit: int | None = None, warmup: int = 1) -> tuple[dict, str]:
    """Return ``(summary, csv_text)``; CSV rows are ``setting,repetition,frame,stage,duration_us``."""
    if repetitions < 2:
        raise ValueError("bench needs at least 2 repetitions")
    rows = []
    summary = {"repetitions": repetitions, "warmup_frames": warmup, "settings": {}}
    for setting in settings:
        cfg = replace(config, stages=setting, annotate=False)
        per_stage: dict[str, list[float]] = {s: [] for s in (*STAGES, "total")}
        seen = 0
        for rep in range(repetitions):
            _, results = run_sequence(cfg, frame_limit=frame_limit, write_outputs=False)
            for res in results:
                seen += 1
                if seen <= warmup:
                    continue
                for stage in per_stage:
                    us = res.durations_us.get(stage, 0)
                    per_stage[stage].append(us)
                    rows.append((setting, rep, res.frame_index, stage, us))
        summary["settings"][setting] = {
            "end_to_end": _stats(per_stage["total"]),
            "stages": {s: _stats(v) for s, v in per_stage.items() if s != "total" and v},
        }
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["setting", "repetition", "frame", "stage", "duration_us"])
    w.writerows(rows)
    return summary, buf.getvalue()


def median_latencies(summary: dict) -> dict[str, float]:
    return {s: v["end_to_end"]["percentiles_us"]["50"] for s, v in summary["settings"].items()}


def bench_interpolation(sizes: Sequence[int] = (100, 1000, 10000), width: int = 320, height: int = 200,
                        repeats: int = 7, batches: int = 3, seed: int = 0) -> dict:
    """Median wall time of ``interpolate_residuals`` per sample count.

    Calls cycle through the sizes and are dealt round-robin into ``batches``
    groups of ``repeats``, so a transient slowdown hits every group alike;
    ``spread`` is (max - min) / median over the per-group medians.
    """
    rng = np.random.default_rng(seed)
    inputs = {}
    for n in sizes:
        lin = rng.choice(width * height, size=min(n, width * height), replace=False)
        ys, xs = np.divmod(lin, width)
        inputs[n] = list(zip(xs.tolist(), ys.tolist(), rng.normal(0, 1, len(lin)).tolist()))
    times = {n: [[] for _ in range(batches)] for n in sizes}
    interpolate_residuals(inputs[sizes[0]], width, height)  # warm-up
    for i in range(repeats * batches):
        for n in sizes:
            t0 = time.perf_counter()
            interpolate_residuals(inputs[n], width, height)
            times[n][i % batches].append(time.perf_counter() - t0)
    out = {}
    for n, groups in times.items():
        meds = [float(np.median(g)) for g in groups]
        m = float(np.median(meds))
        out[n] = {"median_s": m, "spread": (max(meds) - min(meds)) / m}
    return out
