"""Command-line entry point: ``railobs {run,oracle,weights,eval,bench}``.

Exit codes: 0 success, 1 frame-fatal error, 2 configuration error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .formats import FormatError, read_depth_raster
from .metrics import FREQ_BIN_WIDTH, N_FREQ_BINS, bin_counts, frequency_weights
from .pipeline import ConfigError, PipelineConfig, evaluate_stored, format_table, load_config, run_sequence

log = logging.getLogger("railobs")


def _config(args) -> PipelineConfig:
    cfg = load_config(args.config)
    if getattr(args, "seed", None) is not None:
        if cfg.degradation is None:
            raise ConfigError("--seed given but the config has no degradation block")
        cfg = replace(cfg, degradation=replace(cfg.degradation, base_seed=args.seed))
    if getattr(args, "stages", None):
        cfg = replace(cfg, stages=args.stages)
    if getattr(args, "window", None):
        cfg = replace(cfg, window=args.window)
    if getattr(args, "output", None):
        cfg = replace(cfg, output_dir=Path(args.output))
    return cfg


def cmd_run(args) -> int:
    cfg = _config(args)
    summary, _ = run_sequence(cfg, frame_limit=args.frames)
    print(format_table(summary), end="")
    return 0


def cmd_oracle(args) -> int:
    from .oracle import SequenceSpec, default_camera, default_sequence, write_sequence

    if args.spec:
        spec = SequenceSpec.from_dict(json.loads(Path(args.spec).read_text()))
    else:
        spec = default_sequence(args.frames, default_camera(args.width, args.height), seed=args.seed,
                                noise_sigma=args.noise, fragment_frames=args.fragment or ())
    extra = {}
    if not args.no_degradation:
        extra["degradation"] = {"base_seed": args.seed}
    cfg_path = write_sequence(spec, args.out, **extra)
    print(f"wrote {spec.num_frames} frames; config at {cfg_path}")
    return 0


def cmd_weights(args) -> int:
    paths = sorted(Path(args.gt_dir).rglob(args.pattern))
    if not paths:
        raise ConfigError(f"no rasters matching {args.pattern!r} under {args.gt_dir}")
    counts = bin_counts(read_depth_raster(p) for p in paths)
    doc = {"bin_width_m": FREQ_BIN_WIDTH, "n_bins": N_FREQ_BINS, "rasters": len(paths),
           "counts": counts.tolist(), "weights": list(frequency_weights(counts))}
    text = json.dumps(doc, indent=1)
    if args.out:
        Path(args.out).write_text(text)
    else:
        print(text)
    return 0


def cmd_eval(args) -> int:
    cfg = _config(args)
    summary = evaluate_stored(cfg, Path(args.records))
    if args.out:
        Path(args.out).write_text(json.dumps(summary, indent=1, sort_keys=True))
    print(format_table(summary), end="")
    return 0


def cmd_bench(args) -> int:
    from .bench import bench, median_latencies

    cfg = _config(args)
    summary, rows = bench(cfg, args.repetitions, frame_limit=args.frames)
    out = cfg.resolved_output_dir() or Path(".")
    out.mkdir(parents=True, exist_ok=True)
    (out / "bench.csv").write_text(rows)
    (out / "bench.json").write_text(json.dumps(summary, indent=1))
    for setting, med in median_latencies(summary).items():
        print(f"{setting:<12} median end-to-end {med / 1000:.2f} ms")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="railobs", description="Railway obstacle distance pipeline")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="process a sequence")
    r.add_argument("config")
    r.add_argument("--frames", type=int, help="process only the first N frames")
    r.add_argument("--stages", choices=("sparse_only", "raw_only", "raw_sparse", "refined"))
    r.add_argument("--window", type=int)
    r.add_argument("--seed", type=int, help="override the degradation base seed")
    r.add_argument("--output")
    r.set_defaults(func=cmd_run)

    o = sub.add_parser("oracle", help="generate a synthetic sequence")
    o.add_argument("out")
    o.add_argument("--spec", help="sequence spec JSON (default: built-in scene)")
    o.add_argument("--frames", type=int, default=100)
    o.add_argument("--width", type=int, default=640)
    o.add_argument("--height", type=int, default=400)
    o.add_argument("--seed", type=int, default=7)
    o.add_argument("--noise", type=float, default=0.05, help="monocular pixel noise sigma (m)")
    o.add_argument("--fragment", type=int, nargs="*", help="frames whose track mask gets fragmented")
    o.add_argument("--no-degradation", action="store_true", help="leave LiDAR simulation out of the config")
    o.set_defaults(func=cmd_oracle)

    w = sub.add_parser("weights", help="frequency-scheme weights from ground-truth rasters")
    w.add_argument("gt_dir")
    w.add_argument("--pattern", default="gt_depth.dmf")
    w.add_argument("--out")
    w.set_defaults(func=cmd_weights)

    e = sub.add_parser("eval", help="metrics from stored records and ground truth")
    e.add_argument("config")
    e.add_argument("records")
    e.add_argument("--out")
    e.set_defaults(func=cmd_eval)

    b = sub.add_parser("bench", help="per-stage timing study")
    b.add_argument("config")
    b.add_argument("--repetitions", type=int, default=3)
    b.add_argument("--frames", type=int)
    b.add_argument("--seed", type=int)
    b.add_argument("--output")
    b.set_defaults(func=cmd_bench)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        log.error("config error: %s", exc)
        return 2
    except (FormatError, OSError) as exc:
        log.error("%s", exc)
        return 1
    except ValueError as exc:
        log.error("config error: %s", exc)
        return 2

if __name__ == "__main__":
    sys.exit(main())
