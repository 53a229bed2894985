import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace

import numpy as np
import pytest

from railobs.formats import DistanceRecord, FormatError, FrameBundle
from railobs.oracle import (SequenceSpec, default_camera, default_config_dict, default_scene, default_sequence,
                            make_frame)
from railobs.pipeline import (ConfigError, FrameEval, PipelineConfig, PipelineState, evaluate, format_table,
                              load_config, process_frame, run_sequence)
from railobs.roi import expand_track_mask
from railobs.scene import render_scene

CAM = default_camera(320, 200)


def bundle_from_render(r, raw, track, frame_index=0):
    return FrameBundle(frame_index, raw, track, tuple(m for m in r.masks if m.area),
                       tuple(zip(r.clouds, r.poses)))


def config_for(spec, **kw):
    return PipelineConfig.from_dict(default_config_dict(SequenceSpec(spec, 1), **kw))


class TestProcessFrame:
    def test_exact_lidar_sparse_mode(self):
        spec = default_scene(CAM)
        r = render_scene(spec)
        cfg = replace(config_for(spec), estimators=("sparse_mode",), sparse_fallback=False)
        res, _ = process_frame(bundle_from_render(r, r.depth, r.track_mask_amodal), cfg,
                               PipelineState.for_config(cfg))
        gt = {m.track_id: o.distance_m for m, o in zip(r.masks, r.objects)}
        on_track = [rec for rec in res.records if rec.is_obstacle]
        assert {rec.track_id for rec in on_track} == {1, 3}
        for rec in on_track:
            assert abs(rec.filtered_distance_m - gt[rec.track_id]) <= 0.5

    def test_empty_detections(self):
        spec = default_scene(CAM)
        r = render_scene(spec)
        b = FrameBundle(0, r.depth, r.track_mask_amodal, (), tuple(zip(r.clouds, r.poses)))
        cfg = config_for(spec)
        res, _ = process_frame(b, cfg, PipelineState.for_config(cfg))
        assert res.records == [] and res.refined is not None
        assert set(res.durations_us) >= {"project", "fuse", "roi", "estimate", "filter"}

    def test_parallel_equals_serial(self):
        seq = default_sequence(3, CAM)
        cfg = config_for(seq.scene, degradation={"base_seed": 1})
        outs = []
        for ex in (None, ThreadPoolExecutor(2)):
            state = PipelineState.for_config(cfg)
            recs = []
            for f in range(3):
                fr = make_frame(seq, f)
                res, state = process_frame(bundle_from_render(fr.render, fr.raw, fr.track, f), cfg, state, ex)
                recs += [r.to_dict() for r in res.records]
            outs.append(recs)
            if ex is not None:
                ex.shutdown()
        assert outs[0] == outs[1]

    def test_size_mismatch(self):
        spec = default_scene(CAM)
        r = render_scene(spec)
        cfg = replace(config_for(spec), camera=default_camera(640, 400))
        with pytest.raises(FormatError):
            process_frame(bundle_from_render(r, r.depth, r.track_mask), cfg, PipelineState.for_config(cfg))

    def test_sparse_only_needs_no_raw(self):
        spec = default_scene(CAM)
        r = render_scene(spec)
        cfg = replace(config_for(spec), stages="sparse_only")
        res, _ = process_frame(bundle_from_render(r, None, r.track_mask_amodal), cfg,
                               PipelineState.for_config(cfg))
        assert {rec.estimator for rec in res.records} == {"sparse_mode"}


class TestConfig:
    def test_round_trip(self, small_sequence):
        _, cfg_path, _ = small_sequence
        cfg = load_config(cfg_path)
        back = PipelineConfig.from_dict(cfg.to_dict())
        assert back == cfg

    @pytest.mark.parametrize("patch", [{"stages": "everything"}, {"bogus": 1}, {"window": 0},
                                       {"estimators": ["nope"]}, {"camera": {"fx": 1}}])
    def test_invalid(self, small_sequence, patch):
        _, cfg_path, _ = small_sequence
        d = json.loads(cfg_path.read_text())
        d.update(patch)
        with pytest.raises(ConfigError):
            PipelineConfig.from_dict(d)

    def test_env_output_override(self, small_sequence, monkeypatch, tmp_path):
        cfg = load_config(small_sequence[1])
        monkeypatch.setenv("RAILOBS_OUTPUT_DIR", str(tmp_path / "elsewhere"))
        assert cfg.resolved_output_dir() == tmp_path / "elsewhere"


@pytest.fixture(scope="module")
def runs(small_sequence, tmp_path_factory):
    _, cfg_path, _ = small_sequence
    cfg = load_config(cfg_path)
    out = {}
    for name in ("a", "b"):
        c = replace(cfg, output_dir=tmp_path_factory.mktemp(name))
        out[name] = (c, *run_sequence(c))
    return out


class TestRunSequence:
    def test_deterministic(self, runs):
        (ca, sa, ra), (cb, sb, rb) = runs["a"], runs["b"]
        assert sa == sb
        assert [r.to_dict()["records"] for r in ra] == [r.to_dict()["records"] for r in rb]
        for p in sorted((ca.output_dir / "annotated").glob("*")):
            assert p.read_bytes() == (cb.output_dir / "annotated" / p.name).read_bytes()

    def test_outputs_and_fallback(self, runs):
        c, s, results = runs["a"]
        assert len(list((c.output_dir / "records").glob("*.json"))) == 12
        assert len(list((c.output_dir / "annotated").glob("*.ppm"))) == 12
        assert json.loads((c.output_dir / "summary.json").read_text()) == json.loads(json.dumps(s))
        assert s["fallback_frames"] == [6]
        assert "W=51" in (c.output_dir / "summary.txt").read_text()

    def test_table_shape_and_w1_unfiltered(self, runs, small_sequence):
        c, s, results = runs["a"]
        assert len(s["distance_mae"]) == len(c.active_estimators)
        assert all(list(row) == ["1", "5", "17", "29", "51"] for row in s["distance_mae"].values())
        # W=1 column recomputed directly from unfiltered per-frame distances
        root = small_sequence[0]
        for est in c.active_estimators:
            errs = []
            for res in results:
                gt = json.loads((root / "frames" / f"{res.frame_index:06d}" / "gt_objects.json").read_text())
                by_track = {o["track_id"]: o for o in gt["objects"]}
                for rec in res.records:
                    if rec.estimator == est and rec.is_obstacle and rec.distance_m is not None:
                        errs.append(abs(rec.distance_m - by_track[rec.track_id]["distance_m"]))
            assert s["distance_mae"][est]["1"]["mae"] == pytest.approx(np.mean(errs), rel=1e-12)

    def test_refined_beats_raw(self, runs):
        s = runs["a"][1]
        mae = s["distance_mae"]
        assert mae["dense_mode_refined"]["1"]["mae"] < mae["dense_mode_raw"]["1"]["mae"]
        assert s["depth_mae"]["refined"]["0-200"] < s["depth_mae"]["raw"]["0-200"]

    def test_raw_only_stage(self, small_sequence):
        cfg = replace(load_config(small_sequence[1]), stages="raw_only", output_dir=None)
        s, results = run_sequence(cfg, frame_limit=3, write_outputs=False)
        assert set(s["distance_mae"]) == {"dense_mode_raw", "mean_k_raw"}
        assert all(r.durations_us["project"] == 0 for r in results)

    def test_missing_frame_file_skipped(self, small_sequence, tmp_path):
        import shutil
        root, cfg_path, _ = small_sequence
        dst = tmp_path / "seq"
        shutil.copytree(root, dst)
        (dst / "frames" / "000002" / "lidar_left.xyz").unlink()
        cfg = replace(load_config(dst / "config.json"), output_dir=None)
        s, results = run_sequence(cfg, frame_limit=4, write_outputs=False)
        assert [r.frame_index for r in results] == [0, 1, 3]
        assert s["skipped_frames"][0]["frame"] == "000002"


def static_frames(noise_sigma, rng, n=80):
    """Evaluation inputs for a static scene with simulated per-frame estimates."""
    spec = default_scene(CAM, lidars=())
    r = render_scene(spec)
    objs = [o for o in r.objects if o.mask.area]
    expanded = expand_track_mask(r.track_mask_amodal, 0.25)
    frames = []
    for f in range(n):
        recs = [DistanceRecord(f, i, o.mask.track_id, o.mask.class_label, 1.0, "mean_k_refined",
                               o.distance_m + rng.normal(0, noise_sigma) if noise_sigma else o.distance_m,
                               None, True) for i, o in enumerate(objs)]
        frames.append(FrameEval(f, [o.mask for o in objs], objs, expanded, recs))
    return frames, spec


def test_gt_identical_predictions(rng):
    frames, spec = static_frames(0.0, rng)
    cfg = config_for(spec)
    s = evaluate(frames, cfg, ["mean_k_refined"])
    assert s["detection"]["tpr"] == 1.0 and s["detection"]["miou"] == 1.0
    assert all(v["mae"] == 0.0 for v in s["distance_mae"]["mean_k_refined"].values())
    assert "100.0%" in format_table(s)


def test_noisy_estimates_mae_non_increasing_in_window(rng):
    frames, spec = static_frames(2.0, rng, n=150)
    s = evaluate(frames, config_for(spec), ["mean_k_refined"])
    maes = [s["distance_mae"]["mean_k_refined"][str(w)]["mae"] for w in (1, 5, 17, 29, 51)]
    assert all(b <= a for a, b in zip(maes, maes[1:]))
