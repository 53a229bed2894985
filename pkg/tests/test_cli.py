import json

from railobs.cli import main
from railobs.formats import read_depth_raster


def test_run_eval_weights(small_sequence, tmp_path, capsys):
    root, cfg_path, _ = small_sequence
    out = tmp_path / "out"
    assert main(["run", str(cfg_path), "--frames", "3", "--output", str(out)]) == 0
    assert "W=1" in capsys.readouterr().out
    assert (out / "summary.json").exists()

    assert main(["eval", str(cfg_path), str(out / "records"), "--out", str(tmp_path / "ev.json")]) == 0
    ev = json.loads((tmp_path / "ev.json").read_text())
    run = json.loads((out / "summary.json").read_text())
    assert ev["distance_mae"] == run["distance_mae"]
    assert ev["detection"] == run["detection"]

    assert main(["weights", str(root / "frames"), "--out", str(tmp_path / "w.json")]) == 0
    w = json.loads((tmp_path / "w.json").read_text())
    assert w["rasters"] == 12 and len(w["weights"]) == 22 and min(w["weights"]) == 1.0


def test_seed_override_changes_output(small_sequence, tmp_path):
    _, cfg_path, _ = small_sequence
    for seed in (1, 2):
        assert main(["run", str(cfg_path), "--frames", "1", "--seed", str(seed),
                     "--output", str(tmp_path / str(seed))]) == 0
    a = json.loads((tmp_path / "1" / "records" / "000000.json").read_text())["records"]
    b = json.loads((tmp_path / "2" / "records" / "000000.json").read_text())["records"]
    assert [r["distance_m"] for r in a] != [r["distance_m"] for r in b]


def test_env_output_dir(small_sequence, tmp_path, monkeypatch):
    monkeypatch.setenv("RAILOBS_OUTPUT_DIR", str(tmp_path / "env"))
    assert main(["run", str(small_sequence[1]), "--frames", "1"]) == 0
    assert (tmp_path / "env" / "summary.json").exists()


def test_config_error_exit_code(tmp_path):
    assert main(["run", str(tmp_path / "missing.json")]) == 2
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"camera": {"fx": 1}}))
    assert main(["run", str(bad)]) == 2


def test_format_error_exit_code(small_sequence, tmp_path):
    import shutil
    dst = tmp_path / "seq"
    shutil.copytree(small_sequence[0], dst)
    (dst / "frames" / "000000" / "raw_depth.dmf").write_bytes(b"DMF1garbage")
    assert main(["run", str(dst / "config.json"), "--frames", "1", "--output", str(tmp_path / "o")]) == 1


def test_oracle_subcommand(tmp_path):
    assert main(["oracle", str(tmp_path / "s"), "--frames", "2", "--width", "64", "--height", "40"]) == 0
    cfg = json.loads((tmp_path / "s" / "config.json").read_text())
    assert cfg["degradation"]["base_seed"] == 7
    assert read_depth_raster(tmp_path / "s" / "frames" / "000001" / "gt_depth.dmf").width == 64


def test_bench_subcommand(small_sequence, tmp_path, capsys):
    assert main(["bench", str(small_sequence[1]), "--repetitions", "2", "--frames", "2",
                 "--output", str(tmp_path / "b")]) == 0
    assert (tmp_path / "b" / "bench.csv").exists()
    assert "refined" in capsys.readouterr().out
