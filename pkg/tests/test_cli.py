import json
import subprocess
import sys

import pytest

from cograd import build_dataset, resolve_config, run_one, write_csv
from cograd.cli import main


def write_config(tmp_path, name="config.json", **overrides):
    raw = {
        "data": {
            "synthetic": {
                "n_samples": 240,
                "n_features": 6,
                "task_angle_deg": 45.0,
                "positive_rates": [0.5, 0.5],
                "seed": 11,
            },
        },
        "model": {"shared_widths": [8], "head_widths": [4], "seed": 100},
        "train": {
            "steps": 6,
            "batch_size": 40,
            "learning_rate": 0.05,
            "loss_weights": [1.0, 1.0],
        },
        "strategies": [{"kind": "sum"}, {"kind": "cograd", "gammas": [0.05, 0.05]}],
        "seeds": [0],
        "output_dir": str(tmp_path / "out"),
    }
    raw.update(overrides)
    path = tmp_path / name
    path.write_text(json.dumps(raw))
    return path, raw


def test_train_command(tmp_path, capsys):
    config, _ = write_config(tmp_path)
    assert main(["train", str(config)]) == 0
    out = capsys.readouterr().out
    assert "sum/seed0" in out and "cograd/seed0" in out
    assert (tmp_path / "out" / "comparison.csv").exists()


def test_train_invalid_config_exits_2(tmp_path, capsys):
    config, raw = write_config(tmp_path)
    raw["train"]["steps"] = 0
    config.write_text(json.dumps(raw))
    assert main(["train", str(config)]) == 2
    assert "error:" in capsys.readouterr().err


def test_missing_config_exits_2(tmp_path, capsys):
    assert main(["train", str(tmp_path / "nope.json")]) == 2
    assert "not found" in capsys.readouterr().err


def test_unknown_field_exits_2(tmp_path, capsys):
    config, raw = write_config(tmp_path)
    raw["surprise"] = True
    config.write_text(json.dumps(raw))
    assert main(["train", str(config)]) == 2
    assert "surprise" in capsys.readouterr().err


def test_divergence_exits_3(tmp_path, capsys):
    import numpy as np

    config, raw = write_config(tmp_path)
    raw["train"]["learning_rate"] = 1e120
    raw["train"]["optimizer"] = "sgd"
    raw["strategies"] = [{"kind": "sum"}]
    config.write_text(json.dumps(raw))
    with np.errstate(over="ignore", invalid="ignore"):
        assert main(["train", str(config)]) == 3
    assert "diverged" in capsys.readouterr().err


def test_output_dir_override(tmp_path):
    config, _ = write_config(tmp_path)
    override = tmp_path / "elsewhere"
    assert main(["train", str(config), "--output-dir", str(override)]) == 0
    assert (override / "comparison.csv").exists()
    assert not (tmp_path / "out" / "comparison.csv").exists()


def test_seed_offset(tmp_path):
    config, _ = write_config(tmp_path)
    assert main(["train", str(config), "--seed-offset", "7"]) == 0
    assert (tmp_path / "out" / "sum" / "7" / "summary.json").exists()


def test_parallel_jobs(tmp_path):
    config, _ = write_config(tmp_path, seeds=[0, 1])
    assert main(["train", str(config), "--jobs", "2"]) == 0
    assert (tmp_path / "out" / "comparison.csv").exists()


def test_validate_approx_command(tmp_path, capsys):
    config, raw = write_config(tmp_path)
    raw["validate"] = {"checkpoints": [0, 3]}
    config.write_text(json.dumps(raw))
    assert main(["validate-approx", str(config)]) == 0
    assert "validate_approx.csv" in capsys.readouterr().out
    assert (tmp_path / "out" / "validate_approx.csv").exists()


def probe_fixtures(tmp_path):
    config, raw = write_config(tmp_path)
    raw["data"]["synthetic"]["task_angle_deg"] = 0.0
    config.write_text(json.dumps(raw))
    cfg = resolve_config(raw, tmp_path)
    run_one(cfg, 0, 0, tmp_path / "runs")
    ckpt = tmp_path / "runs" / "sum" / "0" / "checkpoint.json"
    csv_path = tmp_path / "probe.csv"
    write_csv(build_dataset(cfg.data, 0), csv_path)
    return ckpt, csv_path, config


def test_probe_command_defaults_to_checkpoint_dir(tmp_path, capsys):
    ckpt, csv_path, _ = probe_fixtures(tmp_path)
    assert main(["probe", str(ckpt), str(csv_path)]) == 0
    assert (ckpt.parent / "probe_histogram.csv").exists()
    assert (ckpt.parent / "probe_summary.json").exists()


def test_probe_command_output_dir(tmp_path):
    ckpt, csv_path, _ = probe_fixtures(tmp_path)
    out = tmp_path / "probe_out"
    assert main(["probe", str(ckpt), str(csv_path), "--output-dir", str(out)]) == 0
    assert (out / "probe_histogram.csv").exists()


def test_probe_nonconvergence_exits_3(tmp_path, capsys):
    ckpt, _, config = probe_fixtures(tmp_path)
    raw = json.loads(config.read_text())
    raw["probe"] = {"max_iters": 0}
    config.write_text(json.dumps(raw))
    assert main(["probe", str(ckpt), str(config)]) == 3
    assert "probe" in capsys.readouterr().err


def test_probe_bad_csv_exits_2(tmp_path, capsys):
    ckpt, csv_path, _ = probe_fixtures(tmp_path)
    bad = tmp_path / "bad.csv"
    bad.write_text("f0,f1,f2,f3,f4,f5,label0,label1\n1,2,3\n")
    assert main(["probe", str(ckpt), str(bad)]) == 2
    assert "bad.csv:2" in capsys.readouterr().err


def test_probe_missing_checkpoint_exits_2(tmp_path, capsys):
    _, csv_path, _ = probe_fixtures(tmp_path)
    assert main(["probe", str(tmp_path / "nope.json"), str(csv_path)]) == 2
    assert "checkpoint not readable" in capsys.readouterr().err


def test_probe_directory_as_data_exits_2(tmp_path, capsys):
    ckpt, _, _ = probe_fixtures(tmp_path)
    assert main(["probe", str(ckpt), str(tmp_path)]) == 2
    assert "error:" in capsys.readouterr().err


def test_probe_corrupt_checkpoint_exits_2(tmp_path, capsys):
    _, csv_path, _ = probe_fixtures(tmp_path)
    mangled = tmp_path / "mangled.json"
    mangled.write_text("{not json", encoding="utf-8")
    assert main(["probe", str(mangled), str(csv_path)]) == 2
    assert "not valid JSON" in capsys.readouterr().err


def test_capacity_sweep_command(tmp_path, capsys):
    config, _ = write_config(tmp_path, strategies=[{"kind": "sum"}])
    assert main(["capacity-sweep", str(config)]) == 0
    assert (tmp_path / "out" / "capacity_sweep.csv").exists()


def test_unknown_subcommand_rejected():
    with pytest.raises(SystemExit):
        main(["frobnicate"])


def test_console_script_help():
    proc = subprocess.run(
        ["cograd", "--help"], capture_output=True, text=True, timeout=60
    )
    assert proc.returncode == 0
    for sub in ("train", "validate-approx", "probe", "capacity-sweep"):
        assert sub in proc.stdout


def test_console_script_runs_train(tmp_path):
    config, _ = write_config(tmp_path)
    proc = subprocess.run(
        [sys.executable, "-c", "from cograd.cli import entry; entry()", "train", str(config)],
        capture_output=True,
        text=True,
        timeout=300,
    )
    assert proc.returncode == 0, proc.stderr
    assert (tmp_path / "out" / "comparison.csv").exists()
