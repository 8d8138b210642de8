"""
End-to-end tests of pulse_cli.main exit codes and artifacts.
"""

import json
import os

import numpy as np
import pandas as pd
import pytest
import torch

import pulse_cli
from models.hardware import COST_COLUMNS
from repositories import ParameterRepository
from services import mixer, perfmodel


@pytest.fixture
def out_dir(tmp_path):
    return str(tmp_path / "out")


@pytest.fixture
def mixed_checkpoint(small_encoder, generator, tmp_path):
    lpa = mixer.init_lpa_params(8, 4, (1, 1, 1), generator, prev_pulses=12)
    encoder = small_encoder.replace_mixer(0, lpa)
    return ParameterRepository(str(tmp_path)).create("mixed", encoder)


@pytest.fixture
def tokens(tmp_path, generator):
    path = str(tmp_path / "tokens.npy")
    np.save(path, torch.randn(16, 3, generator=generator).numpy())
    return path


def test_bench_memory(out_dir, capsys):
    assert pulse_cli.main(["--out", out_dir, "bench", "memory", "--durations", "10,60"]) == 0
    frame = pd.read_csv(os.path.join(out_dir, "memory.csv"))
    assert list(frame.columns) == perfmodel.MEMORY_COLUMNS
    assert frame["ratio"].tolist() == [42, 250]
    assert "audio_s" in capsys.readouterr().out


def test_bench_roofline(out_dir):
    assert pulse_cli.main(["--out", out_dir, "bench", "roofline"]) == 0
    assert list(pd.read_csv(os.path.join(out_dir, "roofline.csv")).columns) == COST_COLUMNS
    assert os.path.exists(os.path.join(out_dir, "calibration.csv"))
    totals = pd.read_csv(os.path.join(out_dir, "totals.csv"))
    assert totals["mechanism"].tolist() == ["attention", "lpa_12", "lpa_36"]


def test_bench_roofline_unknown_profile(out_dir):
    assert pulse_cli.main(["--out", out_dir, "bench", "roofline", "--profile", "no-such-device"]) == 2


def test_verify_selected(out_dir, capsys):
    code = pulse_cli.main(["--out", out_dir, "verify", "--only", "softmax_matches_direct_sum,prefix_matches_dense",
                           "--trial-scale", "0.2"])
    assert code == 0
    assert "2 passed, 0 failed" in capsys.readouterr().out
    report = pd.read_csv(os.path.join(out_dir, "verify_report.csv"))
    assert report["passed"].all()


def test_verify_detects_fault(out_dir, capsys):
    code = pulse_cli.main(["--out", out_dir, "verify", "--self-test-fault", "--only", "layer_matches_brute_force",
                           "--trial-scale", "0.05"])
    assert code == 1
    assert "FAIL" in capsys.readouterr().out


def test_missing_checkpoint(out_dir, tokens):
    assert pulse_cli.main(["--out", out_dir, "infer", "--checkpoint", "absent.json", "--input", tokens]) == 2


def test_missing_input(out_dir, mixed_checkpoint):
    assert pulse_cli.main(["--out", out_dir, "infer", "--checkpoint", mixed_checkpoint,
                           "--input", "absent.npy"]) == 2


def test_bad_config(tmp_path, out_dir):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({"model": {"depth": 3}}))
    assert pulse_cli.main(["--config", str(path), "--out", out_dir, "bench", "memory"]) == 2


def test_unknown_command():
    with pytest.raises(SystemExit) as exc:
        pulse_cli.main(["dance"])
    assert exc.value.code == 2


def test_infer_soft(out_dir, mixed_checkpoint, tokens):
    assert pulse_cli.main(["--out", out_dir, "infer", "--checkpoint", mixed_checkpoint, "--input", tokens]) == 0
    assert np.load(os.path.join(out_dir, "infer_output.npy")).shape == (16, 8)


def test_infer_hard_compare(out_dir, mixed_checkpoint, tokens, capsys):
    code = pulse_cli.main(["--out", out_dir, "infer", "--checkpoint", mixed_checkpoint, "--input", tokens,
                           "--hard", "--compare", "--strict", "--dump-programs"])
    assert code == 0
    assert "max abs deviation soft vs hard" in capsys.readouterr().out
    assert np.isfinite(np.load(os.path.join(out_dir, "infer_output.npy"))).all()
    with open(os.path.join(out_dir, "programs_layer0.json")) as f:
        programs = json.load(f)["programs"]
    assert programs[0]["length"] == 16


@pytest.mark.slow
def test_sweep_and_convert(tiny_config, tmp_path):
    out = str(tmp_path / "run")
    assert pulse_cli.main(["--config", str(tiny_config), "--out", out, "sweep"]) == 0
    sweep = pd.read_csv(os.path.join(out, "sweep_report.csv"))
    assert sorted(sweep["layer"]) == [0, 1]

    teacher = os.path.join(out, "teacher.json")
    assert pulse_cli.main(["--config", str(tiny_config), "--out", out, "convert", "--teacher", teacher]) == 0
    trace = pd.read_csv(os.path.join(out, "stage_trace.csv"))
    assert trace["phase"].iloc[0] == "baseline"
    converted = ParameterRepository(out).load("converted")
    assert converted.lpa_layers == [0, 1]


@pytest.mark.slow
def test_convert_natural_with_budget(tiny_config, tmp_path):
    out = str(tmp_path / "run")
    code = pulse_cli.main(["--config", str(tiny_config), "--out", out, "convert", "--order", "natural",
                           "--budget", "-1"])
    assert code == 0
    assert ParameterRepository(out).load("converted").lpa_layers == [0]
    assert not os.path.exists(os.path.join(out, "sweep_report.csv"))
