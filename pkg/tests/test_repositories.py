"""
Tests for file-backed artifacts and run configuration.
"""

import json

import pandas as pd
import pytest
import torch

from exceptions import CheckpointNotFoundError, ConfigError, ShapeError
from models.hardware import HardwareProfile
from models.run_config import RunConfig
from models.segment_program import PulseSegments, SegmentProgram
from repositories import ParameterRepository, ProfileRepository, ProgramRepository, ReportRepository
from services import mixer, reference


class TestParameterRepository:
    def test_attention_round_trip(self, small_encoder, tmp_path):
        repo = ParameterRepository(str(tmp_path))
        path = repo.create("teacher", small_encoder)
        assert path == str(tmp_path / "teacher.json")
        loaded = repo.load("teacher")
        assert loaded.mixer_kinds == small_encoder.mixer_kinds
        for key, tensor in small_encoder.named_tensors().items():
            assert torch.allclose(loaded.named_tensors()[key], tensor, atol=1e-6), key

    def test_mixed_encoder_round_trip(self, small_encoder, generator, tmp_path):
        lpa = mixer.init_lpa_params(8, 4, (1, 1, 1), generator, prev_pulses=12, temperature=0.7)
        encoder = small_encoder.replace_mixer(1, lpa)
        repo = ParameterRepository(str(tmp_path))
        loaded = repo.load(repo.create("student", encoder))
        assert loaded.mixer_kinds == ["attention", "lpa"]
        assert loaded.layers[1].mixer.temperature == pytest.approx(0.7)
        assert loaded.layers[1].mixer.gates.split == (1, 1, 1)

        x = torch.randn(2, 10, 3, generator=generator)
        expected = reference.encoder_forward(x, encoder).hidden
        got = reference.encoder_forward(x, loaded).hidden
        assert float((got - expected).abs().max()) < 1e-5

    def test_missing_checkpoint(self, tmp_path):
        repo = ParameterRepository(str(tmp_path))
        assert repo.get_by_id("nothing") is None
        with pytest.raises(CheckpointNotFoundError):
            repo.load("nothing")

    def test_wrong_format(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text(json.dumps({"format": "something-else", "arrays": {}}))
        with pytest.raises(ConfigError):
            ParameterRepository(str(tmp_path)).load(str(path))

    def test_array_size_mismatch(self, tmp_path):
        with pytest.raises(ShapeError):
            ParameterRepository(str(tmp_path)).decode_arrays({"w": {"shape": [2, 2], "data": [1.0, 2.0]}})

    def test_list_and_delete(self, small_encoder, tmp_path):
        repo = ParameterRepository(str(tmp_path))
        repo.create("a", small_encoder)
        repo.create("b", small_encoder)
        assert repo.list_ids() == ["a", "b"]
        assert repo.delete("a")
        assert not repo.delete("a")
        assert repo.list_ids() == ["b"]


class TestReportRepository:
    def test_column_order_enforced(self, tmp_path):
        repo = ReportRepository(str(tmp_path))
        frame = pd.DataFrame({"b": [1, 2], "a": [3, 4]})
        path = repo.create("report", frame, columns=["a", "b"])
        assert path.endswith("report.csv")
        assert list(repo.load("report").columns) == ["a", "b"]

    def test_missing_column(self, tmp_path):
        with pytest.raises(ShapeError):
            ReportRepository(str(tmp_path)).create("report", pd.DataFrame({"a": [1]}), columns=["a", "b"])


class TestProgramRepository:
    def test_round_trip(self, tmp_path):
        program = SegmentProgram(length=10, heads=1, pulses_per_head=2, entries=[
            PulseSegments(head=0, pulse=0, family="aperiodic", segments=[(2, 5)]),
            PulseSegments(head=0, pulse=1, family="periodic", segments=[(0, 1), (7, 9)]),
        ])
        repo = ProgramRepository(str(tmp_path))
        repo.create("programs", [program, program])
        loaded = repo.load("programs")
        assert len(loaded) == 2
        assert loaded[0].to_dict() == program.to_dict()
        assert loaded[1].entry(0, 1).segments == [(0, 1), (7, 9)]


class TestProfileRepository:
    def test_builtin_and_file(self, tmp_path):
        repo = ProfileRepository(str(tmp_path))
        builtin = repo.load("m4-pro")
        custom = HardwareProfile(name="slow", bandwidth_bps=builtin.bandwidth_bps / 2, flops=dict(builtin.flops))
        repo.create("slow", custom)
        loaded = repo.load("slow")
        assert loaded.name == "slow"
        assert loaded.bandwidth_bps == pytest.approx(builtin.bandwidth_bps / 2)

    def test_unknown_profile(self, tmp_path):
        with pytest.raises(CheckpointNotFoundError):
            ProfileRepository(str(tmp_path)).load("no-such-device")


class TestRunConfig:
    def test_defaults(self, monkeypatch):
        monkeypatch.delenv("PULSE_SEED", raising=False)
        config = RunConfig.load()
        assert config.seed == 0
        assert config.model.layers == 4

    def test_seed_resolution(self, tmp_path, monkeypatch):
        path = tmp_path / "run.json"
        path.write_text(json.dumps({"seed": 5}))
        monkeypatch.setenv("PULSE_SEED", "9")
        assert RunConfig.load(str(path), seed=2).seed == 2
        assert RunConfig.load(str(path)).seed == 5
        assert RunConfig.load().seed == 9
        monkeypatch.setenv("PULSE_SEED", "nine")
        with pytest.raises(ConfigError):
            RunConfig.load()

    def test_sections(self, tiny_config):
        config = RunConfig.load(tiny_config)
        assert config.model.pulse_split == (1, 1, 1)
        assert config.data.seq_len == 12
        assert config.schedule.training_settings()["TASK_EPOCHS"] == 1
        assert config.sweep.epochs == 1
        assert RunConfig.from_dict(config.to_dict()).model.pulse_split == (1, 1, 1)

    def test_output_dir_override(self, tiny_config, tmp_path):
        assert RunConfig.load(tiny_config, output_dir=str(tmp_path / "other")).output_dir == str(tmp_path / "other")

    @pytest.mark.parametrize("data", [
        {"colour": "blue"},
        {"model": {"depth": 3}},
        {"model": {"pulse_split": [1, 1]}},
        {"model": {"dim": 10, "heads": 4}},
    ])
    def test_invalid(self, data):
        with pytest.raises(ConfigError):
            RunConfig.from_dict(data)

    def test_missing_file(self, tmp_path):
        with pytest.raises(CheckpointNotFoundError):
            RunConfig.load(str(tmp_path / "absent.json"))

    def test_malformed_file(self, tmp_path):
        path = tmp_path / "run.json"
        path.write_text("{not json")
        with pytest.raises(ConfigError):
            RunConfig.load(str(path))
