import dataclasses
import math

import numpy as np
import pytest
import torch

from config import HARDGATE_CONFIG
from exceptions import ParameterError, ShapeError
from models.gate_params import PositionalGateParams
from models.program_cache import ProgramCache
from models.segment_program import PulseSegments, SegmentProgram
from services import hardgate, mixer, numerics, reference
from services.verification import random_layer, saturated_instance

F64 = torch.float64


class TestEndpoints:
    def test_rounds_to_enclosed_frames(self):
        assert hardgate.interval_to_frames(10 - 2.4, 10 + 2.4, 100, "threshold") == [(8, 12)]
        assert hardgate.interval_to_frames(10 - 2.4, 10 + 2.4, 100, "nearest") == [(8, 12)]

    def test_clipping_at_sequence_start(self):
        assert hardgate.interval_to_frames(-5.0, 5.0, 100, "nearest") == [(0, 5)]
        assert hardgate.interval_to_frames(-5.0, 5.0, 100, "threshold") == [(0, 4)]

    def test_default_rounding_keeps_soft_support(self):
        assert HARDGATE_CONFIG["ENDPOINT_ROUNDING"] == "threshold"
        assert hardgate.interval_to_frames(10 - 2.6, 10 + 2.6, 100, "threshold") == [(8, 12)]
        assert hardgate.interval_to_frames(10 - 2.6, 10 + 2.6, 100, "nearest") == [(7, 13)]

    def test_interval_outside_sequence_is_empty(self):
        assert hardgate.interval_to_frames(120.0, 130.0, 100, "threshold") == []

    def test_unknown_rounding(self):
        with pytest.raises(ParameterError):
            hardgate.interval_to_frames(0.0, 1.0, 5, "floor")

    def test_round_half_away_from_zero(self):
        assert hardgate.round_half_away(np.array([2.5, -2.5, 1.4])).tolist() == [3.0, -3.0, 1.0]


class TestPeriodicSegments:
    def test_half_duty_example(self):
        assert hardgate.periodic_segments(8.0, 0.0, 0.5, 16) == [(0, 1), (7, 9), (15, 15)]

    def test_near_full_duty_covers_almost_everything(self):
        segments = hardgate.periodic_segments(10.0, 0.3, 0.999999, 100)
        covered = sum(e - s + 1 for s, e in segments)
        assert covered >= 100 - math.ceil(100 / 10.0)

    def test_tiny_duty_is_empty(self):
        assert hardgate.periodic_segments(10.0, 0.0, 1e-8, 50) == []

    def test_segment_count_bound(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            period, n = float(rng.uniform(4, 50)), int(rng.integers(1, 300))
            segments = hardgate.periodic_segments(period, float(rng.uniform(0, 6.3)), float(rng.uniform(0.05, 0.95)), n)
            assert len(segments) <= math.ceil(n / period) + 1


class TestPositional:
    @staticmethod
    def constant(bias):
        return PositionalGateParams(alpha=torch.zeros(1, 1, 4, dtype=F64), beta=torch.zeros(1, 1, 4, dtype=F64),
                                    bias=torch.tensor([[bias]], dtype=F64))

    def test_positive_bias_covers_everything(self):
        programs = hardgate.compile_positional(self.constant(1.0), 12, cache=None)
        assert programs[0][0].segments == [(0, 11)]

    def test_negative_bias_is_empty(self):
        programs = hardgate.compile_positional(self.constant(-1.0), 12, cache=None)
        assert programs[0][0].segments == []
        assert not programs[0][0].active

    def test_results_are_cached(self):
        cache = ProgramCache(name="test", max_size=8)
        first = hardgate.compile_positional(self.constant(1.0), 12, cache=cache)
        second = hardgate.compile_positional(self.constant(1.0), 12, cache=cache)
        assert first is second
        assert len(cache) == 1
        hardgate.compile_positional(self.constant(1.0), 13, cache=cache)
        assert len(cache) == 2


class TestSegmentProgram:
    def test_rejects_overlapping_segments(self):
        with pytest.raises(ShapeError):
            PulseSegments(head=0, pulse=0, family="periodic", segments=[(0, 3), (3, 5)])

    def test_rejects_out_of_range(self):
        with pytest.raises(ShapeError):
            SegmentProgram(length=4, heads=1, pulses_per_head=1,
                           entries=[PulseSegments(head=0, pulse=0, family="periodic", segments=[(2, 4)])])

    def test_dense_and_counts(self):
        program = SegmentProgram(length=6, heads=1, pulses_per_head=2, entries=[
            PulseSegments(head=0, pulse=0, family="aperiodic", segments=[(1, 2)]),
            PulseSegments(head=0, pulse=1, family="periodic", segments=[(0, 0), (4, 5)]),
        ])
        dense = program.to_dense()
        assert dense[0, :, 0].tolist() == [0, 1, 1, 0, 0, 0]
        assert dense[0, :, 1].tolist() == [1, 0, 0, 0, 1, 1]
        assert program.counts().tolist() == [[2, 3]]
        assert program.segment_count() == 3
        assert SegmentProgram.from_dict(program.to_dict()) == program


class TestAccumulation:
    def test_all_covering_segment_gives_column_mean(self, generator):
        x = torch.randn(9, 4, generator=generator, dtype=F64)
        program = SegmentProgram(length=9, heads=1, pulses_per_head=1,
                                 entries=[PulseSegments(head=0, pulse=0, family="positional", segments=[(0, 8)])])
        w_v = torch.randn(4, 4, generator=generator, dtype=F64)
        summaries, active = hardgate.prefix_accumulate(x, program, w_v)
        assert torch.allclose(summaries[0, 0], numerics.linear(x, w_v).mean(dim=0), atol=1e-12)
        assert bool(active.all())

    def test_all_covering_pulse_output(self, generator):
        params = mixer.init_lpa_params(4, heads=1, split=(1, 1, 1), generator=generator, dtype=F64)
        params = dataclasses.replace(params, w_v=torch.eye(4, dtype=F64), w_o=torch.eye(4, dtype=F64))
        x = torch.randn(7, 4, generator=generator, dtype=F64)
        program = SegmentProgram(length=7, heads=1, pulses_per_head=3, entries=[
            PulseSegments(head=0, pulse=0, family="aperiodic", segments=[(0, 6)]),
            PulseSegments(head=0, pulse=1, family="periodic"),
            PulseSegments(head=0, pulse=2, family="positional"),
        ])
        y = hardgate.hard_forward(x, params, programs=[program], strategy="prefix").y
        expected = (1.0 - math.exp(-1.0)) * x.mean(dim=0)
        assert torch.allclose(y, expected.expand_as(y), atol=1e-12)

    def test_uncovered_positions_output_zero(self, generator):
        params = mixer.init_lpa_params(4, heads=1, split=(1, 1, 1), generator=generator, dtype=F64)
        x = torch.randn(8, 4, generator=generator, dtype=F64)
        program = SegmentProgram(length=8, heads=1, pulses_per_head=3, entries=[
            PulseSegments(head=0, pulse=0, family="aperiodic", segments=[(2, 4)]),
            PulseSegments(head=0, pulse=1, family="periodic"),
            PulseSegments(head=0, pulse=2, family="positional"),
        ])
        out = hardgate.hard_forward(x, params, programs=[program])
        assert float(out.y[[0, 1, 5, 6, 7]].abs().max()) == 0.0
        assert float(out.y[3].abs().max()) > 0.0

    def test_prefix_matches_dense(self, generator):
        params = random_layer(generator, 2, 4, (2, 2, 2))
        x = torch.randn(150, 8, generator=generator, dtype=F64)
        program = hardgate.compile_program(x, params)
        prefix, prefix_active = hardgate.prefix_accumulate(x, program, params.w_v)
        dense, dense_active = hardgate.dense_accumulate(x, program, params.w_v)
        assert torch.allclose(prefix, dense, atol=1e-12)
        assert torch.equal(prefix_active, dense_active)

    def test_strategies_agree(self, generator):
        params = random_layer(generator, 2, 4, (2, 1, 1))
        x = torch.randn(2, 40, 8, generator=generator, dtype=F64)
        dense = hardgate.hard_forward(x, params, strategy="dense")
        prefix = hardgate.hard_forward(x, params, strategy="prefix")
        assert dense.strategy == "dense" and prefix.strategy == "prefix"
        assert len(dense.programs) == 2
        assert torch.allclose(dense.y, prefix.y, atol=1e-12)

    def test_unknown_strategy(self, lpa_params):
        with pytest.raises(ParameterError):
            hardgate.hard_forward(torch.zeros(4, 8, dtype=F64), lpa_params, strategy="sparse")

    def test_program_length_checked(self, lpa_params, generator):
        x = torch.randn(6, 8, generator=generator, dtype=F64)
        program = hardgate.compile_program(x, lpa_params)
        with pytest.raises(ShapeError):
            hardgate.prefix_accumulate(x[:5], program, lpa_params.w_v)


class TestSaturatedAgreement:
    @pytest.mark.parametrize("seed", range(5))
    def test_hard_matches_low_temperature_soft(self, seed):
        g = torch.Generator().manual_seed(seed)
        x, params = saturated_instance(g, n=5)
        assert hardgate.margin_violations(x, params, 0.05) == []
        soft = mixer.lpa_forward(x, params).y
        hard = hardgate.hard_forward(x, params, rounding="threshold").y
        assert float((hard - soft).norm() / soft.norm()) < 1e-4

    def test_margin_violations_reported(self, lpa_params):
        x = torch.zeros(6, 8, dtype=F64)
        violations = hardgate.margin_violations(x, lpa_params, margin=0.05)
        # zero input ties every aperiodic score
        assert any(v.family == "aperiodic" and v.t == -1 for v in violations)


def test_hard_encoder_forward(small_encoder, generator):
    lpa = mixer.init_lpa_params(8, heads=2, split=(1, 1, 1), generator=generator)
    encoder = small_encoder.replace_mixer(1, lpa)
    tokens = torch.randn(2, 10, 3, generator=generator)
    out = hardgate.hard_encoder_forward(tokens, encoder, margin=0.05)
    assert out.hidden.shape == (2, 10, 8)
    assert set(out.programs) == {1} and len(out.programs[1]) == 2
    assert 1 in out.violations
    soft = reference.encoder_forward(tokens, encoder).hidden
    assert torch.isfinite(out.hidden).all()
    assert out.hidden.shape == soft.shape


def test_binary_gate_pattern(generator):
    program = SegmentProgram(length=4, heads=1, pulses_per_head=2, entries=[
        PulseSegments(head=0, pulse=0, family="aperiodic", segments=[(0, 1)]),
        PulseSegments(head=0, pulse=1, family="periodic", segments=[(0, 3)]),
    ])
    pattern = hardgate.binary_gate_pattern([program, program], batched=True, dtype=F64)
    assert pattern.tolist() == [[0.5, 1.0], [0.5, 1.0]]
