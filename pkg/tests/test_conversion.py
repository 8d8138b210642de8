"""
Tests for the diagnostic sweep and progressive replacement.
"""

import math
from dataclasses import replace

import numpy as np
import pytest
import torch

from exceptions import ConfigError, ParameterError, ShapeError
from models.conversion import (
    ORDER_COLUMNS,
    SWEEP_COLUMNS,
    TRACE_COLUMNS,
    CurriculumSchedule,
    LayerSweepResult,
    SweepHyperparams,
    SweepReport,
)
from models.lpa_params import LpaLayerParams
from services import reference, training
from services.conversion import (
    ConversionService,
    amplitude_histogram,
    elastic_net_penalty,
    overprovisioned_split,
    resolve_order,
    selective_init,
    surviving_pulses,
    temperature_at,
)
from services.synthetic_data import SyntheticDataset, make_dataset

FAST = {
    "WARMSTART_EPOCHS": 1,
    "TASK_EPOCHS": 1,
    "ALIGNMENT_EPOCHS": 1,
    "FINAL_EPOCHS": 1,
    "PULSE_SPLIT": (1, 1, 1),
}


def tiny_data(seed, split, batches=2):
    return make_dataset(seed, split, batches=batches, batch_size=2, seq_len=12, input_dim=3)


@pytest.fixture
def tiny_teacher(small_encoder):
    return small_encoder


class TestTemperatureSchedule:
    def test_endpoints_and_midpoint(self):
        schedule = CurriculumSchedule(3.0, 0.5, steps=11)
        assert temperature_at(0, schedule) == pytest.approx(3.0)
        assert temperature_at(10, schedule) == pytest.approx(0.5)
        assert temperature_at(5, schedule) == pytest.approx(1.75)

    def test_clamped_outside_phase(self):
        schedule = CurriculumSchedule(3.0, 0.5, steps=5)
        assert temperature_at(-3, schedule) == pytest.approx(3.0)
        assert temperature_at(40, schedule) == pytest.approx(0.5)

    def test_single_step_sits_at_end(self):
        assert temperature_at(0, CurriculumSchedule(3.0, 0.5, steps=1)) == pytest.approx(0.5)

    @pytest.mark.parametrize("start,end", [(0.0, 0.5), (3.0, -1.0), (1.0, 2.0)])
    def test_invalid_schedule(self, start, end):
        with pytest.raises(ParameterError):
            CurriculumSchedule(start, end)

    def test_unknown_scope(self):
        with pytest.raises(ParameterError):
            CurriculumSchedule(3.0, 0.5, scope="sideways")


class TestPruning:
    def test_elastic_net(self):
        amp = torch.tensor([1.0, -2.0])
        assert float(elastic_net_penalty(amp, 0.5, 0.25)) == pytest.approx(0.5 * 3 + 0.25 * 5)

    def test_threshold_relative_to_max(self):
        amp = torch.tensor([[1.0, 0.05, -0.5], [0.2, 0.0, -0.09]])
        keep = surviving_pulses(amp, threshold=0.1, floor=1)
        np.testing.assert_array_equal(keep, [True, False, True, True, False, False])

    def test_floor_keeps_largest(self):
        amp = torch.tensor([5.0, 0.1, 0.3, 0.2, 0.01])
        keep = surviving_pulses(amp, threshold=0.5, floor=3)
        assert keep.sum() == 3
        np.testing.assert_array_equal(keep, [True, False, True, True, False])

    def test_floor_larger_than_pulse_count(self):
        assert surviving_pulses(torch.tensor([1.0, 0.0]), threshold=0.9, floor=4).sum() == 2

    def test_histogram(self):
        counts = amplitude_histogram(torch.tensor([0.0, 0.25, 0.5, 1.0]), bins=4)
        assert counts == [1, 1, 1, 1]
        assert sum(amplitude_histogram(torch.zeros(6))) == 6

    def test_hyperparameter_validation(self):
        with pytest.raises(ParameterError):
            SweepHyperparams(lambda1=-1.0)
        with pytest.raises(ParameterError):
            SweepHyperparams(threshold=1.5)
        with pytest.raises(ParameterError):
            SweepHyperparams(floor=0)

    @pytest.mark.parametrize("layer", [0, 1])
    def test_l1_never_adds_survivors(self, tiny_teacher, layer):
        service = ConversionService(0, FAST)
        data = tiny_data(0, "sweep")
        pairs = SyntheticDataset(batches=service.collect_taps(tiny_teacher, data)[layer], seed=0, split="sweep")
        init = selective_init(tiny_teacher.layers[layer].mixer, 2, (2, 2, 2), torch.Generator().manual_seed(layer))

        plain, _ = service.fit_layer(init, pairs, epochs=20, lr=5e-3, lambda1=0.0, lambda2=0.0)
        sparse, _ = service.fit_layer(init, pairs, epochs=20, lr=5e-3, lambda1=0.01, lambda2=0.0)
        assert surviving_pulses(plain.amp, 0.1, 1).sum() >= surviving_pulses(sparse.amp, 0.1, 1).sum()


class TestSelectiveInit:
    def test_overprovisioned_split(self):
        assert overprovisioned_split((4, 4, 4)) == (12, 12, 12)
        assert overprovisioned_split((4, 4, 4), pulses_per_family=2) == (2, 2, 2)

    def test_copies_value_and_output(self, generator):
        attn = reference.init_attention_params(8, 2, generator)
        params = selective_init(attn, heads=2, split=(3, 1, 1), generator=generator)
        assert isinstance(params, LpaLayerParams)
        assert torch.equal(params.w_v, attn.w_v)
        assert torch.equal(params.w_o, attn.w_o)

    def test_query_rows(self, generator):
        attn = reference.init_attention_params(8, 2, generator)
        params = selective_init(attn, heads=2, split=(3, 1, 1), generator=generator)
        q = params.gates.aperiodic.q
        assert q.shape == (2, 3, 2)
        # head 1, pulse 2 -> row 5, channels 4:6
        assert torch.equal(q[1, 2], attn.w_q[5, 4:6])
        assert torch.equal(q[0, 0], attn.w_q[0, 0:2])

    def test_copies_are_detached(self, generator):
        attn = reference.init_attention_params(8, 2, generator)
        params = selective_init(attn, heads=2, split=(1, 1, 1), generator=generator)
        params.w_v.add_(1.0)
        assert not torch.equal(params.w_v, attn.w_v)

    def test_width_mismatch(self, generator):
        attn = reference.init_attention_params(8, 2, generator)
        with pytest.raises(ShapeError):
            selective_init(attn, heads=2, dim=16)


class TestOrder:
    @pytest.fixture
    def report(self):
        layers = [LayerSweepResult(layer=0, mse=0.3, surviving=4),
                  LayerSweepResult(layer=1, mse=0.1, surviving=4),
                  LayerSweepResult(layer=2, mse=0.2, surviving=4)]
        return SweepReport(layers=layers, order=[1, 2, 0])

    def test_kinds(self, report):
        assert resolve_order("mse", report, 3) == [1, 2, 0]
        assert resolve_order("reverse", report, 3) == [0, 2, 1]
        assert resolve_order("natural", None, 3) == [0, 1, 2]

    def test_missing_report(self):
        with pytest.raises(ConfigError):
            resolve_order("mse", None, 3)

    def test_unknown_kind(self, report):
        with pytest.raises(ConfigError):
            resolve_order("random", report, 3)

    def test_report_frame(self, report):
        frame = report.to_frame()
        assert list(frame.columns) == SWEEP_COLUMNS
        assert frame.set_index("layer").loc[0, "order_rank"] == 2


class TestSweep:
    def test_tiny_teacher(self, tiny_teacher):
        before = tiny_teacher.clone()
        hp = SweepHyperparams(epochs=1, pulses_per_family=1, floor=1)
        report = ConversionService(0, FAST).mse_sweep(tiny_teacher, tiny_data(0, "sweep"), hp)
        assert sorted(report.order) == [0, 1]
        for result in report.layers:
            assert math.isfinite(result.mse)
            assert 1 <= result.surviving <= 4 * 3
            assert sum(result.histogram) == 4 * 3
        assert tiny_teacher.state_equal(before)

    def test_failed_layers_sort_last(self, tiny_teacher, monkeypatch):
        service = ConversionService(0, FAST)
        original = service.fit_layer
        calls = []

        def flaky(params, pairs, *args, **kwargs):
            calls.append(1)
            fitted, mse = original(params, pairs, *args, **kwargs)
            return fitted, (math.nan if len(calls) == 1 else mse)

        monkeypatch.setattr(service, "fit_layer", flaky)
        hp = SweepHyperparams(epochs=1, pulses_per_family=1, floor=1)
        report = service.mse_sweep(tiny_teacher, tiny_data(0, "sweep"), hp)
        assert report.order == [1, 0]
        assert report.layers[0].failed
        assert report.layers[0].mse == math.inf

    def test_local_layer_is_easier_than_sharp(self):
        """A smooth local average is easier to mimic than near one-hot random attention."""
        dim, wins = 16, 0
        hp = SweepHyperparams(epochs=1, pulses_per_family=2)
        for seed in range(5):
            generator = torch.Generator().manual_seed(seed)
            base = reference.init_encoder(dim=dim, input_dim=4, layers=1, heads=2, generator=generator)
            attn = base.layers[0].mixer
            local = replace(attn, w_q=torch.zeros_like(attn.w_q), w_k=torch.zeros_like(attn.w_k),
                            distance_penalty=0.1)
            sharp = replace(attn, w_q=torch.randn(dim, dim, generator=generator) * 4 / dim ** 0.5,
                            w_k=torch.randn(dim, dim, generator=generator) * 4 / dim ** 0.5)
            data = make_dataset(seed, "sweep", batches=2, batch_size=4, seq_len=32, input_dim=4)
            service = ConversionService(seed)
            mse_local = service.mse_sweep(base.replace_mixer(0, local), data, hp).layers[0].mse
            mse_sharp = service.mse_sweep(base.replace_mixer(0, sharp), data, hp).layers[0].mse
            wins += mse_local < mse_sharp
        assert wins >= 4


class TestProgressiveReplacement:
    def test_alignment_reverts_on_worse_metric(self, tiny_teacher, generator):
        service = ConversionService(0, {**FAST, "ALIGNMENT_LR_SCALE": 1e6})
        lpa = selective_init(tiny_teacher.layers[1].mixer, 4, (1, 1, 1), generator, dim=8)
        student = tiny_teacher.replace_mixer(1, lpa).clone()
        train = service.distillation_targets(tiny_teacher, tiny_data(0, "train"))
        val = service.distillation_targets(tiny_teacher, tiny_data(0, "val", batches=1))

        result, reverted, metric = service.run_alignment(student, train, val)
        assert reverted
        assert result.state_equal(student)
        assert metric == pytest.approx(service.distillation_metric(student, val))

    def test_replaces_in_order(self, tiny_teacher):
        before = tiny_teacher.clone()
        service = ConversionService(0, FAST)
        result = service.progressive_replace(tiny_teacher, [1, 0], tiny_data(0, "train"),
                                             tiny_data(0, "val", batches=1))
        assert result.replaced == [1, 0]
        assert not result.stopped_on_budget
        assert result.encoder.lpa_layers == [0, 1]
        assert math.isfinite(result.final_metric)
        assert tiny_teacher.state_equal(before)

        phases = result.trace.phases()
        assert phases[0] == "baseline"
        assert {"task", "alignment", "final"} <= set(phases)
        assert phases[-1] == "final"
        assert list(result.trace.to_frame().columns) == TRACE_COLUMNS

    def test_task_phase_anneals_locally(self, tiny_teacher):
        settings = {**FAST, "TASK_EPOCHS": 2}
        result = ConversionService(0, settings).progressive_replace(
            tiny_teacher, [0], tiny_data(0, "train"), tiny_data(0, "val", batches=1))
        taus = [r.tau for r in result.trace.rows if r.phase == "task"]
        assert taus[0] == pytest.approx(3.0)
        assert taus[-1] == pytest.approx(0.5)
        assert all(a >= b for a, b in zip(taus, taus[1:]))

    def test_budget_stop_keeps_stage(self, tiny_teacher):
        result = ConversionService(0, FAST).progressive_replace(
            tiny_teacher, [0, 1], tiny_data(0, "train"), tiny_data(0, "val", batches=1), budget=-1.0)
        assert result.stopped_on_budget
        assert result.replaced == [0]
        assert result.encoder.mixer_kinds[1] == "attention"
        assert result.encoder.lpa_layers == [0]

    @pytest.mark.parametrize("order", [[0, 0], [2], [-1]])
    def test_invalid_order(self, tiny_teacher, order):
        with pytest.raises(ConfigError):
            ConversionService(0, FAST).progressive_replace(tiny_teacher, order, tiny_data(0, "train"),
                                                           tiny_data(0, "val", batches=1))

    @pytest.mark.slow
    def test_compare_orders(self):
        def build(seed):
            return reference.init_encoder(dim=8, input_dim=3, layers=2, heads=2,
                                          generator=torch.Generator().manual_seed(seed))

        hp = SweepHyperparams(epochs=1, pulses_per_family=1, floor=1)
        frame = ConversionService(0, FAST).compare_orders(build, seeds=[0, 1], orders=("mse", "reverse"),
                                                          hp=hp, make_data=tiny_data)
        assert list(frame.columns) == ORDER_COLUMNS
        assert len(frame) == 4
        assert set(frame["order"]) == {"mse", "reverse"}
        assert np.isfinite(frame["final_loss"]).all()

    @pytest.mark.slow
    def test_mse_order_beats_reverse(self):
        def build(seed):
            encoder = reference.init_encoder(generator=torch.Generator().manual_seed(seed))
            return training.pretrain_teacher(encoder, make_dataset(seed, "train"))

        frame = ConversionService(0).compare_orders(build, seeds=range(5), orders=("mse", "reverse"))
        assert len(frame) == 10
        assert frame.groupby("seed").size().eq(2).all()
        medians = frame.groupby("order")["final_loss"].median()
        assert medians["mse"] < medians["reverse"]
