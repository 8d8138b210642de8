import dataclasses
import math

import pytest
import torch

from exceptions import ShapeError
from services import gradcheck, mixer
from services.verification import brute_force_layer, random_layer

F64 = torch.float64


def identity_layer(params):
    """Copy of ``params`` with identity projections and unit amplitudes."""
    d = params.dim
    return dataclasses.replace(params, w_v=torch.eye(d, dtype=F64), w_o=torch.eye(d, dtype=F64),
                               amp=torch.ones_like(params.amp))


class TestGatedMeans:
    def test_all_on_gate_gives_column_mean(self, generator):
        values = torch.randn(1, 6, 4, generator=generator, dtype=F64)
        summaries, active = mixer.gated_means(values, torch.ones(1, 6, 1, dtype=F64))
        assert torch.allclose(summaries[0, 0], values[0].mean(dim=0), atol=1e-14)
        assert bool(active.all())

    def test_one_hot_gate_selects_frame(self, generator):
        values = torch.randn(1, 6, 4, generator=generator, dtype=F64)
        g = torch.zeros(1, 6, 1, dtype=F64)
        g[0, 3, 0] = 1.0
        summaries, _ = mixer.gated_means(values, g)
        assert torch.allclose(summaries[0, 0], values[0, 3], atol=1e-15)

    def test_empty_pulse_is_inactive_and_zero(self, generator):
        values = torch.randn(1, 5, 2, generator=generator, dtype=F64)
        summaries, active = mixer.gated_means(values, torch.zeros(1, 5, 1, dtype=F64))
        assert not bool(active.any())
        assert float(summaries.abs().max()) == 0.0


class TestForward:
    def test_output_shape_and_mask(self, lpa_params, generator):
        x = torch.randn(3, 11, 8, generator=generator, dtype=F64)
        out = mixer.lpa_forward(x, lpa_params)
        assert out.y.shape == x.shape
        assert out.mask.shape == (3, 11)
        assert float(out.mask.min()) >= 0.0 and float(out.mask.max()) < 1.0
        assert out.summaries.shape == (3, 2, 3, 4)

    def test_batched_matches_single(self, lpa_params, generator):
        x = torch.randn(2, 9, 8, generator=generator, dtype=F64)
        batched = mixer.lpa_forward(x, lpa_params).y
        assert torch.allclose(batched[1], mixer.lpa_forward(x[1], lpa_params).y, atol=1e-13)

    def test_empty_sequence(self, lpa_params):
        out = mixer.lpa_forward(torch.zeros(0, 8, dtype=F64), lpa_params)
        assert out.y.shape == (0, 8)

    def test_width_mismatch(self, lpa_params):
        with pytest.raises(ShapeError):
            mixer.lpa_forward(torch.zeros(4, 6, dtype=F64), lpa_params)

    def test_all_covering_pulse_gives_masked_mean(self, generator):
        params = mixer.init_lpa_params(4, heads=1, split=(0, 0, 1), generator=generator, dtype=F64)
        pos = params.gates.positional
        params = identity_layer(dataclasses.replace(params, temperature=0.01, gates=dataclasses.replace(
            params.gates, positional=dataclasses.replace(pos, alpha=torch.zeros_like(pos.alpha),
                                                         beta=torch.zeros_like(pos.beta),
                                                         bias=torch.full_like(pos.bias, 1.0)))))
        x = torch.randn(7, 4, generator=generator, dtype=F64)
        y = mixer.lpa_forward(x, params).y
        expected = (1.0 - math.exp(-1.0)) * x.mean(dim=0)
        assert torch.allclose(y, expected.expand_as(y), atol=1e-12)

    def test_matches_brute_force(self, generator):
        params = mixer.init_lpa_params(8, heads=2, split=(2, 1, 1), generator=generator, dtype=F64,
                                       basis_size=3, prev_pulses=4)
        params = params.map_tensors(lambda t: t + 0.3 * torch.randn(t.shape, generator=generator, dtype=t.dtype))
        x = torch.randn(6, 8, generator=generator, dtype=F64)
        prev = torch.rand(4, generator=generator, dtype=F64)
        got = mixer.lpa_forward(x, params, prev).y.numpy()
        expected = brute_force_layer(x, params, prev)
        assert abs(got - expected).max() < 1e-9

    def test_zero_cross_projection_changes_nothing(self, generator):
        params = mixer.init_lpa_params(8, heads=2, split=(1, 1, 1), generator=generator, dtype=F64, prev_pulses=5)
        x = torch.randn(6, 8, generator=generator, dtype=F64)
        with_prev = mixer.lpa_forward(x, params, torch.rand(5, generator=generator, dtype=F64)).y
        assert torch.allclose(with_prev, mixer.lpa_forward(x, params).y, atol=1e-15)

    def test_pulse_weights_sum_to_one(self, lpa_params):
        params = dataclasses.replace(lpa_params, wlogit=torch.tensor([[30.0, -30.0, 0.0], [1.0, 2.0, 3.0]],
                                                                     dtype=F64))
        assert torch.allclose(params.pulse_weights.sum(dim=-1), torch.ones(2, dtype=F64), atol=1e-12)


class TestGradients:
    def test_match_finite_differences(self, generator):
        params = random_layer(generator, heads=1, head_dim=4, split=(1, 1, 1), basis_size=2)
        x = torch.randn(5, 4, generator=generator, dtype=F64)
        upstream = torch.randn(5, 4, generator=generator, dtype=F64)
        results = gradcheck.check_lpa_gradients(x, params, upstream)
        assert "x" in results and "W_V" in results
        for key, result in results.items():
            assert result.passed(), f"{key}: {result.rel_error:.2e}"

    def test_zero_upstream_gives_zero_gradients(self, lpa_params, generator):
        x = torch.randn(6, 8, generator=generator, dtype=F64)
        grads = mixer.lpa_gradients(x, lpa_params, torch.zeros_like(x))
        assert all(float(g.abs().max()) == 0.0 for g in grads.values() if g.numel())

    def test_upstream_shape_checked(self, lpa_params):
        with pytest.raises(ShapeError):
            mixer.lpa_gradients(torch.zeros(4, 8, dtype=F64), lpa_params, torch.zeros(3, 8, dtype=F64))


def test_relative_error_guards_zero():
    assert gradcheck.relative_error(torch.zeros(3), torch.zeros(3)) == 0.0
