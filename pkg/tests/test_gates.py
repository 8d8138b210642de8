import dataclasses
import math

import pytest
import torch

from exceptions import ConfigError, ParameterError, ShapeError
from models.gate_params import AperiodicGateParams, PeriodicGateParams, PositionalGateParams
from services import gates, numerics

F64 = torch.float64


def periodic_params(period, phase=0.0, duty_logit=0.0):
    rho = numerics.inverse_softplus(torch.tensor([[math.log2(period) - 2.0]], dtype=F64))
    return PeriodicGateParams(rho=rho, phase=torch.tensor([[phase]], dtype=F64),
                              duty_logit=torch.tensor([[duty_logit]], dtype=F64))


def positional_params(bias=0.0, basis_size=4):
    return PositionalGateParams(alpha=torch.zeros(1, 1, basis_size, dtype=F64),
                                beta=torch.zeros(1, 1, basis_size, dtype=F64),
                                bias=torch.tensor([[bias]], dtype=F64))


class TestPredictor:
    def test_zero_input_gives_zero_features(self, lpa_params):
        hidden = gates.predict_hidden(torch.zeros(5, 8, dtype=F64), lpa_params.gates.aperiodic)
        assert hidden.shape == (2, 5, 2)
        assert float(hidden.abs().max()) == 0.0

    def test_future_inputs_do_not_leak(self, lpa_params, generator):
        x = torch.randn(9, 8, generator=generator, dtype=F64)
        bumped = x.clone()
        bumped[6] += 5.0
        ap = lpa_params.gates.aperiodic
        assert torch.equal(gates.predict_hidden(x, ap)[:, :6], gates.predict_hidden(bumped, ap)[:, :6])

    def test_odd_head_width_rejected(self):
        with pytest.raises(ConfigError):
            AperiodicGateParams(conv_kernel=torch.zeros(1, 5, 3), w1=torch.zeros(1, 3, 3), b1=torch.zeros(1, 3),
                                w2=torch.zeros(1, 1, 3), b2=torch.zeros(1, 1), q=torch.zeros(1, 1, 1),
                                f_w=torch.zeros(1, 1), f_b=torch.zeros(1))

    def test_width_mismatch_rejected(self, lpa_params):
        with pytest.raises(ShapeError):
            gates.predict_hidden(torch.zeros(4, 6, dtype=F64), lpa_params.gates.aperiodic)


class TestAperiodic:
    def test_low_temperature_is_rectangular(self, lpa_params, generator):
        x = torch.randn(30, 8, generator=generator, dtype=F64)
        g, centers, half_widths = gates.aperiodic_gate(x, lpa_params.gates.aperiodic, 0.01)
        t = torch.arange(30, dtype=F64)
        for h in range(2):
            distance = (t - centers[h, 0]).abs()
            inside = distance < half_widths[h, 0] - 0.2
            outside = distance > half_widths[h, 0] + 0.2
            assert bool((g[h, inside, 0] > 0.99).all())
            assert bool((g[h, outside, 0] < 0.01).all())

    def test_centers_and_widths_in_range(self, lpa_params, generator):
        x = torch.randn(3, 12, 8, generator=generator, dtype=F64)
        g, centers, half_widths = gates.aperiodic_gate(x, lpa_params.gates.aperiodic, 1.0)
        assert g.shape == (3, 2, 12, 1)
        assert float(centers.min()) >= 0.0 and float(centers.max()) <= 11.0
        assert float(half_widths.min()) > 0.0

    def test_bias_widens_the_window(self, lpa_params, generator):
        x = torch.randn(20, 8, generator=generator, dtype=F64)
        ap = lpa_params.gates.aperiodic
        narrow, _, _ = gates.aperiodic_gate(x, ap, 0.5)
        wide, _, _ = gates.aperiodic_gate(x, ap, 0.5, bias=torch.full((2, 1), 3.0, dtype=F64))
        assert bool((wide >= narrow).all())

    def test_non_positive_temperature_rejected(self, lpa_params):
        with pytest.raises(ParameterError):
            gates.aperiodic_gate(torch.zeros(4, 8, dtype=F64), lpa_params.gates.aperiodic, 0.0)


class TestPeriodic:
    def test_half_duty_on_region(self):
        g = gates.periodic_gate(periodic_params(8.0), 16, 0.01)[0, :, 0]
        cos = torch.cos(math.pi * torch.arange(16, dtype=F64) / 4)
        assert bool((g[cos > 1e-6] > 0.99).all())
        assert bool((g[cos < -1e-6] < 0.01).all())
        assert bool(((g[cos.abs() <= 1e-6] - 0.5).abs() < 1e-3).all())

    def test_full_duty_is_always_on(self):
        g = gates.periodic_gate(periodic_params(10.0, duty_logit=40.0), 50, 1.0)
        assert float(g.min()) >= 0.5

    def test_period_floor(self):
        rho = torch.tensor([[-1000.0, 0.0, 1000.0]], dtype=F64)
        params = PeriodicGateParams(rho=rho, phase=torch.zeros_like(rho), duty_logit=torch.zeros_like(rho))
        assert float(gates.periods(params).min()) >= 4.0

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ShapeError):
            PeriodicGateParams(rho=torch.zeros(1, 2), phase=torch.zeros(1, 3), duty_logit=torch.zeros(1, 2))


class TestPositional:
    def test_zero_coefficients_give_half(self):
        g = gates.positional_gate(positional_params(), 7, 1.0)
        assert torch.allclose(g, torch.full_like(g, 0.5))

    def test_positive_bias_saturates(self):
        g = gates.positional_gate(positional_params(bias=10.0), 7, 1.0)
        assert torch.allclose(g, torch.full_like(g, 1.0 / (1.0 + math.exp(-10.0))))

    def test_single_frame_uses_origin(self):
        params = positional_params()
        params = dataclasses.replace(params, beta=torch.ones_like(params.beta))
        z = gates.positional_logits(params, 1)
        assert float(z[0, 0, 0]) == pytest.approx(4.0)

    def test_cos_basis_is_symmetric(self, generator):
        params = PositionalGateParams(alpha=torch.zeros(2, 3, 8, dtype=F64),
                                      beta=torch.randn(2, 3, 8, generator=generator, dtype=F64),
                                      bias=torch.randn(2, 3, generator=generator, dtype=F64))
        g = gates.positional_gate(params, 23, 0.8)
        assert float((g - g.flip(-2)).abs().max()) < 1e-12


class TestCrossLayer:
    def test_zero_projection_gives_zero_bias(self):
        bias = gates.cross_layer_bias(torch.rand(6, dtype=F64), torch.zeros(4, 6, dtype=F64))
        assert torch.equal(bias, torch.zeros(4, dtype=F64))

    def test_all_off_previous_layer_gives_zero_bias(self, generator):
        bias = gates.cross_layer_bias(torch.zeros(6, dtype=F64), torch.randn(4, 6, generator=generator, dtype=F64))
        assert torch.equal(bias, torch.zeros(4, dtype=F64))

    def test_dimension_mismatch(self):
        with pytest.raises(ShapeError):
            gates.cross_layer_bias(torch.zeros(5), torch.zeros(4, 6))


def test_evaluate_gates_orders_families(lpa_params, generator):
    x = torch.randn(2, 10, 8, generator=generator, dtype=F64)
    matrix = gates.evaluate_gates(x, lpa_params.gates, 1.0)
    assert matrix.values.shape == (2, 2, 10, 3)
    assert matrix.families == ("aperiodic", "periodic", "positional")
    assert float(matrix.values.min()) >= 0.0 and float(matrix.values.max()) <= 1.0
    periodic = gates.periodic_gate(lpa_params.gates.periodic, 10, 1.0)
    assert torch.equal(matrix.values[1, :, :, 1:2], periodic)
