import math

import pytest
import torch

from exceptions import ParameterError, ShapeError
from services import numerics

F64 = torch.float64


def test_softmax_uniform_for_equal_logits():
    out = numerics.softmax(torch.zeros(3, dtype=F64), 1.0)
    assert torch.allclose(out, torch.full((3,), 1.0 / 3, dtype=F64), atol=1e-15)


def test_softmax_low_temperature_is_one_hot():
    out = numerics.softmax(torch.tensor([10.0, 0.0], dtype=F64), 0.01)
    assert abs(float(out[0]) - 1.0) < 1e-9
    assert float(out[1]) < 1e-9


def test_softmax_matches_direct_sum():
    x = torch.randn(8, generator=torch.Generator().manual_seed(3), dtype=F64)
    e = [math.exp(v / 0.7) for v in x.tolist()]
    expected = torch.tensor([v / sum(e) for v in e], dtype=F64)
    assert float((numerics.softmax(x, 0.7) - expected).abs().max()) < 1e-12


def test_softmax_survives_large_logits():
    out = numerics.softmax(torch.tensor([1000.0, 999.0]), 1.0)
    assert torch.isfinite(out).all()


@pytest.mark.parametrize("tau", [0.0, -1.0])
def test_softmax_rejects_non_positive_temperature(tau):
    with pytest.raises(ParameterError):
        numerics.softmax(torch.zeros(2), tau)


def test_softplus_overflow_safe():
    x = torch.tensor([-1000.0, 0.0, 1000.0], dtype=F64)
    out = numerics.softplus(x)
    assert torch.isfinite(out).all()
    assert float(out[2]) == 1000.0
    assert abs(float(out[1]) - math.log(2.0)) < 1e-15


def test_inverse_softplus_round_trips():
    y = torch.tensor([0.1, 1.0, 4.0, 30.0], dtype=F64)
    assert torch.allclose(numerics.softplus(numerics.inverse_softplus(y)), y, atol=1e-12)


def test_inverse_softplus_rejects_non_positive():
    with pytest.raises(ParameterError):
        numerics.inverse_softplus(torch.tensor([0.0]))


def test_matmul_shape_mismatch():
    with pytest.raises(ShapeError):
        numerics.matmul(torch.zeros(2, 3), torch.zeros(4, 2))


def test_linear_applies_bias():
    x = torch.tensor([[1.0, 2.0]])
    w = torch.tensor([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
    b = torch.tensor([0.5, 0.0, -1.0])
    assert numerics.linear(x, w, b).tolist() == [[1.5, 2.0, 2.0]]


def test_dwconv_delta_kernel_is_identity():
    x = torch.randn(7, 3, generator=torch.Generator().manual_seed(0), dtype=F64)
    kernel = torch.zeros(4, 3, dtype=F64)
    kernel[-1] = 1.0
    assert torch.equal(numerics.causal_dwconv(x, kernel), x)


def test_dwconv_hand_example():
    x = torch.tensor([[1.0], [2.0], [3.0], [4.0]], dtype=F64)
    kernel = torch.tensor([[1.0], [1.0]], dtype=F64)
    assert numerics.causal_dwconv(x, kernel).flatten().tolist() == [1.0, 3.0, 5.0, 7.0]


def test_dwconv_batched_matches_single():
    g = torch.Generator().manual_seed(1)
    x = torch.randn(2, 6, 3, generator=g, dtype=F64)
    kernel = torch.randn(3, 3, generator=g, dtype=F64)
    batched = numerics.causal_dwconv(x, kernel)
    assert torch.allclose(batched[1], numerics.causal_dwconv(x[1], kernel), atol=1e-15)


def test_dwconv_channel_mismatch():
    with pytest.raises(ShapeError):
        numerics.causal_dwconv(torch.zeros(4, 2), torch.zeros(3, 5))


def test_prefix_sum_and_range():
    x = torch.tensor([[1.0], [2.0], [3.0]])
    prefix = numerics.prefix_sum(x)
    assert prefix.flatten().tolist() == [0.0, 1.0, 3.0, 6.0]
    assert float(numerics.range_sum(prefix, 1, 2)) == 5.0


def test_range_sum_rejects_bad_range():
    prefix = numerics.prefix_sum(torch.ones(3, 1))
    with pytest.raises(ParameterError):
        numerics.range_sum(prefix, 2, 1)
    with pytest.raises(ParameterError):
        numerics.range_sum(prefix, 0, 3)


def test_split_and_merge_heads_invert():
    x = torch.arange(24.0).view(3, 8)
    heads = numerics.split_heads(x, 2)
    assert heads.shape == (2, 3, 4)
    assert torch.equal(heads[1, 0], x[0, 4:])
    assert torch.equal(numerics.merge_heads(heads), x)
