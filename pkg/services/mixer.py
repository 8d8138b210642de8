"""
Pulse Accumulator Layer

Forward pass of the gated accumulation layer, its parameter gradients and
seeded default initialization.
"""

import logging
import math
from typing import Dict, Optional, Tuple

import numpy as np
import torch

from config import GATE_CONFIG, LPA_CONFIG
from exceptions import ConfigError, ShapeError
from models.gate_params import (
    AperiodicGateParams,
    GateMatrix,
    GateParams,
    PeriodicGateParams,
    PositionalGateParams,
)
from models.lpa_params import LpaLayerParams, LpaOutput
from services import gates as gate_service
from services import numerics

logger = logging.getLogger(__name__)


def gated_means(values: torch.Tensor, gate_values: torch.Tensor,
                eps: float = LPA_CONFIG["EPSILON"]) -> Tuple[torch.Tensor, torch.Tensor]:
    """
    Gate-weighted means of per-head values.

    Args:
        values: Value-projected inputs (..., H, n, d_h)
        gate_values: Gates (..., H, n, P)
        eps: Pulses whose total gate mass is below eps are inactive

    Returns:
        Tuple of summaries (..., H, P, d_h) and active flags (..., H, P)
    """
    mass = gate_values.sum(dim=-2)
    active = mass >= eps
    totals = torch.einsum("...hnp,...hnc->...hpc", gate_values, values)
    safe = torch.where(active, mass, torch.ones_like(mass))
    summaries = torch.where(active.unsqueeze(-1), totals / safe.unsqueeze(-1), torch.zeros_like(totals))
    return summaries, active


def pulse_summary(x: torch.Tensor, gates: GateMatrix, w_v: torch.Tensor,
                  eps: float = LPA_CONFIG["EPSILON"]) -> Tuple[torch.Tensor, torch.Tensor]:
    """
    Compute v_bar_p = sum_t g_pt W_V x_t / sum_t g_pt for every pulse.

    Args:
        x: Input (..., n, d)
        gates: Evaluated gates with H heads
        w_v: Value projection (d, d)
        eps: Division guard

    Returns:
        Tuple of summaries (..., H, P, d/H) and active flags (..., H, P)
    """
    if x.shape[-2] != gates.length:
        raise ShapeError(f"Input has {x.shape[-2]} positions but gates cover {gates.length}")
    values = numerics.split_heads(numerics.linear(x, w_v), gates.heads)
    return gated_means(values, gates.values, eps)


def accumulate(summaries: torch.Tensor, gate_values: torch.Tensor, params: LpaLayerParams,
               eps: float = LPA_CONFIG["EPSILON"]) -> torch.Tensor:
    """
    Broadcast pulse summaries back to positions and apply W_O and the active mask.

    Args:
        summaries: Pulse summaries (..., H, P, d_h)
        gate_values: Gates (..., H, n, P), soft or binary
        params: Layer parameters (pulse weights, amplitudes, W_O)
        eps: Positions whose weighted coverage is below eps output zero

    Returns:
        Output (..., n, d)
    """
    weighted = gate_values * params.pulse_weights.unsqueeze(-2)
    coverage = weighted.sum(dim=-1)
    numer = torch.einsum("...hnp,...hpc->...hnc", weighted * params.amp.unsqueeze(-2), summaries)
    covered = coverage >= eps
    safe = torch.where(covered, coverage, torch.ones_like(coverage))
    mixed = torch.where(covered.unsqueeze(-1), numer / safe.unsqueeze(-1), torch.zeros_like(numer))

    out = numerics.linear(numerics.merge_heads(mixed), params.w_o)
    mask = active_mask(gate_values)
    return mask.unsqueeze(-1) * out


def active_mask(gate_values: torch.Tensor) -> torch.Tensor:
    """m_t = 1 - exp(-sum of every gate at t), (..., n)."""
    return 1.0 - torch.exp(-gate_values.sum(dim=(-3, -1)))


def layer_bias(params: LpaLayerParams, prev_gate_mean: Optional[torch.Tensor]) -> Optional[torch.Tensor]:
    """Cross-layer logit bias (..., H, P), or None when the layer has no coordination input."""
    if params.cross_proj is None or prev_gate_mean is None:
        return None
    bias = gate_service.cross_layer_bias(prev_gate_mean, params.cross_proj)
    return bias.reshape(*bias.shape[:-1], params.heads, params.pulses_per_head)


def lpa_forward(x: torch.Tensor, params: LpaLayerParams,
                prev_gate_mean: Optional[torch.Tensor] = None) -> LpaOutput:
    """
    Evaluate the pulse accumulator layer.

    Args:
        x: Input (..., n, d)
        params: Layer parameters
        prev_gate_mean: Mean gate pattern of the previous LPA layer, if any

    Returns:
        LpaOutput with y (..., n, d) and diagnostics
    """
    if x.shape[-1] != params.dim:
        raise ShapeError(f"Input width {x.shape[-1]} does not match layer width {params.dim}")

    tau = params.temperature
    if x.shape[-2] == 0:
        heads, pulses = params.heads, params.pulses_per_head
        lead = x.shape[:-2]
        empty = x.new_zeros(*lead, heads, 0, pulses)
        return LpaOutput(
            y=x.new_zeros(x.shape),
            gates=GateMatrix(values=empty, families=params.gates.families, temperature=tau),
            mask=x.new_zeros(*lead, 0),
            summaries=x.new_zeros(*lead, heads, pulses, params.head_dim),
            active_pulses=torch.zeros(*lead, heads, pulses, dtype=torch.bool),
        )

    gates = gate_service.evaluate_gates(x, params.gates, tau, layer_bias(params, prev_gate_mean))
    summaries, active = pulse_summary(x, gates, params.w_v)
    y = accumulate(summaries, gates.values, params)
    return LpaOutput(y=y, gates=gates, mask=active_mask(gates.values),
                     summaries=summaries, active_pulses=active)


def lpa_gradients(x: torch.Tensor, params: LpaLayerParams, upstream: torch.Tensor,
                  prev_gate_mean: Optional[torch.Tensor] = None) -> Dict[str, torch.Tensor]:
    """
    Gradients of <upstream, lpa_forward(x)> with respect to every parameter and x.

    Args:
        x: Input (..., n, d)
        params: Layer parameters
        upstream: Output cotangent, same shape as the output
        prev_gate_mean: Optional cross-layer input (treated as a constant)

    Returns:
        Mapping from parameter key (as in the parameter store) to gradient, plus "x"
    """
    if upstream.shape != x.shape:
        raise ShapeError(f"Upstream gradient {tuple(upstream.shape)} does not match output {tuple(x.shape)}")

    leaves = params.clone(requires_grad=True)
    x_leaf = x.detach().clone().requires_grad_(True)
    named = leaves.named_tensors()

    with torch.enable_grad():
        y = lpa_forward(x_leaf, leaves, prev_gate_mean).y
        objective = (upstream * y).sum()
        inputs = list(named.values()) + [x_leaf]
        grads = torch.autograd.grad(objective, inputs, allow_unused=True)

    result = {}
    for key, tensor, grad in zip(list(named) + ["x"], inputs, grads):
        result[key] = torch.zeros_like(tensor) if grad is None else grad.detach()
    return result


def init_lpa_params(dim: int, heads: int = LPA_CONFIG["HEADS"],
                    split: Tuple[int, int, int] = GATE_CONFIG["PULSE_SPLIT"],
                    generator: Optional[torch.Generator] = None,
                    dtype: torch.dtype = torch.float32,
                    kernel_size: int = GATE_CONFIG["KERNEL_SIZE"],
                    basis_size: int = GATE_CONFIG["BASIS_SIZE"],
                    temperature: float = LPA_CONFIG["TEMPERATURE"],
                    prev_pulses: Optional[int] = None) -> LpaLayerParams:
    """
    Seeded default parameters for a pulse accumulator layer.

    Args:
        dim: Model width d (divisible by heads, with an even per-head width)
        heads: Number of heads H
        split: Pulses per head for (aperiodic, periodic, positional)
        generator: Torch generator for reproducible draws
        dtype: Parameter dtype
        kernel_size: Causal convolution taps
        basis_size: Positional sin/cos pairs K
        temperature: Layer temperature
        prev_pulses: When set, add a zero cross-layer projection from that many pulses

    Returns:
        LpaLayerParams
    """
    if dim % heads != 0:
        raise ConfigError(f"Width {dim} is not divisible by {heads} heads")
    dh = dim // heads
    half = dh // 2
    n_a, n_p, n_s = split
    scale = GATE_CONFIG["INIT_SCALE"]

    def randn(*shape: int, std: float = 1.0) -> torch.Tensor:
        return torch.randn(*shape, generator=generator, dtype=dtype) * std

    kernel = randn(heads, kernel_size, dh, std=scale)
    kernel[:, -1, :] += 1.0
    aperiodic = AperiodicGateParams(
        conv_kernel=kernel,
        w1=randn(heads, dh, dh, std=dh ** -0.5),
        b1=torch.zeros(heads, dh, dtype=dtype),
        w2=randn(heads, half, dh, std=dh ** -0.5),
        b2=torch.zeros(heads, half, dtype=dtype),
        q=randn(heads, n_a, half, std=max(half, 1) ** -0.5),
        f_w=torch.zeros(heads, half, dtype=dtype),
        f_b=torch.full((heads,), float(numerics.inverse_softplus(torch.tensor(GATE_CONFIG["INIT_HALF_WIDTH"]))),
                       dtype=dtype),
    )

    periodic = PeriodicGateParams(
        rho=initial_period_logits(n_p, dtype).expand(heads, n_p).clone(),
        phase=torch.rand(heads, n_p, generator=generator, dtype=dtype) * 2.0 * math.pi,
        duty_logit=torch.zeros(heads, n_p, dtype=dtype),
    )
    positional = PositionalGateParams(
        alpha=randn(heads, n_s, basis_size, std=GATE_CONFIG["POSITIONAL_INIT_STD"]),
        beta=randn(heads, n_s, basis_size, std=GATE_CONFIG["POSITIONAL_INIT_STD"]),
        bias=torch.zeros(heads, n_s, dtype=dtype),
    )

    pulses = n_a + n_p + n_s
    return LpaLayerParams(
        gates=GateParams(aperiodic=aperiodic, periodic=periodic, positional=positional),
        wlogit=torch.zeros(heads, pulses, dtype=dtype),
        amp=torch.ones(heads, pulses, dtype=dtype),
        w_v=randn(dim, dim, std=dim ** -0.5),
        w_o=randn(dim, dim, std=dim ** -0.5),
        cross_proj=None if prev_pulses is None else torch.zeros(heads * pulses, prev_pulses, dtype=dtype),
        temperature=temperature,
    )


def initial_period_logits(pulses: int, dtype: torch.dtype = torch.float32) -> torch.Tensor:
    """rho values whose periods are spaced geometrically over the configured frame range."""
    if pulses == 0:
        return torch.zeros(0, dtype=dtype)
    low, high = GATE_CONFIG["PERIOD_RANGE"]
    target = torch.from_numpy(np.geomspace(low, high, pulses)).to(dtype)
    return numerics.inverse_softplus(torch.log2(target) - GATE_CONFIG["MIN_PERIOD_LOG2"])
