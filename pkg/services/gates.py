"""
Gate Evaluation

This module evaluates the three gate families of a pulse accumulator layer:
content-dependent aperiodic windows, periodic square waves and learned
positional masks. All functions are pure and differentiable.
"""

import logging
import math
from typing import Optional, Tuple

import torch

from config import GATE_CONFIG
from exceptions import ShapeError
from models.gate_params import (
    AperiodicGateParams,
    GateMatrix,
    GateParams,
    PeriodicGateParams,
    PositionalGateParams,
)
from services import numerics

logger = logging.getLogger(__name__)


def frame_positions(n: int, like: torch.Tensor) -> torch.Tensor:
    return torch.arange(n, dtype=like.dtype, device=like.device)


def normalized_positions(n: int, like: torch.Tensor) -> torch.Tensor:
    """t / (n - 1); a single frame sits at 0."""
    t = frame_positions(n, like)
    if n <= 1:
        return torch.zeros_like(t)
    return t / (n - 1)


def periods(params: PeriodicGateParams) -> torch.Tensor:
    """T_p = 2^(softplus(rho) + 2), never below four frames."""
    return torch.pow(2.0, numerics.softplus(params.rho) + GATE_CONFIG["MIN_PERIOD_LOG2"])


def duty_cycles(params: PeriodicGateParams) -> torch.Tensor:
    return numerics.sigmoid(params.duty_logit)


def predict_hidden(x: torch.Tensor, params: AperiodicGateParams) -> torch.Tensor:
    """
    Run the aperiodic gate predictor h = MLP(DWConv(X)) for every head.

    Args:
        x: Input (..., n, d) with d = H * d_h
        params: Aperiodic parameters with stacked heads

    Returns:
        Hidden features (..., H, n, d_h/2); position t only sees inputs up to t
    """
    heads, k, dh = params.conv_kernel.shape
    if x.shape[-1] != heads * dh:
        raise ShapeError(f"Input width {x.shape[-1]} does not match {heads} heads of width {dh}")

    kernel = params.conv_kernel.permute(1, 0, 2).reshape(k, heads * dh)
    u = numerics.split_heads(numerics.causal_dwconv(x, kernel), heads)
    z = torch.einsum("...hnc,hoc->...hno", u, params.w1) + params.b1.unsqueeze(-2)
    z = numerics.gelu(z)
    return torch.einsum("...hnc,hoc->...hno", z, params.w2) + params.b2.unsqueeze(-2)


def aperiodic_gate(x: torch.Tensor, params: AperiodicGateParams, tau: float,
                   bias: Optional[torch.Tensor] = None) -> Tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """
    Evaluate content-dependent rectangular pulses.

    Args:
        x: Input (..., n, d)
        params: Aperiodic parameters
        tau: Temperature, shared by the center softmax and the gate sigmoids
        bias: Optional additive logit bias (..., H, P_a)

    Returns:
        Tuple of gates (..., H, n, P_a), centers (..., H, P_a) and half-widths (..., H, P_a)
    """
    numerics.check_temperature(tau)
    n = x.shape[-2]
    if n < 1:
        raise ShapeError("Aperiodic gates need at least one position")

    hidden = predict_hidden(x, params)
    scores = torch.einsum("...hnc,hpc->...hnp", hidden, params.q)
    weights = numerics.softmax(scores, tau, dim=-2)

    t = frame_positions(n, x)
    centers = torch.einsum("...hnp,n->...hp", weights, t)
    pooled = torch.einsum("...hnp,...hnc->...hpc", weights, hidden)
    half_widths = numerics.softplus(
        torch.einsum("...hpc,hc->...hp", pooled, params.f_w) + params.f_b.unsqueeze(-1)
    )

    reach = half_widths.unsqueeze(-2)
    if bias is not None:
        reach = reach + bias.unsqueeze(-2)
    c = centers.unsqueeze(-2)
    tt = t.unsqueeze(-1)
    gates = numerics.sigmoid((tt - c + reach) / tau) * numerics.sigmoid((c + reach - tt) / tau)
    return gates, centers, half_widths


def periodic_logits(params: PeriodicGateParams, n: int) -> torch.Tensor:
    """cos(2 pi t / T_p - phi_p) - cos(pi d_p), shape (H, n, P_per)."""
    t = frame_positions(n, params.rho).view(1, n, 1)
    theta = 2.0 * math.pi * t / periods(params).unsqueeze(1) - params.phase.unsqueeze(1)
    return torch.cos(theta) - torch.cos(math.pi * duty_cycles(params)).unsqueeze(1)


def periodic_gate(params: PeriodicGateParams, n: int, tau: float,
                  bias: Optional[torch.Tensor] = None) -> torch.Tensor:
    """
    Evaluate periodic square-wave gates (content-independent).

    Returns:
        Gates (H, n, P_per), or (..., H, n, P_per) when a batched bias is given
    """
    numerics.check_temperature(tau)
    z = periodic_logits(params, n)
    if bias is not None:
        z = z + bias.unsqueeze(-2)
    return numerics.sigmoid(z / tau)


def positional_basis(n: int, basis_size: int, like: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
    """sin(2 pi k t_hat) and cos(2 pi k t_hat) for k = 1..K, each (n, K)."""
    t_hat = normalized_positions(n, like)
    k = torch.arange(1, basis_size + 1, dtype=like.dtype, device=like.device)
    angle = 2.0 * math.pi * t_hat.unsqueeze(-1) * k
    return torch.sin(angle), torch.cos(angle)


def positional_logits(params: PositionalGateParams, n: int) -> torch.Tensor:
    """Basis expansion plus bias, shape (H, n, P_pos)."""
    sin, cos = positional_basis(n, params.basis_size, params.alpha)
    z = torch.einsum("nk,hpk->hnp", sin, params.alpha) + torch.einsum("nk,hpk->hnp", cos, params.beta)
    return z + params.bias.unsqueeze(1)


def positional_gate(params: PositionalGateParams, n: int, tau: float,
                    bias: Optional[torch.Tensor] = None) -> torch.Tensor:
    """Evaluate learned positional gates, (H, n, P_pos)."""
    numerics.check_temperature(tau)
    z = positional_logits(params, n)
    if bias is not None:
        z = z + bias.unsqueeze(-2)
    return numerics.sigmoid(z / tau)


def cross_layer_bias(prev_gate_mean: torch.Tensor, proj: torch.Tensor) -> torch.Tensor:
    """
    Project the previous layer's mean gate pattern to one logit bias per pulse.

    Args:
        prev_gate_mean: Mean over positions of the previous layer's gates (..., P_prev)
        proj: Projection (P, P_prev)

    Returns:
        Bias (..., P)
    """
    if prev_gate_mean.shape[-1] != proj.shape[-1]:
        raise ShapeError(f"Previous gate pattern has {prev_gate_mean.shape[-1]} pulses, "
                         f"projection expects {proj.shape[-1]}")
    return numerics.linear(prev_gate_mean, proj)


def evaluate_gates(x: torch.Tensor, params: GateParams, tau: float,
                   bias: Optional[torch.Tensor] = None) -> GateMatrix:
    """
    Evaluate every gate of a layer.

    Args:
        x: Input (..., n, d)
        params: Gate parameters for all heads
        tau: Temperature
        bias: Optional per-pulse logit bias (..., H, P)

    Returns:
        GateMatrix with values (..., H, n, P) ordered aperiodic, periodic, positional
    """
    n = x.shape[-2]
    a, p, _ = params.split
    bias_a = bias_p = bias_s = None
    if bias is not None:
        bias_a, bias_p, bias_s = bias[..., :a], bias[..., a:a + p], bias[..., a + p:]

    gates_a, centers, half_widths = aperiodic_gate(x, params.aperiodic, tau, bias_a)
    gates_p = periodic_gate(params.periodic, n, tau, bias_p)
    gates_s = positional_gate(params.positional, n, tau, bias_s)

    shape = gates_a.shape[:-1]
    values = torch.cat([
        gates_a,
        gates_p.expand(*shape, gates_p.shape[-1]),
        gates_s.expand(*shape, gates_s.shape[-1]),
    ], dim=-1)
    return GateMatrix(values=values, families=params.families, temperature=tau,
                      centers=centers, half_widths=half_widths)
