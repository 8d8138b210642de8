"""
Dense tensor kernels

Pure functions on torch tensors. Every kernel accepts an optional leading batch
dimension; the sequence axis is always -2 and the channel axis -1.
"""

from typing import Optional

import torch
import torch.nn.functional as F

from exceptions import ParameterError, ShapeError


def check_temperature(tau: float) -> None:
    if not tau > 0:
        raise ParameterError(f"Temperature must be positive, got {tau}")


def softmax(x: torch.Tensor, tau: float = 1.0, dim: int = -1) -> torch.Tensor:
    """
    Temperature softmax with max subtraction.

    Args:
        x: Input logits
        tau: Positive temperature
        dim: Axis to normalize over

    Returns:
        Probabilities along ``dim`` summing to one
    """
    check_temperature(tau)
    z = x / tau
    z = z - z.amax(dim=dim, keepdim=True).detach()
    e = torch.exp(z)
    return e / e.sum(dim=dim, keepdim=True)


def sigmoid(x: torch.Tensor) -> torch.Tensor:
    return torch.sigmoid(x)


def softplus(x: torch.Tensor) -> torch.Tensor:
    """Overflow-safe softplus: log1p(exp(-|x|)) + max(x, 0)."""
    return torch.log1p(torch.exp(-x.abs())) + x.clamp(min=0)


def inverse_softplus(y: torch.Tensor) -> torch.Tensor:
    """Inverse of softplus for y > 0."""
    if torch.any(y <= 0):
        raise ParameterError("inverse_softplus is only defined for positive values")
    return y + torch.log(-torch.expm1(-y))


def gelu(x: torch.Tensor) -> torch.Tensor:
    """Exact (erf) GELU."""
    return F.gelu(x)


def matmul(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Matrix product with an explicit inner-dimension check."""
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"Cannot multiply {tuple(a.shape)} by {tuple(b.shape)}")
    return torch.matmul(a, b)


def linear(x: torch.Tensor, weight: torch.Tensor, bias: Optional[torch.Tensor] = None) -> torch.Tensor:
    """
    Apply y = x W^T + b.

    Args:
        x: Input (..., d_in)
        weight: Weight matrix (d_out, d_in)
        bias: Optional bias (d_out,)

    Returns:
        Output (..., d_out)
    """
    if x.shape[-1] != weight.shape[-1]:
        raise ShapeError(f"Input width {x.shape[-1]} does not match weight {tuple(weight.shape)}")
    y = matmul(x, weight.transpose(-1, -2))
    if bias is not None:
        y = y + bias
    return y


def causal_dwconv(x: torch.Tensor, kernel: torch.Tensor) -> torch.Tensor:
    """
    Causal depthwise convolution.

    out[t, c] = sum_j kernel[j, c] * x[t - k + 1 + j, c], zeros outside the sequence.

    Args:
        x: Input (..., n, d)
        kernel: Taps (k, d); tap k-1 multiplies the current position

    Returns:
        Output (..., n, d)
    """
    if kernel.dim() != 2 or kernel.shape[0] < 1:
        raise ShapeError(f"Kernel must be (k, d) with k >= 1, got {tuple(kernel.shape)}")
    k, d = kernel.shape
    if x.shape[-1] != d:
        raise ShapeError(f"Kernel has {d} channels but input has {x.shape[-1]}")

    lead = x.shape[:-2]
    n = x.shape[-2]
    if n == 0:
        return x.clone()
    flat = x.reshape(-1, n, d).transpose(1, 2)          # (B, d, n)
    padded = F.pad(flat, (k - 1, 0))
    weight = kernel.transpose(0, 1).unsqueeze(1)         # (d, 1, k)
    out = F.conv1d(padded, weight, groups=d)
    return out.transpose(1, 2).reshape(*lead, n, d)


def prefix_sum(x: torch.Tensor) -> torch.Tensor:
    """
    Exclusive prefix sums along the sequence axis.

    Args:
        x: Input (..., n, d)

    Returns:
        C of shape (..., n+1, d) with C[0] = 0 and C[t+1] = C[t] + x[t]
    """
    zero = torch.zeros_like(x[..., :1, :])
    return torch.cat([zero, torch.cumsum(x, dim=-2)], dim=-2)


def range_sum(prefix: torch.Tensor, start: int, end: int) -> torch.Tensor:
    """Sum of x[start..end] (inclusive) from its prefix sums."""
    if start < 0 or end >= prefix.shape[-2] - 1 or start > end:
        raise ParameterError(f"Invalid range [{start}, {end}] for length {prefix.shape[-2] - 1}")
    return prefix[..., end + 1, :] - prefix[..., start, :]


def split_heads(x: torch.Tensor, heads: int) -> torch.Tensor:
    """(..., n, d) -> (..., H, n, d/H)."""
    d = x.shape[-1]
    if d % heads != 0:
        raise ShapeError(f"Width {d} is not divisible by {heads} heads")
    n = x.shape[-2]
    return x.reshape(*x.shape[:-2], n, heads, d // heads).transpose(-3, -2)


def merge_heads(x: torch.Tensor) -> torch.Tensor:
    """(..., H, n, d_h) -> (..., n, H * d_h)."""
    heads, n, dh = x.shape[-3:]
    return x.transpose(-3, -2).reshape(*x.shape[:-3], n, heads * dh)


