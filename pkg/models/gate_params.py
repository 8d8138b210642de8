from dataclasses import dataclass
from typing import Optional, Tuple

import torch

from exceptions import ConfigError, ShapeError
from models.tensor_group import TensorGroup

APERIODIC = "aperiodic"
PERIODIC = "periodic"
POSITIONAL = "positional"
FAMILIES = (APERIODIC, PERIODIC, POSITIONAL)


@dataclass
class AperiodicGateParams(TensorGroup):
    """
    Content-dependent rectangular pulses.

    Every tensor carries a leading head axis H. With per-head width d_h the
    predictor is DWConv(k) -> Linear(d_h -> d_h) -> GELU -> Linear(d_h -> d_h/2).
    """
    conv_kernel: torch.Tensor   # (H, k, d_h)
    w1: torch.Tensor            # (H, d_h, d_h)
    b1: torch.Tensor            # (H, d_h)
    w2: torch.Tensor            # (H, d_h/2, d_h)
    b2: torch.Tensor            # (H, d_h/2)
    q: torch.Tensor             # (H, P_a, d_h/2) query vectors
    f_w: torch.Tensor           # (H, d_h/2) half-width head
    f_b: torch.Tensor           # (H,)

    def __post_init__(self):
        heads, dh = self.w1.shape[0], self.w1.shape[-1]
        if dh % 2 != 0:
            raise ConfigError(f"Per-head width must be even for the gate predictor, got {dh}")
        if self.w2.shape[-2] != dh // 2:
            raise ShapeError(f"Predictor output dim {self.w2.shape[-2]} != d_h/2 = {dh // 2}")
        if self.q.shape[0] != heads or self.q.shape[-1] != dh // 2:
            raise ShapeError(f"Query vectors {tuple(self.q.shape)} do not match predictor width {dh // 2}")

    @property
    def pulses(self) -> int:
        return self.q.shape[1]

    @property
    def kernel_size(self) -> int:
        return self.conv_kernel.shape[1]


@dataclass
class PeriodicGateParams(TensorGroup):
    """Square-wave windows: period 2^(softplus(rho)+2), phase, duty sigmoid(duty_logit)."""
    rho: torch.Tensor           # (H, P_per)
    phase: torch.Tensor         # (H, P_per)
    duty_logit: torch.Tensor    # (H, P_per)

    def __post_init__(self):
        if not (self.rho.shape == self.phase.shape == self.duty_logit.shape):
            raise ShapeError("Periodic gate parameters must share one (H, P) shape")

    @property
    def pulses(self) -> int:
        return self.rho.shape[1]


@dataclass
class PositionalGateParams(TensorGroup):
    """Learned sin/cos basis over normalized position."""
    alpha: torch.Tensor         # (H, P_pos, K)
    beta: torch.Tensor          # (H, P_pos, K)
    bias: torch.Tensor          # (H, P_pos)

    def __post_init__(self):
        if self.alpha.shape != self.beta.shape:
            raise ShapeError("Positional sin and cos coefficients must have equal shapes")
        if self.alpha.shape[-1] < 1:
            raise ConfigError("Positional gates need at least one basis function")
        if self.bias.shape != self.alpha.shape[:2]:
            raise ShapeError(f"Positional bias {tuple(self.bias.shape)} does not match {tuple(self.alpha.shape[:2])}")

    @property
    def pulses(self) -> int:
        return self.alpha.shape[1]

    @property
    def basis_size(self) -> int:
        return self.alpha.shape[-1]


@dataclass
class GateParams(TensorGroup):
    """All three gate families for every head of one layer."""
    aperiodic: AperiodicGateParams
    periodic: PeriodicGateParams
    positional: PositionalGateParams

    def __post_init__(self):
        heads = {self.aperiodic.q.shape[0], self.periodic.rho.shape[0], self.positional.alpha.shape[0]}
        if len(heads) != 1:
            raise ShapeError(f"Gate families disagree on head count: {sorted(heads)}")

    @property
    def heads(self) -> int:
        return self.aperiodic.q.shape[0]

    @property
    def split(self) -> Tuple[int, int, int]:
        return (self.aperiodic.pulses, self.periodic.pulses, self.positional.pulses)

    @property
    def pulses_per_head(self) -> int:
        return sum(self.split)

    @property
    def families(self) -> Tuple[str, ...]:
        a, p, s = self.split
        return (APERIODIC,) * a + (PERIODIC,) * p + (POSITIONAL,) * s


@dataclass
class GateMatrix:
    """
    Evaluated soft gates for one layer.

    values has shape (..., H, n, P) with every entry in [0, 1]; columns follow
    ``families``.
    """
    values: torch.Tensor
    families: Tuple[str, ...]
    temperature: float
    centers: Optional[torch.Tensor] = None       # (..., H, P_a)
    half_widths: Optional[torch.Tensor] = None   # (..., H, P_a)

    def __post_init__(self):
        if self.values.dim() < 3:
            raise ShapeError(f"Gate values must be (..., H, n, P), got {tuple(self.values.shape)}")
        if self.values.shape[-1] != len(self.families):
            raise ShapeError(f"{self.values.shape[-1]} gate columns but {len(self.families)} family tags")

    @property
    def heads(self) -> int:
        return self.values.shape[-3]

    @property
    def length(self) -> int:
        return self.values.shape[-2]

    @property
    def pulses(self) -> int:
        return self.values.shape[-1]

    def coverage(self) -> torch.Tensor:
        """Sum of all gates at each position, (..., n)."""
        return self.values.sum(dim=(-3, -1))

    def mean_pattern(self) -> torch.Tensor:
        """Mean over positions of every gate, flattened to (..., H * P)."""
        if self.length == 0:
            mean = torch.zeros_like(self.values.sum(dim=-2))
        else:
            mean = self.values.mean(dim=-2)
        return mean.reshape(*mean.shape[:-2], -1)
