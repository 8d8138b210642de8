from dataclasses import dataclass, field
from typing import Optional

import torch

from exceptions import ConfigError, ParameterError, ShapeError
from models.gate_params import GateMatrix, GateParams
from models.tensor_group import TensorGroup


@dataclass
class LpaLayerParams(TensorGroup):
    """
    Learnable parameters of one pulse accumulator layer.

    Pulse-indexed tensors are (H, P) with P = P_a + P_per + P_pos per head.
    """
    gates: GateParams
    wlogit: torch.Tensor                                  # (H, P) pulse-weight logits
    amp: torch.Tensor                                     # (H, P) amplitudes
    w_v: torch.Tensor = field(metadata={"key": "W_V"})    # (d, d)
    w_o: torch.Tensor = field(metadata={"key": "W_O"})    # (d, d)
    cross_proj: Optional[torch.Tensor] = field(default=None, metadata={"key": "cross.proj"})  # (H*P, P_prev)
    temperature: float = 1.0

    def __post_init__(self):
        if not self.temperature > 0:
            raise ParameterError(f"Temperature must be positive, got {self.temperature}")
        d = self.w_v.shape[0]
        if self.w_v.shape != (d, d) or self.w_o.shape != (d, d):
            raise ShapeError(f"W_V {tuple(self.w_v.shape)} and W_O {tuple(self.w_o.shape)} must be square and equal")
        if d % self.heads != 0:
            raise ConfigError(f"Width {d} is not divisible by {self.heads} heads")
        expected = (self.heads, self.gates.pulses_per_head)
        if tuple(self.wlogit.shape) != expected or tuple(self.amp.shape) != expected:
            raise ShapeError(f"Pulse weights and amplitudes must be {expected}")
        if self.gates.aperiodic.w1.shape[-1] != d // self.heads:
            raise ShapeError("Gate predictor width does not match the per-head width")
        if self.cross_proj is not None and self.cross_proj.shape[0] != self.heads * self.gates.pulses_per_head:
            raise ShapeError(f"Cross-layer projection has {self.cross_proj.shape[0]} rows, expected {self.total_pulses}")

    @property
    def heads(self) -> int:
        return self.gates.heads

    @property
    def dim(self) -> int:
        return self.w_v.shape[0]

    @property
    def head_dim(self) -> int:
        return self.dim // self.heads

    @property
    def pulses_per_head(self) -> int:
        return self.gates.pulses_per_head

    @property
    def total_pulses(self) -> int:
        return self.heads * self.pulses_per_head

    @property
    def pulse_weights(self) -> torch.Tensor:
        return torch.softmax(self.wlogit, dim=-1)


@dataclass
class LpaOutput:
    """Result of one forward pass with its diagnostics."""
    y: torch.Tensor                   # (..., n, d)
    gates: GateMatrix
    mask: torch.Tensor                # (..., n), in [0, 1)
    summaries: torch.Tensor           # (..., H, P, d_h)
    active_pulses: torch.Tensor       # (..., H, P) bool

    @property
    def mean_gate_pattern(self) -> torch.Tensor:
        return self.gates.mean_pattern()
