from dataclasses import dataclass, field
from typing import Dict, List

import pandas as pd

from exceptions import ConfigError, ParameterError

BYTES_PER_ELEMENT = {"f16": 2, "f32": 4, "f64": 8}
COST_COLUMNS = ["mechanism", "component", "flops", "bytes", "compute_us", "memory_us", "time_us", "bound", "intensity"]


@dataclass
class HardwareProfile:
    """
    Roofline description of a device: memory bandwidth and peak compute per dtype.
    """
    name: str
    bandwidth_bps: float
    flops: Dict[str, float]
    bytes_per_element: Dict[str, int] = field(default_factory=lambda: dict(BYTES_PER_ELEMENT))

    def __post_init__(self):
        if not self.bandwidth_bps > 0:
            raise ParameterError(f"Bandwidth must be positive, got {self.bandwidth_bps}")
        if not self.flops or any(not v > 0 for v in self.flops.values()):
            raise ParameterError(f"Peak compute must be positive for every dtype, got {self.flops}")

    def peak(self, dtype: str) -> float:
        try:
            return self.flops[dtype]
        except KeyError:
            raise ConfigError(f"Profile {self.name!r} has no peak compute for {dtype!r}")

    def element_bytes(self, dtype: str) -> int:
        try:
            return self.bytes_per_element[dtype]
        except KeyError:
            raise ConfigError(f"Unknown element type {dtype!r}")

    def to_dict(self) -> Dict:
        return {"name": self.name, "bandwidth_bps": self.bandwidth_bps, "flops": dict(self.flops)}

    @classmethod
    def from_dict(cls, data: Dict) -> "HardwareProfile":
        try:
            return cls(name=data["name"], bandwidth_bps=float(data["bandwidth_bps"]),
                       flops={k: float(v) for k, v in data["flops"].items()})
        except (KeyError, TypeError, AttributeError) as e:
            raise ConfigError(f"Invalid hardware profile: {e}")


@dataclass
class ComponentCost:
    """One roofline component; time is the larger of the compute and memory bounds."""
    name: str
    flops: float
    bytes_moved: float
    compute_time_s: float
    memory_time_s: float

    @property
    def time_s(self) -> float:
        return max(self.compute_time_s, self.memory_time_s)

    @property
    def time_us(self) -> float:
        return self.time_s * 1e6

    @property
    def bound(self) -> str:
        return "compute" if self.compute_time_s >= self.memory_time_s else "memory"

    @property
    def arithmetic_intensity(self) -> float:
        return self.flops / self.bytes_moved if self.bytes_moved > 0 else float("inf")


@dataclass
class CostBreakdown:
    """Per-layer component costs of one mixing mechanism at one sequence length."""
    mechanism: str
    length: int
    dim: int
    components: List[ComponentCost]
    layers: int = 1

    def component(self, name: str) -> ComponentCost:
        for c in self.components:
            if c.name == name:
                return c
        raise KeyError(name)

    @property
    def total_time_s(self) -> float:
        return sum(c.time_s for c in self.components)

    @property
    def total_time_us(self) -> float:
        return self.total_time_s * 1e6

    @property
    def model_time_s(self) -> float:
        return self.total_time_s * self.layers

    def time_of(self, names: List[str]) -> float:
        return sum(self.component(n).time_s for n in names)

    def to_frame(self) -> pd.DataFrame:
        rows = [{
            "mechanism": self.mechanism,
            "component": c.name,
            "flops": c.flops,
            "bytes": c.bytes_moved,
            "compute_us": c.compute_time_s * 1e6,
            "memory_us": c.memory_time_s * 1e6,
            "time_us": c.time_us,
            "bound": c.bound,
            "intensity": c.arithmetic_intensity,
        } for c in self.components]
        return pd.DataFrame(rows, columns=COST_COLUMNS)
