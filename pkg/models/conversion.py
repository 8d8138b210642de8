import math
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional

import pandas as pd

from config import CURRICULUM_CONFIG, SWEEP_CONFIG
from exceptions import ParameterError
from models.encoder import ToyEncoder

LOCAL = "local"
GLOBAL = "global"

SWEEP_COLUMNS = ["layer", "mse", "surviving", "order_rank"]
TRACE_COLUMNS = ["stage", "layer", "phase", "step", "tau", "loss", "val_metric", "reverted"]
ORDER_COLUMNS = ["seed", "order", "final_loss"]


@dataclass
class SweepHyperparams:
    """Elastic-net sweep settings; pulses_per_family of None means overprovisioned."""
    lambda1: float = SWEEP_CONFIG["LAMBDA1"]
    lambda2: float = SWEEP_CONFIG["LAMBDA2"]
    threshold: float = SWEEP_CONFIG["PRUNE_THRESHOLD"]
    floor: int = SWEEP_CONFIG["FLOOR"]
    epochs: int = SWEEP_CONFIG["EPOCHS"]
    pulses_per_family: Optional[int] = None
    temperature: float = SWEEP_CONFIG["TEMPERATURE"]
    lr: float = SWEEP_CONFIG["LR"]

    def __post_init__(self):
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ParameterError(f"Regularization weights must be non-negative, got {self.lambda1}, {self.lambda2}")
        if self.floor < 1:
            raise ParameterError(f"Pulse floor must be at least 1, got {self.floor}")
        if not 0 <= self.threshold <= 1:
            raise ParameterError(f"Prune threshold must lie in [0, 1], got {self.threshold}")
        if self.epochs < 0:
            raise ParameterError(f"Epochs must be non-negative, got {self.epochs}")


@dataclass
class CurriculumSchedule:
    """Linear temperature annealing over one phase."""
    tau_start: float = CURRICULUM_CONFIG["TAU_START"]
    tau_end: float = CURRICULUM_CONFIG["TAU_END"]
    steps: int = 1
    scope: str = LOCAL

    def __post_init__(self):
        if self.tau_start <= 0 or self.tau_end <= 0:
            raise ParameterError("Temperatures must be positive")
        if self.tau_end > self.tau_start:
            raise ParameterError("Temperature must not increase within a phase")
        if self.scope not in (LOCAL, GLOBAL):
            raise ParameterError(f"Unknown curriculum scope {self.scope!r}")


@dataclass
class LayerSweepResult:
    layer: int
    mse: float
    surviving: int
    histogram: List[int] = field(default_factory=list)
    failed: bool = False
    diagnostics: str = ""


@dataclass
class SweepReport:
    """Per-layer difficulty and capacity, plus the replacement order (easiest first)."""
    layers: List[LayerSweepResult]
    order: List[int]

    def rank_of(self, layer: int) -> int:
        return self.order.index(layer)

    def to_frame(self) -> pd.DataFrame:
        rows = [{"layer": r.layer, "mse": r.mse, "surviving": r.surviving, "order_rank": self.rank_of(r.layer)}
                for r in self.layers]
        return pd.DataFrame(rows, columns=SWEEP_COLUMNS)

    def to_dict(self) -> Dict:
        return {"layers": [asdict(r) for r in self.layers], "order": list(self.order)}


@dataclass
class TraceRow:
    stage: int
    layer: int
    phase: str
    step: int
    tau: float
    loss: float
    val_metric: float
    reverted: bool = False


@dataclass
class StageTrace:
    rows: List[TraceRow] = field(default_factory=list)

    def add(self, **kwargs) -> TraceRow:
        row = TraceRow(**kwargs)
        self.rows.append(row)
        return row

    def phases(self) -> List[str]:
        return [r.phase for r in self.rows]

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([asdict(r) for r in self.rows], columns=TRACE_COLUMNS)


@dataclass
class ConversionResult:
    encoder: ToyEncoder
    trace: StageTrace
    replaced: List[int]
    final_metric: float = math.nan
    stopped_on_budget: bool = False
