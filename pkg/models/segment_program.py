from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import torch

from exceptions import ShapeError

Segment = Tuple[int, int]


@dataclass
class PulseSegments:
    """
    Hard-gate support of one pulse: sorted, disjoint, inclusive integer intervals.
    """
    head: int
    pulse: int
    family: str
    segments: List[Segment] = field(default_factory=list)

    def __post_init__(self):
        self.segments = [(int(s), int(e)) for s, e in self.segments]
        previous = -2
        for s, e in self.segments:
            if s > e:
                raise ShapeError(f"Segment [{s}, {e}] of pulse {self.pulse} is reversed")
            if s <= previous:
                raise ShapeError(f"Segments of pulse {self.pulse} overlap or are unsorted: {self.segments}")
            previous = e

    @property
    def covered(self) -> int:
        """|S_p|, the number of frames inside the pulse."""
        return sum(e - s + 1 for s, e in self.segments)

    @property
    def active(self) -> bool:
        return self.covered > 0

    def to_dict(self) -> Dict:
        return {
            "head": self.head,
            "pulse": self.pulse,
            "family": self.family,
            "segments": [[s, e] for s, e in self.segments],
        }

    @classmethod
    def from_dict(cls, data: Dict) -> "PulseSegments":
        return cls(
            head=data.get("head", 0),
            pulse=data["pulse"],
            family=data["family"],
            segments=[tuple(seg) for seg in data.get("segments", [])],
        )


@dataclass
class SegmentProgram:
    """
    Compiled hard gates for one layer and one input length.

    ``entries`` is head-major: entry h * P + p describes pulse p of head h.
    """
    length: int
    heads: int
    pulses_per_head: int
    entries: List[PulseSegments]

    def __post_init__(self):
        if len(self.entries) != self.heads * self.pulses_per_head:
            raise ShapeError(f"Expected {self.heads * self.pulses_per_head} pulse entries, got {len(self.entries)}")
        for entry in self.entries:
            if entry.segments and (entry.segments[0][0] < 0 or entry.segments[-1][1] > self.length - 1):
                raise ShapeError(f"Pulse {entry.pulse} of head {entry.head} leaves [0, {self.length - 1}]")

    def entry(self, head: int, pulse: int) -> PulseSegments:
        return self.entries[head * self.pulses_per_head + pulse]

    def counts(self) -> torch.Tensor:
        """Covered frame counts (H, P)."""
        return torch.tensor([e.covered for e in self.entries], dtype=torch.long).view(self.heads, self.pulses_per_head)

    def segment_count(self) -> int:
        return sum(len(e.segments) for e in self.entries)

    def to_dense(self, dtype: torch.dtype = torch.float32) -> torch.Tensor:
        """Binary gate tensor (H, n, P)."""
        dense = torch.zeros(self.heads, self.length, self.pulses_per_head, dtype=dtype)
        for entry in self.entries:
            for s, e in entry.segments:
                dense[entry.head, s:e + 1, entry.pulse] = 1.0
        return dense

    def to_dict(self) -> Dict:
        return {
            "length": self.length,
            "heads": self.heads,
            "pulses_per_head": self.pulses_per_head,
            "pulses": [e.to_dict() for e in self.entries],
        }

    @classmethod
    def from_dict(cls, data: Dict) -> "SegmentProgram":
        return cls(
            length=data["length"],
            heads=data["heads"],
            pulses_per_head=data["pulses_per_head"],
            entries=[PulseSegments.from_dict(p) for p in data["pulses"]],
        )


@dataclass
class HardGateOutput:
    """Result of a hard-gate forward pass."""
    y: torch.Tensor                         # (..., n, d)
    programs: List[SegmentProgram]          # one per sequence
    strategy: str                           # "dense" or "prefix"
    mean_active_pulses: float               # per head and frame
    mask: Optional[torch.Tensor] = None     # (..., n)
