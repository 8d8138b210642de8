"""
Hard-Gate Inference

Compiles gates at the zero-temperature limit into integer segment programs
and evaluates the layer with binary gates, either through a dense binary
matmul or through prefix sums of the value-projected input.
"""

import hashlib
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
import torch

from config import HARDGATE_CONFIG, LPA_CONFIG
from exceptions import ParameterError, ShapeError
from models.encoder import ATTENTION, ToyEncoder
from models.gate_params import APERIODIC, PERIODIC, POSITIONAL, AperiodicGateParams, PeriodicGateParams, PositionalGateParams
from models.lpa_params import LpaLayerParams
from models.program_cache import ProgramCache
from models.segment_program import HardGateOutput, PulseSegments, Segment, SegmentProgram
from services import gates as gate_service
from services import mixer, numerics, reference

logger = logging.getLogger(__name__)

ROUNDING_MODES = ("threshold", "nearest")
STRATEGIES = ("auto", "dense", "prefix")

positional_cache = ProgramCache(name="positional", max_size=HARDGATE_CONFIG["CACHE_SIZE"])


@dataclass
class MarginViolation:
    """A gate logit (or aperiodic argmax gap, with t = -1) closer to zero than the margin."""
    head: int
    pulse: int
    family: str
    t: int
    logit: float


def round_half_away(x: np.ndarray) -> np.ndarray:
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def runs(mask: np.ndarray) -> List[Segment]:
    """Maximal runs of True in a 1-D boolean array, as inclusive intervals."""
    if mask.size == 0:
        return []
    padded = np.concatenate([[False], mask.astype(bool), [False]])
    edges = np.flatnonzero(np.diff(padded.astype(np.int8)))
    return [(int(s), int(e) - 1) for s, e in zip(edges[0::2], edges[1::2])]


def merge_segments(segments: List[Segment]) -> List[Segment]:
    """Sort and merge overlapping or adjacent intervals."""
    merged: List[Segment] = []
    for s, e in sorted(segments):
        if merged and s <= merged[-1][1] + 1:
            merged[-1] = (merged[-1][0], max(merged[-1][1], e))
        else:
            merged.append((s, e))
    return merged


def interval_to_frames(low: float, high: float, n: int, rounding: str) -> List[Segment]:
    """
    Integer frames of the open interval (low, high), clipped to [0, n-1].

    "threshold" keeps frames strictly inside; "nearest" rounds both ends half
    away from zero.

    "threshold" is the default (``HARDGATE_CONFIG["ENDPOINT_ROUNDING"]``): it
    keeps exactly the frames whose soft gate exceeds 1/2, so the hard path
    matches the low-temperature soft path. "nearest" adds a frame at each
    end when the half-width has a fractional part of .5 or more.
    """
    if rounding == "threshold":
        s, e = math.floor(low) + 1, math.ceil(high) - 1
    elif rounding == "nearest":
        s, e = int(round_half_away(np.array(low))), int(round_half_away(np.array(high)))
    else:
        raise ParameterError(f"Unknown endpoint rounding {rounding!r}; expected one of {ROUNDING_MODES}")
    s, e = max(s, 0), min(e, n - 1)
    return [(s, e)] if s <= e else []


def _split_bias(bias: Optional[torch.Tensor], split: Tuple[int, int, int], heads: int) -> Tuple[np.ndarray, ...]:
    a, p, s = split
    if bias is None:
        return np.zeros((heads, a)), np.zeros((heads, p)), np.zeros((heads, s))
    b = bias.detach().cpu().double().numpy()
    if b.shape != (heads, a + p + s):
        raise ShapeError(f"Hard-gate bias must be ({heads}, {a + p + s}), got {b.shape}")
    return b[:, :a], b[:, a:a + p], b[:, a + p:]


def compile_aperiodic(x: torch.Tensor, params: AperiodicGateParams, bias: Optional[np.ndarray] = None,
                      rounding: str = HARDGATE_CONFIG["ENDPOINT_ROUNDING"],
                      recompute_delta: bool = HARDGATE_CONFIG["RECOMPUTE_DELTA"],
                      tau: float = LPA_CONFIG["TEMPERATURE"]) -> List[List[PulseSegments]]:
    """
    Collapse the center softmax to its argmax and emit one interval per pulse.

    Args:
        x: Input (n, d)
        params: Aperiodic parameters
        bias: Optional cross-layer bias (H, P_a) widening every half-width
        rounding: "threshold" or "nearest"
        recompute_delta: Use the argmax frame's features for the half-width;
            otherwise reuse the soft half-width at temperature ``tau``
        tau: Temperature of the soft half-width when it is reused

    Returns:
        Per head, a list of PulseSegments (pulse indices start at 0)
    """
    if x.dim() != 2:
        raise ShapeError(f"Hard compilation takes a single (n, d) sequence, got {tuple(x.shape)}")
    n = x.shape[0]
    heads, n_a = params.q.shape[0], params.q.shape[1]
    with torch.no_grad():
        hidden = gate_service.predict_hidden(x, params)                       # (H, n, c)
        scores = torch.einsum("hnc,hpc->hnp", hidden, params.q).double().cpu().numpy()
        centers = np.argmax(scores, axis=1)                                   # (H, P_a), lowest index on ties
        if recompute_delta:
            pooled = torch.stack([hidden[h, torch.as_tensor(centers[h])] for h in range(heads)])   # (H, P_a, c)
            delta = numerics.softplus(torch.einsum("hpc,hc->hp", pooled, params.f_w) + params.f_b.unsqueeze(-1))
        else:
            _, _, delta = gate_service.aperiodic_gate(x, params, tau)
    delta = delta.double().cpu().numpy()
    bias = np.zeros((heads, n_a)) if bias is None else bias

    programs = []
    for h in range(heads):
        entries = []
        for p in range(n_a):
            reach = delta[h, p] + bias[h, p]
            c = float(centers[h, p])
            segments = interval_to_frames(c - reach, c + reach, n, rounding) if reach > 0 else []
            entries.append(PulseSegments(head=h, pulse=p, family=APERIODIC, segments=segments))
        programs.append(entries)
    return programs


def periodic_segments(period: float, phase: float, duty: float, n: int) -> List[Segment]:
    """
    Frames t in [0, n) with cos(2 pi t / T - phi) > cos(pi d), from the zero crossings.
    """
    if n <= 0 or duty < HARDGATE_CONFIG["MIN_DUTY"]:
        return []
    half = math.pi * duty
    k_lo = math.floor((-phase - half) / (2 * math.pi)) - 1
    k_hi = math.ceil((2 * math.pi * (n - 1) / period - phase + half) / (2 * math.pi)) + 1
    segments: List[Segment] = []
    for k in range(k_lo, k_hi + 1):
        low = period * (phase - half + 2 * math.pi * k) / (2 * math.pi)
        high = period * (phase + half + 2 * math.pi * k) / (2 * math.pi)
        segments.extend(interval_to_frames(low, high, n, "threshold"))
    return merge_segments(segments)


def compile_periodic(params: PeriodicGateParams, n: int, bias: Optional[np.ndarray] = None) -> List[List[PulseSegments]]:
    """
    Analytic on-regions of every periodic pulse.

    A logit bias b shifts the threshold to cos(pi d) - b, which is an effective
    duty arccos(cos(pi d) - b) / pi.
    """
    with torch.no_grad():
        period = gate_service.periods(params).double().cpu().numpy()
        duty = gate_service.duty_cycles(params).double().cpu().numpy()
        phase = params.phase.detach().double().cpu().numpy()
    heads, pulses = period.shape
    bias = np.zeros((heads, pulses)) if bias is None else bias

    programs = []
    for h in range(heads):
        entries = []
        for p in range(pulses):
            if duty[h, p] < HARDGATE_CONFIG["MIN_DUTY"]:
                segments = []
            else:
                level = math.cos(math.pi * duty[h, p]) - bias[h, p]
                if level >= 1.0:
                    segments = []
                elif level < -1.0:
                    segments = [(0, n - 1)] if n > 0 else []
                else:
                    segments = periodic_segments(period[h, p], phase[h, p], math.acos(level) / math.pi, n)
            entries.append(PulseSegments(head=h, pulse=p, family=PERIODIC, segments=segments))
        programs.append(entries)
    return programs


def positional_key(params: PositionalGateParams, n: int, bias: Optional[np.ndarray] = None) -> Tuple[str, int]:
    digest = hashlib.sha1()
    for tensor in (params.alpha, params.beta, params.bias):
        digest.update(tensor.detach().double().cpu().numpy().tobytes())
    if bias is not None:
        digest.update(np.ascontiguousarray(bias, dtype=np.float64).tobytes())
    return digest.hexdigest(), n


def compile_positional(params: PositionalGateParams, n: int, bias: Optional[np.ndarray] = None,
                       cache: Optional[ProgramCache] = positional_cache) -> List[List[PulseSegments]]:
    """
    Runs of positive positional logits. Content-independent, so results are
    cached per (parameter hash, n).
    """
    key = positional_key(params, n, bias) if cache is not None else None
    if cache is not None:
        hit = cache.get(key)
        if hit is not None:
            return hit

    with torch.no_grad():
        z = gate_service.positional_logits(params, n).double().cpu().numpy()   # (H, n, P)
    if bias is not None:
        z = z + bias[:, None, :]
    heads, _, pulses = z.shape
    programs = [
        [PulseSegments(head=h, pulse=p, family=POSITIONAL, segments=runs(z[h, :, p] > 0)) for p in range(pulses)]
        for h in range(heads)
    ]
    if cache is not None:
        cache.set(key, programs)
    return programs


def compile_program(x: torch.Tensor, params: LpaLayerParams, prev_gate_mean: Optional[torch.Tensor] = None,
                    rounding: str = HARDGATE_CONFIG["ENDPOINT_ROUNDING"],
                    recompute_delta: bool = HARDGATE_CONFIG["RECOMPUTE_DELTA"]) -> SegmentProgram:
    """
    Compile every pulse of a layer for one sequence.

    Args:
        x: Input (n, d)
        params: Layer parameters
        prev_gate_mean: Optional previous-layer gate pattern (H*P_prev,)
        rounding: Aperiodic endpoint rounding
        recompute_delta: Recompute aperiodic half-widths under argmax

    Returns:
        SegmentProgram with head-major entries and pulse indices within each head
    """
    if x.dim() != 2:
        raise ShapeError(f"Hard compilation takes a single (n, d) sequence, got {tuple(x.shape)}")
    n = x.shape[0]
    split = params.gates.split
    with torch.no_grad():
        bias = mixer.layer_bias(params, prev_gate_mean)
    bias_a, bias_p, bias_s = _split_bias(bias, split, params.heads)

    aperiodic = compile_aperiodic(x, params.gates.aperiodic, bias_a, rounding, recompute_delta, params.temperature)
    periodic = compile_periodic(params.gates.periodic, n, bias_p)
    positional = compile_positional(params.gates.positional, n, bias_s)

    entries = []
    offsets = (0, split[0], split[0] + split[1])
    for h in range(params.heads):
        for family_entries, offset in zip((aperiodic[h], periodic[h], positional[h]), offsets):
            for entry in family_entries:
                entries.append(PulseSegments(head=h, pulse=entry.pulse + offset, family=entry.family,
                                             segments=entry.segments))
    return SegmentProgram(length=n, heads=params.heads, pulses_per_head=params.pulses_per_head, entries=entries)


def prefix_accumulate(x: torch.Tensor, program: SegmentProgram, w_v: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
    """
    Pulse summaries from prefix sums: v_bar_p = sum over segments of (C[e+1] - C[s]) / |S_p|.

    Args:
        x: Input (n, d)
        program: Compiled program for this input
        w_v: Value projection (d, d)

    Returns:
        Tuple of summaries (H, P, d/H) and active flags (H, P)
    """
    if x.shape[-2] != program.length:
        raise ShapeError(f"Program compiled for length {program.length}, input has {x.shape[-2]}")
    values = numerics.split_heads(numerics.linear(x, w_v), program.heads)     # (H, n, dh)
    prefix = numerics.prefix_sum(values)                                         # (H, n+1, dh)
    summaries = values.new_zeros(program.heads, program.pulses_per_head, values.shape[-1])
    active = torch.zeros(program.heads, program.pulses_per_head, dtype=torch.bool)
    for entry in program.entries:
        if not entry.active:
            continue
        total = sum(prefix[entry.head, e + 1] - prefix[entry.head, s] for s, e in entry.segments)
        summaries[entry.head, entry.pulse] = total / entry.covered
        active[entry.head, entry.pulse] = True
    return summaries, active


def dense_accumulate(x: torch.Tensor, program: SegmentProgram, w_v: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
    """Pulse summaries as G^T (W_V x) with the binary gate matrix materialized."""
    values = numerics.split_heads(numerics.linear(x, w_v), program.heads)
    return mixer.gated_means(values, program.to_dense(values.dtype))


def _forward_single(x: torch.Tensor, params: LpaLayerParams, program: SegmentProgram,
                    strategy: str) -> Tuple[torch.Tensor, torch.Tensor]:
    if strategy == "prefix":
        summaries, _ = prefix_accumulate(x, program, params.w_v)
    else:
        summaries, _ = dense_accumulate(x, program, params.w_v)
    binary = program.to_dense(x.dtype)
    return mixer.accumulate(summaries, binary, params), binary


def hard_forward(x: torch.Tensor, params: LpaLayerParams, programs: Optional[List[SegmentProgram]] = None,
                 strategy: str = "auto", prev_gate_mean: Optional[torch.Tensor] = None,
                 rounding: str = HARDGATE_CONFIG["ENDPOINT_ROUNDING"],
                 recompute_delta: bool = HARDGATE_CONFIG["RECOMPUTE_DELTA"]) -> HardGateOutput:
    """
    Evaluate the layer with binary gates.

    Args:
        x: Input (n, d) or (B, n, d)
        params: Layer parameters
        programs: Precompiled programs, one per sequence (compiled when None)
        strategy: "dense", "prefix" or "auto" (dense up to HARDGATE_CONFIG["DENSE_MAX_LENGTH"])
        prev_gate_mean: Optional previous-layer gate pattern, (H*P_prev,) or (B, H*P_prev)
        rounding: Aperiodic endpoint rounding
        recompute_delta: Recompute aperiodic half-widths under argmax

    Returns:
        HardGateOutput
    """
    if strategy not in STRATEGIES:
        raise ParameterError(f"Unknown strategy {strategy!r}; expected one of {STRATEGIES}")
    if x.dim() not in (2, 3):
        raise ShapeError(f"Hard forward takes (n, d) or (B, n, d), got {tuple(x.shape)}")
    if x.shape[-1] != params.dim:
        raise ShapeError(f"Input width {x.shape[-1]} does not match layer width {params.dim}")

    n = x.shape[-2]
    if strategy == "auto":
        strategy = "dense" if n <= HARDGATE_CONFIG["DENSE_MAX_LENGTH"] else "prefix"
    if n == 0:
        empty = [SegmentProgram(length=0, heads=params.heads, pulses_per_head=params.pulses_per_head,
                                entries=[PulseSegments(head=h, pulse=p, family=f)
                                         for h in range(params.heads)
                                         for p, f in enumerate(params.gates.families)])]
        return HardGateOutput(y=x.new_zeros(x.shape), programs=empty * max(len(x) if x.dim() == 3 else 1, 1),
                              strategy=strategy, mean_active_pulses=0.0, mask=x.new_zeros(x.shape[:-1]))

    sequences = [x] if x.dim() == 2 else list(x)
    prev = [prev_gate_mean] * len(sequences) if prev_gate_mean is None or prev_gate_mean.dim() == 1 \
        else list(prev_gate_mean)
    if programs is None:
        programs = [compile_program(seq, params, p, rounding, recompute_delta) for seq, p in zip(sequences, prev)]
    if len(programs) != len(sequences):
        raise ShapeError(f"{len(programs)} programs for {len(sequences)} sequences")

    outputs, masks, active = [], [], []
    with torch.no_grad():
        for seq, program in zip(sequences, programs):
            y, binary = _forward_single(seq, params, program, strategy)
            outputs.append(y)
            masks.append(mixer.active_mask(binary))
            if n > 0:
                active.append(float(binary.sum(dim=-1).mean()))

    stack = (lambda ts: ts[0]) if x.dim() == 2 else torch.stack
    mean_active = float(np.mean(active)) if active else 0.0
    logger.debug(f"Hard forward ({strategy}): {mean_active:.2f} active pulses per head and frame")
    return HardGateOutput(y=stack(outputs), programs=programs, strategy=strategy,
                          mean_active_pulses=mean_active, mask=stack(masks))


def margin_violations(x: torch.Tensor, params: LpaLayerParams, margin: float = HARDGATE_CONFIG["MARGIN"],
                      prev_gate_mean: Optional[torch.Tensor] = None) -> List[MarginViolation]:
    """
    Gate logits whose magnitude is below ``margin``.

    Aperiodic gates use min(t - c + delta, c + delta - t) with the soft center
    and width at the layer temperature; the aperiodic argmax is also checked
    for a top-two score gap of at least ``margin`` (reported with t = -1).

    Args:
        x: Input (n, d)
        params: Layer parameters
        margin: Minimum logit magnitude
        prev_gate_mean: Optional previous-layer gate pattern

    Returns:
        List of MarginViolation, empty when the configuration is saturated
    """
    if x.dim() != 2:
        raise ShapeError(f"Margin check takes a single (n, d) sequence, got {tuple(x.shape)}")
    n = x.shape[0]
    tau = params.temperature
    violations: List[MarginViolation] = []
    with torch.no_grad():
        bias = mixer.layer_bias(params, prev_gate_mean)
        bias_a, bias_p, bias_s = _split_bias(bias, params.gates.split, params.heads)
        ap = params.gates.aperiodic
        hidden = gate_service.predict_hidden(x, ap)
        scores = torch.einsum("hnc,hpc->hnp", hidden, ap.q).double().cpu().numpy()
        _, centers, delta = gate_service.aperiodic_gate(x, ap, tau)
        centers = centers.double().cpu().numpy()
        reach = delta.double().cpu().numpy() + bias_a
        z_p = gate_service.periodic_logits(params.gates.periodic, n).double().cpu().numpy() + bias_p[:, None, :]
        z_s = gate_service.positional_logits(params.gates.positional, n).double().cpu().numpy() + bias_s[:, None, :]

    t = np.arange(n, dtype=np.float64)
    heads, _, n_a = scores.shape
    for h in range(heads):
        for p in range(n_a):
            if n > 1:
                top = np.sort(scores[h, :, p])[-2:]
                if top[1] - top[0] < margin:
                    violations.append(MarginViolation(h, p, APERIODIC, -1, float(top[1] - top[0])))
            z = np.minimum(t - centers[h, p] + reach[h, p], centers[h, p] + reach[h, p] - t)
            violations.extend(MarginViolation(h, p, APERIODIC, int(i), float(z[i]))
                              for i in np.flatnonzero(np.abs(z) < margin))
        offset = n_a
        for family, z in ((PERIODIC, z_p[h]), (POSITIONAL, z_s[h])):
            for p in range(z.shape[-1]):
                violations.extend(MarginViolation(h, offset + p, family, int(i), float(z[i, p]))
                                  for i in np.flatnonzero(np.abs(z[:, p]) < margin))
            offset += z.shape[-1]
    return violations


@dataclass
class HardEncoderOutput:
    hidden: torch.Tensor
    programs: Dict[int, List[SegmentProgram]] = field(default_factory=dict)      # LPA layer -> per-sequence programs
    violations: Dict[int, List[MarginViolation]] = field(default_factory=dict)   # LPA layer -> margin violations


def binary_gate_pattern(programs: List[SegmentProgram], batched: bool, dtype: torch.dtype) -> torch.Tensor:
    """Mean over positions of the binary gates, (H*P,) or (B, H*P)."""
    patterns = [
        p.to_dense(dtype).mean(dim=-2).reshape(-1) if p.length > 0
        else torch.zeros(p.heads * p.pulses_per_head, dtype=dtype)
        for p in programs
    ]
    return torch.stack(patterns) if batched else patterns[0]


def hard_encoder_forward(tokens: torch.Tensor, encoder: ToyEncoder, strategy: str = "auto",
                         rounding: str = HARDGATE_CONFIG["ENDPOINT_ROUNDING"],
                         recompute_delta: bool = HARDGATE_CONFIG["RECOMPUTE_DELTA"],
                         margin: Optional[float] = None) -> HardEncoderOutput:
    """
    Run the encoder with every LPA layer on its hard-gate path.

    Args:
        tokens: Input features (n, d_in) or (B, n, d_in)
        encoder: Encoder, possibly mixing attention and LPA layers
        strategy: Hard accumulation strategy
        rounding: Aperiodic endpoint rounding
        recompute_delta: Recompute aperiodic half-widths under argmax
        margin: When set, collect gate logits closer to zero than this per LPA layer

    Returns:
        HardEncoderOutput
    """
    if tokens.dim() not in (2, 3):
        raise ShapeError(f"Hard inference takes (n, d_in) or (B, n, d_in), got {tuple(tokens.shape)}")
    batched = tokens.dim() == 3
    output = HardEncoderOutput(hidden=tokens)
    with torch.no_grad():
        h = numerics.linear(tokens, encoder.embed_weight, encoder.embed_bias)
        prev = None
        for index, layer in enumerate(encoder.layers):
            u = reference.layer_norm(h, layer.norm1)
            if layer.kind == ATTENTION:
                m = reference.attention_forward(u, layer.mixer)
            else:
                if margin is not None and u.shape[-2] > 0:
                    sequences = list(u) if batched else [u]
                    prevs = list(prev) if batched and prev is not None else [prev] * len(sequences)
                    output.violations[index] = [v for seq, p in zip(sequences, prevs)
                                                for v in margin_violations(seq, layer.mixer, margin, p)]
                out = hard_forward(u, layer.mixer, strategy=strategy, prev_gate_mean=prev,
                                   rounding=rounding, recompute_delta=recompute_delta)
                m = out.y
                output.programs[index] = out.programs
                prev = binary_gate_pattern(out.programs, batched, u.dtype)
            h = h + m
            h = h + reference.feed_forward(reference.layer_norm(h, layer.norm2), layer.ffn)
    output.hidden = h
    return output
