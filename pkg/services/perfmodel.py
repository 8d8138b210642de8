"""
Analytic Cost Model

Roofline estimates for softmax attention and the pulse accumulator layer,
the per-layer memory table, calibration against reference per-layer timings,
crossover search and scaling exponents.
"""

import logging
import math
from typing import Dict, Iterable, Optional, Sequence

import numpy as np
import pandas as pd
from scipy import stats

from config import GATE_CONFIG, PERF_CONFIG
from exceptions import ParameterError
from models.hardware import ComponentCost, CostBreakdown, HardwareProfile

logger = logging.getLogger(__name__)

ATTENTION_COMPONENTS = ("linear", "scores", "softmax", "mix")
LPA_COMPONENTS = ("linear", "gate_prediction", "elementwise", "accumulation")
ATTENTION_MIXING = ("scores", "softmax", "mix")
LPA_MIXING = ("gate_prediction", "elementwise", "accumulation")
MEMORY_COLUMNS = ["audio_s", "frames", "attention_bytes", "lpa_bytes", "attention_mb", "lpa_kb", "ratio"]
CALIBRATION_COLUMNS = ["mechanism", "component", "model_us", "reference_us", "ratio", "bound", "implied_passes"]
TOTAL_COLUMNS = ["mechanism", "layer_us", "layers", "model_ms"]
SCALING_SCOPES = ("total", "mixing")


def default_profile() -> HardwareProfile:
    return HardwareProfile.from_dict(PERF_CONFIG["PROFILES"][PERF_CONFIG["DEFAULT_PROFILE"]])


def _component(name: str, flops: float, bytes_moved: float, profile: HardwareProfile, dtype: str) -> ComponentCost:
    return ComponentCost(
        name=name,
        flops=flops,
        bytes_moved=bytes_moved,
        compute_time_s=flops / profile.peak(dtype),
        memory_time_s=bytes_moved / profile.bandwidth_bps,
    )


def score_storage_bytes(length: int, heads: int, dtype: str = "f16", profile: Optional[HardwareProfile] = None) -> int:
    """Bytes of the full per-head score matrices."""
    profile = profile or default_profile()
    return heads * length * length * profile.element_bytes(dtype)


def projection_cost(length: int, dim: int, profile: HardwareProfile, dtype: str) -> ComponentCost:
    """Four d x d GEMMs at two FLOPs per multiply-accumulate."""
    b = profile.element_bytes(dtype)
    return _component("linear", 8.0 * length * dim * dim, (4 * dim * dim + 8 * length * dim) * b, profile, dtype)


def attention_cost(length: int, dim: int, heads: int = 12, profile: Optional[HardwareProfile] = None,
                   dtype: str = "f16", softmax_passes: float = PERF_CONFIG["SOFTMAX_PASSES"],
                   layers: int = PERF_CONFIG["MODEL_LAYERS"]) -> CostBreakdown:
    """
    Roofline cost of one softmax attention layer.

    Args:
        length: Sequence length T
        dim: Model width d
        heads: Attention heads (score matrices materialized per head)
        profile: Hardware profile (default profile when None)
        dtype: Element type of activations and scores
        softmax_passes: Full passes over the score matrices in the softmax
        layers: Layers per model for model totals

    Returns:
        CostBreakdown with linear, scores, softmax and mix components
    """
    profile = profile or default_profile()
    b = profile.element_bytes(dtype)
    scores_bytes = heads * length * length * b
    components = [
        projection_cost(length, dim, profile, dtype),
        _component("scores", 2.0 * length * length * dim, 2 * length * dim * b + scores_bytes, profile, dtype),
        _component("softmax", 5.0 * heads * length * length, softmax_passes * scores_bytes, profile, dtype),
        _component("mix", 2.0 * length * length * dim, scores_bytes + 2 * length * dim * b, profile, dtype),
    ]
    return CostBreakdown(mechanism="attention", length=length, dim=dim, components=components, layers=layers)


def gate_tensor_bytes(length: int, pulses: int, dtype: str = PERF_CONFIG["ACCUMULATION_DTYPE"],
                      profile: Optional[HardwareProfile] = None) -> int:
    profile = profile or default_profile()
    return length * pulses * profile.element_bytes(dtype)


def input_read_bytes(length: int, dim: int, dtype: str = PERF_CONFIG["ACCUMULATION_DTYPE"],
                     profile: Optional[HardwareProfile] = None) -> int:
    profile = profile or default_profile()
    return length * dim * profile.element_bytes(dtype)


def lpa_cost(length: int, dim: int, pulses: int, profile: Optional[HardwareProfile] = None, dtype: str = "f16",
             kernel_size: int = GATE_CONFIG["KERNEL_SIZE"],
             elementwise_passes: float = PERF_CONFIG["ELEMENTWISE_PASSES"],
             accumulation_passes: float = PERF_CONFIG["ACCUMULATION_PASSES"],
             accumulation_dtype: str = PERF_CONFIG["ACCUMULATION_DTYPE"],
             layers: int = PERF_CONFIG["MODEL_LAYERS"]) -> CostBreakdown:
    """
    Roofline cost of one pulse accumulator layer.

    Gate prediction is the depthwise convolution plus the predictor GEMMs
    (d -> d and d -> d/2), the pulse scoring (d/2 -> P) and a handful of
    element-wise operations per gate. Accumulation streams the input and the
    gate tensor in the accumulation dtype.

    Args:
        length: Sequence length T
        dim: Model width d
        pulses: Total pulses P
        profile: Hardware profile (default profile when None)
        dtype: Element type of activations
        kernel_size: Depthwise convolution taps
        elementwise_passes: Passes over T x d activations for gating and masking
        accumulation_passes: Passes over the input and gate tensor while accumulating
        accumulation_dtype: Element type of the accumulation
        layers: Layers per model for model totals

    Returns:
        CostBreakdown with linear, gate_prediction, elementwise and accumulation components
    """
    profile = profile or default_profile()
    b = profile.element_bytes(dtype)
    half = dim / 2.0
    gate_flops = (2.0 * kernel_size * length * dim + 2.0 * length * dim * dim + 2.0 * length * dim * half
                  + 2.0 * length * half * pulses + 10.0 * length * pulses)
    gate_bytes = (2 * length * dim + length * half + length * pulses) * b + (dim * dim + dim * half) * b
    accumulation_bytes = accumulation_passes * (input_read_bytes(length, dim, accumulation_dtype, profile)
                                                + gate_tensor_bytes(length, pulses, accumulation_dtype, profile))
    components = [
        projection_cost(length, dim, profile, dtype),
        _component("gate_prediction", gate_flops, gate_bytes, profile, dtype),
        _component("elementwise", elementwise_passes * length * dim, elementwise_passes * length * dim * b, profile, dtype),
        _component("accumulation", 4.0 * length * dim + 2.0 * length * pulses, accumulation_bytes, profile, dtype),
    ]
    return CostBreakdown(mechanism=f"lpa_{pulses}", length=length, dim=dim, components=components, layers=layers)


def _display_mb(nbytes: float) -> float:
    mb = nbytes / 2 ** 20
    return round(mb, 2) if mb < 1 else round(mb, 1)


def memory_table(durations: Iterable[float], frame_rate: float = PERF_CONFIG["FRAME_RATE"], pulses: int = 12,
                 dtype: str = "f32", profile: Optional[HardwareProfile] = None) -> pd.DataFrame:
    """
    Per-layer peak memory of attention weights (T^2) versus gates (T x P).

    MB and KB are binary units; KB is truncated and MB rounded to two decimals
    below 1 MB and one decimal above.

    Returns:
        DataFrame with columns audio_s, frames, attention_bytes, lpa_bytes,
        attention_mb, lpa_kb, ratio
    """
    profile = profile or default_profile()
    b = profile.element_bytes(dtype)
    rows = []
    for seconds in durations:
        frames = int(round(seconds * frame_rate))
        attention_bytes = frames * frames * b
        lpa_bytes = frames * pulses * b
        rows.append({
            "audio_s": seconds,
            "frames": frames,
            "attention_bytes": attention_bytes,
            "lpa_bytes": lpa_bytes,
            "attention_mb": _display_mb(attention_bytes),
            "lpa_kb": lpa_bytes // 1024,
            "ratio": round(attention_bytes / lpa_bytes) if lpa_bytes > 0 else math.nan,
        })
    return pd.DataFrame(rows, columns=MEMORY_COLUMNS)


def roofline_table(length: int, dim: int, heads: int, pulse_counts: Sequence[int],
                   profile: Optional[HardwareProfile] = None, dtype: str = "f16") -> pd.DataFrame:
    """Component table for attention and for LPA at every pulse count."""
    frames = [attention_cost(length, dim, heads, profile, dtype).to_frame()]
    frames += [lpa_cost(length, dim, p, profile, dtype).to_frame() for p in pulse_counts]
    return pd.concat(frames, ignore_index=True)


def calibration_report(profile: Optional[HardwareProfile] = None, length: int = 6000, dim: int = 768,
                       heads: int = 12, dtype: str = "f16",
                       reference: Optional[Dict[str, Dict[str, float]]] = None) -> pd.DataFrame:
    """
    Compare modelled component times with reference microseconds.

    For memory-bound components the implied pass count is the number of full
    passes that would make the bandwidth bound equal the reference time.
    """
    profile = profile or default_profile()
    reference = reference or PERF_CONFIG["REFERENCE_US"]
    rows = []
    for mechanism, components in reference.items():
        if mechanism == "attention":
            model = attention_cost(length, dim, heads, profile, dtype)
            per_pass = {"softmax": score_storage_bytes(length, heads, dtype, profile)}
        else:
            pulses = int(mechanism.split("_")[1])
            model = lpa_cost(length, dim, pulses, profile, dtype)
            per_pass = {
                "elementwise": input_read_bytes(length, dim, dtype, profile),
                "accumulation": (input_read_bytes(length, dim, PERF_CONFIG["ACCUMULATION_DTYPE"], profile)
                                 + gate_tensor_bytes(length, pulses, PERF_CONFIG["ACCUMULATION_DTYPE"], profile)),
            }
        for name, ref_us in components.items():
            cost = model.component(name)
            implied = ref_us * 1e-6 * profile.bandwidth_bps / per_pass[name] if name in per_pass else math.nan
            rows.append({
                "mechanism": mechanism,
                "component": name,
                "model_us": cost.time_us,
                "reference_us": ref_us,
                "ratio": cost.time_us / ref_us,
                "bound": cost.bound,
                "implied_passes": implied,
            })
    return pd.DataFrame(rows, columns=CALIBRATION_COLUMNS)


def crossover_length(dim: int = 768, heads: int = 12, pulses: int = 12, profile: Optional[HardwareProfile] = None,
                     dtype: str = "f16", max_length: int = 100_000) -> Optional[int]:
    """
    Smallest T at which the LPA layer total drops below attention's, or None.

    The attention-minus-LPA gap grows with T, so a doubling bracket followed
    by bisection finds the first T without scanning every length.
    """
    profile = profile or default_profile()

    def lpa_faster(length: int) -> bool:
        return lpa_cost(length, dim, pulses, profile, dtype).total_time_s < \
            attention_cost(length, dim, heads, profile, dtype).total_time_s

    if max_length < 1:
        return None
    low, high = 0, 1
    while not lpa_faster(high):
        if high >= max_length:
            logger.warning(f"No crossover below T={max_length}")
            return None
        low, high = high, min(2 * high, max_length)
    # lpa_faster(high) holds and low is 0 or a length where it does not
    while high - low > 1:
        middle = (low + high) // 2
        if lpa_faster(middle):
            high = middle
        else:
            low = middle
    logger.debug(f"LPA with {pulses} pulses overtakes attention at T={high}")
    return high


def fit_exponent(lengths: Sequence[float], times: Sequence[float]) -> float:
    """Slope of log(time) against log(length)."""
    result = stats.linregress(np.log(np.asarray(lengths, dtype=float)), np.log(np.asarray(times, dtype=float)))
    return float(result.slope)


def scaling_exponents(lengths: Sequence[int] = PERF_CONFIG["SCALING_LENGTHS"], dim: int = 768,
                      heads: int = 12, pulses: int = 12, profile: Optional[HardwareProfile] = None,
                      dtype: str = "f16", scope: str = "total") -> Dict[str, float]:
    """
    Log-log slopes of per-layer time against sequence length.

    Args:
        scope: "total" fits the whole layer; "mixing" leaves out the projection
            GEMMs both mechanisms share

    Over 500..6000 frames at d=768 the linear projections still carry a large
    share of attention's total, so its total slope is about 1.6 there and only
    approaches 2 at ``PERF_CONFIG["ASYMPTOTIC_LENGTHS"]``. The mixing slope is
    already about 2 over the short range.
    """
    if scope not in SCALING_SCOPES:
        raise ParameterError(f"scope must be one of {SCALING_SCOPES}, got {scope!r}")
    profile = profile or default_profile()
    attention_costs = [attention_cost(t, dim, heads, profile, dtype) for t in lengths]
    lpa_costs = [lpa_cost(t, dim, pulses, profile, dtype) for t in lengths]
    if scope == "total":
        attention = [c.total_time_s for c in attention_costs]
        lpa = [c.total_time_s for c in lpa_costs]
    else:
        attention = [c.time_of(list(ATTENTION_MIXING)) for c in attention_costs]
        lpa = [c.time_of(list(LPA_MIXING)) for c in lpa_costs]
    return {"attention": fit_exponent(lengths, attention), "lpa": fit_exponent(lengths, lpa)}


def totals_table(length: int, dim: int, heads: int, pulse_counts: Sequence[int],
                 profile: Optional[HardwareProfile] = None, dtype: str = "f16") -> pd.DataFrame:
    """Per-layer and whole-model time of attention and of LPA at every pulse count."""
    profile = profile or default_profile()
    costs = [attention_cost(length, dim, heads, profile, dtype)]
    costs += [lpa_cost(length, dim, p, profile, dtype) for p in pulse_counts]
    rows = [{
        "mechanism": c.mechanism,
        "layer_us": c.total_time_us,
        "layers": c.layers,
        "model_ms": c.model_time_s * 1e3,
    } for c in costs]
    return pd.DataFrame(rows, columns=TOTAL_COLUMNS)
