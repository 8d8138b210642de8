"""
Scaling Benchmark

Median wall-clock of attention_forward and lpa_forward over sequence lengths,
single-threaded, with warmup and a timer-resolution guard.
"""

import logging
import time
from dataclasses import dataclass
from typing import Callable, Dict, Optional, Sequence

import numpy as np
import pandas as pd
import torch

from config import BENCH_CONFIG
from exceptions import ParameterError
from services import mixer, perfmodel, reference

SCALING_COLUMNS = ["n", "attn_ms", "lpa_ms", "speedup"]


@dataclass
class Timing:
    median_s: float
    iterations: int
    resolution_s: float
    extended: bool = False


class BenchmarkService:
    """
    Times forward passes of both mixing mechanisms.
    """

    def __init__(self, warmup: int = BENCH_CONFIG["WARMUP"], iterations: int = BENCH_CONFIG["ITERATIONS"],
                 min_ticks: int = BENCH_CONFIG["MIN_TICKS"], clock: Callable[[], float] = time.perf_counter,
                 resolution_s: Optional[float] = None):
        """
        Initialize the benchmark service.

        Args:
            warmup: Untimed calls before measuring (at least 3)
            iterations: Timed calls (at least 10)
            min_ticks: Minimum median duration in timer ticks
            clock: Timer returning seconds
            resolution_s: Timer resolution (perf_counter's when None)
        """
        if warmup < 3 or iterations < 10:
            raise ParameterError(f"Need at least 3 warmup and 10 timed iterations, got {warmup} and {iterations}")
        self.warmup = warmup
        self.iterations = iterations
        self.min_ticks = min_ticks
        self.clock = clock
        self.resolution_s = resolution_s or time.get_clock_info("perf_counter").resolution
        self.logger = logging.getLogger(__name__)

    def time_callable(self, fn: Callable[[], object], max_doublings: int = 6) -> Timing:
        """
        Median duration of ``fn``.

        When the median is shorter than ``min_ticks`` timer ticks the iteration
        count is doubled (with a warning) and the measurement repeated.
        """
        for _ in range(self.warmup):
            fn()
        iterations = self.iterations
        extended = False
        for attempt in range(max_doublings + 1):
            samples = np.empty(iterations)
            for i in range(iterations):
                start = self.clock()
                fn()
                samples[i] = self.clock() - start
            median = float(np.median(samples))
            if median >= self.min_ticks * self.resolution_s or attempt == max_doublings:
                break
            self.logger.warning(f"Median {median:.3e}s is below {self.min_ticks} timer ticks; "
                                f"increasing iterations to {iterations * 2}")
            iterations *= 2
            extended = True
        return Timing(median_s=median, iterations=iterations, resolution_s=self.resolution_s, extended=extended)

    def scaling(self, sizes: Sequence[int] = BENCH_CONFIG["SIZES"], dim: int = BENCH_CONFIG["DIM"],
                heads: int = BENCH_CONFIG["HEADS"], seed: int = 0) -> pd.DataFrame:
        """
        Time both mechanisms at every length in f32 without autograd.

        Returns:
            DataFrame with columns n, attn_ms, lpa_ms, speedup
        """
        generator = torch.Generator().manual_seed(seed)
        attn = reference.init_attention_params(dim, heads, generator)
        lpa = mixer.init_lpa_params(dim, heads, generator=generator)

        threads = torch.get_num_threads()
        torch.set_num_threads(1)
        rows = []
        try:
            with torch.no_grad():
                for n in sizes:
                    x = torch.randn(n, dim, generator=generator)
                    attn_time = self.time_callable(lambda: reference.attention_forward(x, attn))
                    lpa_time = self.time_callable(lambda: mixer.lpa_forward(x, lpa))
                    rows.append({
                        "n": n,
                        "attn_ms": attn_time.median_s * 1e3,
                        "lpa_ms": lpa_time.median_s * 1e3,
                        "speedup": attn_time.median_s / lpa_time.median_s,
                    })
                    self.logger.info(f"n={n}: attention {rows[-1]['attn_ms']:.3f} ms, "
                                     f"LPA {rows[-1]['lpa_ms']:.3f} ms")
        finally:
            torch.set_num_threads(threads)
        return pd.DataFrame(rows, columns=SCALING_COLUMNS)


def scaling_summary(frame: pd.DataFrame) -> Dict[str, Optional[float]]:
    """Log-log slopes of both mechanisms and the first length at which LPA is faster."""
    faster = frame.loc[frame["lpa_ms"] < frame["attn_ms"], "n"]
    return {
        "attention_slope": perfmodel.fit_exponent(frame["n"], frame["attn_ms"]),
        "lpa_slope": perfmodel.fit_exponent(frame["n"], frame["lpa_ms"]),
        "crossover_n": int(faster.iloc[0]) if len(faster) else None,
    }
