"""
Property Verification

Brute-force oracles and the named property suite run by ``pulse_cli.py verify``.
Every property takes a seed and raises AssertionError with a counterexample
description when it fails.
"""

import dataclasses
import logging
import math
from dataclasses import dataclass
from typing import Callable, List, Optional, Tuple

import numpy as np
import torch
from scipy import special

from config import CURRICULUM_CONFIG, HARDGATE_CONFIG, LPA_CONFIG, PERF_CONFIG, VERIFY_CONFIG
from models.conversion import CurriculumSchedule
from models.encoder import AttentionParams
from models.gate_params import GateParams, PeriodicGateParams, PositionalGateParams
from models.lpa_params import LpaLayerParams, LpaOutput
from models.program_cache import ProgramCache
from services import conversion, gates, gradcheck, hardgate, mixer, numerics, perfmodel, reference

logger = logging.getLogger(__name__)

F64 = torch.float64
SPLITS = ((1, 1, 1), (2, 1, 1), (1, 2, 1), (1, 1, 2))
MEMORY_REFERENCE = ((10, 0.95, 23, 42), (30, 8.6, 70, 125), (60, 34.3, 140, 250), (120, 137.3, 281, 500))

Forward = Callable[..., LpaOutput]


def _arr(t: torch.Tensor) -> np.ndarray:
    return t.detach().to(F64).cpu().numpy()


def _randint(generator: torch.Generator, low: int, high: int) -> int:
    """Uniform integer in [low, high]."""
    return int(torch.randint(low, high + 1, (1,), generator=generator))


def _uniform(generator: torch.Generator, low: float, high: float) -> float:
    return low + (high - low) * float(torch.rand(1, generator=generator, dtype=F64))


def _rel(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-12))


def random_layer(generator: torch.Generator, heads: int, head_dim: int, split: Tuple[int, int, int],
                 basis_size: int = 4, prev_pulses: Optional[int] = None, temperature: Optional[float] = None,
                 noise: float = 0.3) -> LpaLayerParams:
    """Seeded f64 layer with every parameter perturbed away from its default."""
    params = mixer.init_lpa_params(heads * head_dim, heads, split, generator=generator, dtype=F64,
                                   basis_size=basis_size, prev_pulses=prev_pulses)
    params = params.map_tensors(lambda t: t + noise * torch.randn(t.shape, generator=generator, dtype=t.dtype))
    tau = temperature if temperature is not None else _uniform(generator, 0.5, 2.0)
    return dataclasses.replace(params, temperature=tau)


def brute_force_layer(x: torch.Tensor, params: LpaLayerParams, prev_gate_mean: Optional[torch.Tensor] = None) -> np.ndarray:
    """
    Position-by-position float64 evaluation of the layer output.

    Only the aperiodic predictor features are shared with the vectorized path;
    every gate, summary, weighted mean and the active mask are recomputed in loops.
    """
    X = _arr(x)
    n, d = X.shape
    heads, dh, tau = params.heads, params.head_dim, params.temperature
    n_a, n_p, n_s = params.gates.split
    pulses = n_a + n_p + n_s
    eps = LPA_CONFIG["EPSILON"]

    bias = np.zeros((heads, pulses))
    if params.cross_proj is not None and prev_gate_mean is not None:
        bias = (_arr(params.cross_proj) @ _arr(prev_gate_mean)).reshape(heads, pulses)

    ap, per, pos = params.gates.aperiodic, params.gates.periodic, params.gates.positional
    with torch.no_grad():
        hidden = _arr(gates.predict_hidden(x.to(F64), ap.to(F64)))
    q, f_w, f_b = _arr(ap.q), _arr(ap.f_w), _arr(ap.f_b)
    rho, phase, duty_logit = _arr(per.rho), _arr(per.phase), _arr(per.duty_logit)
    alpha, beta, pos_bias = _arr(pos.alpha), _arr(pos.beta), _arr(pos.bias)

    G = np.zeros((heads, n, pulses))
    for h in range(heads):
        for p in range(n_a):
            scores = [float(np.dot(hidden[h, t], q[h, p])) for t in range(n)]
            top = max(scores)
            e = [math.exp((s - top) / tau) for s in scores]
            w = [v / sum(e) for v in e]
            c = sum(w[t] * t for t in range(n))
            pooled = sum(w[t] * hidden[h, t] for t in range(n))
            reach = float(np.logaddexp(0.0, np.dot(pooled, f_w[h]) + f_b[h])) + bias[h, p]
            for t in range(n):
                G[h, t, p] = special.expit((t - c + reach) / tau) * special.expit((c + reach - t) / tau)
        for j in range(n_p):
            period = 2.0 ** (float(np.logaddexp(0.0, rho[h, j])) + 2.0)
            duty = special.expit(duty_logit[h, j])
            for t in range(n):
                z = math.cos(2 * math.pi * t / period - phase[h, j]) - math.cos(math.pi * duty) + bias[h, n_a + j]
                G[h, t, n_a + j] = special.expit(z / tau)
        for j in range(n_s):
            for t in range(n):
                t_hat = t / (n - 1) if n > 1 else 0.0
                z = pos_bias[h, j] + bias[h, n_a + n_p + j]
                for k in range(alpha.shape[-1]):
                    angle = 2 * math.pi * (k + 1) * t_hat
                    z += alpha[h, j, k] * math.sin(angle) + beta[h, j, k] * math.cos(angle)
                G[h, t, n_a + n_p + j] = special.expit(z / tau)

    V = X @ _arr(params.w_v).T
    wlogit, amp = _arr(params.wlogit), _arr(params.amp)
    mixed = np.zeros((n, d))
    for h in range(heads):
        values = V[:, h * dh:(h + 1) * dh]
        e = [math.exp(v - max(wlogit[h])) for v in wlogit[h]]
        weights = [v / sum(e) for v in e]
        summaries = np.zeros((pulses, dh))
        for p in range(pulses):
            mass = sum(G[h, t, p] for t in range(n))
            if mass >= eps:
                summaries[p] = sum(G[h, t, p] * values[t] for t in range(n)) / mass
        for t in range(n):
            den = sum(weights[p] * G[h, t, p] for p in range(pulses))
            if den >= eps:
                num = sum(weights[p] * G[h, t, p] * amp[h, p] * summaries[p] for p in range(pulses))
                mixed[t, h * dh:(h + 1) * dh] = num / den

    mask = np.array([1.0 - math.exp(-G[:, t, :].sum()) for t in range(n)])
    return mask[:, None] * (mixed @ _arr(params.w_o).T)


def attention_oracle(x: torch.Tensor, params: AttentionParams) -> np.ndarray:
    """Quadratic double loop over query/key pairs per head."""
    X = _arr(x)
    n, d = X.shape
    dh = d // params.heads
    Q, K, V = (X @ _arr(w).T for w in (params.w_q, params.w_k, params.w_v))
    out = np.zeros((n, d))
    for h in range(params.heads):
        cols = slice(h * dh, (h + 1) * dh)
        for i in range(n):
            scores = [float(np.dot(Q[i, cols], K[j, cols])) / math.sqrt(dh) - params.distance_penalty * abs(i - j)
                      for j in range(n)]
            top = max(scores)
            e = [math.exp(s - top) for s in scores]
            out[i, cols] = sum(e[j] / sum(e) * V[j, cols] for j in range(n))
    return out @ _arr(params.w_o).T


def _largest_gap_midpoint(values: np.ndarray, low: float, high: float) -> Tuple[float, float]:
    points = np.sort(np.concatenate([[low], values, [high]]))
    gaps = np.diff(points)
    i = int(np.argmax(gaps))
    return float(points[i] + gaps[i] / 2), float(gaps[i])


def saturated_instance(generator: torch.Generator, n: int, heads: int = 2, head_dim: int = 4,
                       split: Tuple[int, int, int] = (2, 2, 2), gap: float = VERIFY_CONFIG["SATURATION_GAP"],
                       tau: float = VERIFY_CONFIG["SATURATED_TEMPERATURE"],
                       max_tries: int = 100) -> Tuple[torch.Tensor, LpaLayerParams]:
    """
    Draw (x, params) whose every gate logit stays at least gap/2 away from zero.

    Aperiodic pulses get integer argmax centers (top-two score gap >= gap) and
    half-widths k + 1/2, so every boundary falls between frames. Periodic duty
    thresholds and positional biases sit in the middle of the widest gap of
    their logits over the sequence.
    """
    params = random_layer(generator, heads, head_dim, split, temperature=tau)
    ap, per, pos = params.gates.aperiodic, params.gates.periodic, params.gates.positional
    d = heads * head_dim

    half_widths = torch.tensor([_randint(generator, 1, 3) + 0.5 for _ in range(heads)], dtype=F64)
    ap = dataclasses.replace(ap, q=ap.q * 100.0, f_w=torch.zeros_like(ap.f_w),
                             f_b=numerics.inverse_softplus(half_widths))
    for _ in range(max_tries):
        x = torch.randn(n, d, generator=generator, dtype=F64)
        with torch.no_grad():
            scores = _arr(torch.einsum("hnc,hpc->hnp", gates.predict_hidden(x, ap), ap.q))
        if n < 2:
            break
        top = np.sort(scores, axis=1)[:, -2:, :]
        if np.all(top[:, 1, :] - top[:, 0, :] >= gap):
            break
    else:
        raise AssertionError(f"Could not draw an input with aperiodic score gaps >= {gap}")

    period = _arr(gates.periods(per))
    phase = _arr(per.phase).copy()
    duty = np.zeros_like(phase)
    t = np.arange(n)
    for h in range(heads):
        for j in range(per.pulses):
            best = (0.0, -1.0, phase[h, j])
            for attempt in range(max_tries):
                trial_phase = phase[h, j] if attempt == 0 else _uniform(generator, 0.0, 2 * math.pi)
                mid, width = _largest_gap_midpoint(np.cos(2 * math.pi * t / period[h, j] - trial_phase), -1.0, 1.0)
                if width > best[1]:
                    best = (mid, width, trial_phase)
                if width >= gap:
                    break
            duty[h, j] = math.acos(best[0]) / math.pi
            phase[h, j] = best[2]
    per = dataclasses.replace(per, phase=torch.from_numpy(phase), duty_logit=torch.from_numpy(special.logit(duty)))

    pos = dataclasses.replace(pos, bias=torch.zeros_like(pos.bias))
    with torch.no_grad():
        z = _arr(gates.positional_logits(pos, n))
    scale = np.ones(pos.bias.shape)
    bias = np.zeros(pos.bias.shape)
    for h in range(heads):
        for j in range(pos.pulses):
            mid, width = _largest_gap_midpoint(z[h, :, j], z[h, :, j].min() - 1.0, z[h, :, j].max() + 1.0)
            factor = gap / width if width < gap else 1.0
            scale[h, j] = factor
            bias[h, j] = -mid * factor
    scale_t = torch.from_numpy(scale).unsqueeze(-1)
    pos = dataclasses.replace(pos, alpha=pos.alpha * scale_t, beta=pos.beta * scale_t, bias=torch.from_numpy(bias))

    params = dataclasses.replace(params, gates=GateParams(aperiodic=ap, periodic=per, positional=pos),
                                 cross_proj=None)
    return x, params


@dataclass
class PropertyResult:
    name: str
    module: str
    passed: bool
    trials: int
    seed: Optional[int] = None
    detail: str = ""


@dataclass
class Property:
    name: str
    module: str
    check: Callable[[int], None]
    trials: int = VERIFY_CONFIG["TRIALS"]


class PropertySuite:
    """
    Named invariants of every module, each checked over several seeds.

    With ``inject_fault`` the layer forward used by the oracle properties
    scales its output by 1.001, which the suite must detect.
    """

    def __init__(self, seed: int = 0, inject_fault: bool = False, trial_scale: float = 1.0):
        self.seed = seed
        self.inject_fault = inject_fault
        self.trial_scale = trial_scale
        self.logger = logging.getLogger(__name__)
        self.forward: Forward = self._faulty_forward if inject_fault else mixer.lpa_forward
        self.properties = self._register()

    @staticmethod
    def _faulty_forward(x: torch.Tensor, params: LpaLayerParams,
                        prev_gate_mean: Optional[torch.Tensor] = None) -> LpaOutput:
        out = mixer.lpa_forward(x, params, prev_gate_mean)
        return dataclasses.replace(out, y=out.y * 1.001)

    def _register(self) -> List[Property]:
        c = VERIFY_CONFIG
        return [
            Property("softmax_matches_direct_sum", "numerics", self.softmax_matches_direct_sum),
            Property("matmul_matches_loops", "numerics", self.matmul_matches_loops),
            Property("dwconv_is_causal", "numerics", self.dwconv_is_causal),
            Property("range_sums_match_direct", "numerics", self.range_sums_match_direct),
            Property("predictor_matches_composition", "gates", self.predictor_matches_composition),
            Property("predictor_is_causal", "gates", self.predictor_is_causal),
            Property("gates_within_unit_interval", "gates", self.gates_within_unit_interval),
            Property("period_at_least_four_frames", "gates", self.period_at_least_four_frames),
            Property("positional_cos_symmetry", "gates", self.positional_cos_symmetry),
            Property("positional_bias_shift", "gates", self.positional_bias_shift),
            Property("pulse_weights_normalized", "mixer", self.pulse_weights_normalized),
            Property("summaries_match_weighted_mean", "mixer", self.summaries_match_weighted_mean),
            Property("layer_matches_brute_force", "mixer", self.layer_matches_brute_force, c["ORACLE_TRIALS"]),
            Property("active_mask_range", "mixer", self.active_mask_range),
            Property("pulse_permutation_invariance", "mixer", self.pulse_permutation_invariance),
            Property("gradients_match_finite_differences", "mixer", self.gradients_match_finite_differences,
                     c["GRADIENT_TRIALS"]),
            Property("zero_upstream_zero_gradients", "mixer", self.zero_upstream_zero_gradients),
            Property("attention_matches_loops", "reference", self.attention_matches_loops),
            Property("attention_rows_stochastic", "reference", self.attention_rows_stochastic),
            Property("encoder_taps_chain", "reference", self.encoder_taps_chain),
            Property("temperature_schedule_endpoints", "conversion", self.temperature_schedule_endpoints),
            Property("pruning_respects_floor", "conversion", self.pruning_respects_floor),
            Property("hard_matches_saturated_soft", "hardgate", self.hard_matches_saturated_soft,
                     c["SATURATED_TRIALS"]),
            Property("prefix_matches_dense", "hardgate", self.prefix_matches_dense),
            Property("periodic_segments_match_thresholding", "hardgate", self.periodic_segments_match_thresholding,
                     c["PERIODIC_DRAWS"]),
            Property("positional_runs_match_soft_gate", "hardgate", self.positional_runs_match_soft_gate),
            Property("program_cache_bounded", "hardgate", self.program_cache_bounded, 1),
            Property("memory_table_reference", "perfmodel", self.memory_table_reference, 1),
            Property("roofline_reference", "perfmodel", self.roofline_reference, 1),
            Property("cost_scaling_exponents", "perfmodel", self.cost_scaling_exponents, 1),
        ]

    def run(self, names: Optional[List[str]] = None) -> List[PropertyResult]:
        """
        Run every (or the named) property and stop each at its first failing seed.

        Returns:
            One PropertyResult per property
        """
        results = []
        for prop in self.properties:
            if names is not None and prop.name not in names:
                continue
            trials = max(1, int(round(prop.trials * self.trial_scale)))
            result = PropertyResult(name=prop.name, module=prop.module, passed=True, trials=trials)
            for i in range(trials):
                seed = self.seed + i
                try:
                    prop.check(seed)
                except AssertionError as e:
                    result.passed, result.seed, result.detail = False, seed, str(e)
                    break
                except Exception as e:
                    result.passed, result.seed, result.detail = False, seed, f"{type(e).__name__}: {e}"
                    break
            if result.passed:
                self.logger.debug(f"{prop.module}.{prop.name}: {trials} trials passed")
            else:
                self.logger.warning(f"{prop.module}.{prop.name} failed at seed {result.seed}: {result.detail}")
            results.append(result)
        return results

    # numerics

    def softmax_matches_direct_sum(self, seed: int) -> None:
        g = torch.Generator().manual_seed(seed)
        x = torch.randn(8, generator=g, dtype=F64) * 3
        tau = _uniform(g, 0.2, 3.0)
        got = _arr(numerics.softmax(x, tau))
        e = [math.exp(v / tau) for v in x.tolist()]
        expected = np.array([v / sum(e) for v in e])
        assert np.max(np.abs(got - expected)) < 1e-12, f"softmax off by {np.max(np.abs(got - expected)):.2e}"
        assert abs(got.sum() - 1.0) < 1e-12

    def matmul_matches_loops(self, seed: int) -> None:
        g = torch.Generator().manual_seed(seed)
        m, k, n = (_randint(g, 1, 16) for _ in range(3))
        a = torch.randn(m, k, generator=g, dtype=F64)
        b = torch.randn(k, n, generator=g, dtype=F64)
        A, B = _arr(a), _arr(b)
        expected = np.array([[sum(A[i, r] * B[r, j] for r in range(k)) for j in range(n)] for i in range(m)])
        err = np.max(np.abs(_arr(numerics.matmul(a, b)) - expected))
        assert err < 1e-10, f"{m}x{k} @ {k}x{n} off by {err:.2e}"

    def dwconv_is_causal(self, seed: int) -> None:
        g = torch.Generator().manual_seed(seed)
        n, d, k = 12, 3, _randint(g, 1, 5)
        x = torch.randn(n, d, generator=g, dtype=F64)
        kernel = torch.randn(k, d, generator=g, dtype=F64)
        t0 = _randint(g, 0, n - 1)
        bumped = x.clone()
        bumped[t0] += 1.0
        before, after = numerics.causal_dwconv(x, kernel), numerics.causal_dwconv(bumped, kernel)
        assert torch.equal(before[:t0], after[:t0]), f"output before t={t0} changed"

    def range_sums_match_direct(self, seed: int) -> None:
        g = torch.Generator().manual_seed(seed)
        x = torch.randn(100, 8, generator=g, dtype=F64)
        prefix = numerics.prefix_sum(x)
        for _ in range(20):
            s = _randint(g, 0, 99)
            e = _randint(g, s, 99)
            err = float((numerics.range_sum(prefix, s, e) - x[s:e + 1].sum(dim=0)).abs().max())
            assert err < 1e-12, f"range [{s}, {e}] off by {err:.2e}"

    # gates

    def predictor_matches_composition(self, seed: int) -> None:
        g = torch.Generator().manual_seed(seed)
        params = random_layer(g, _randint(g, 1, 2), 4, (2, 1, 1)).gates.aperiodic
        heads, k, dh = params.conv_kernel.shape
        n = _randint(g, 1, 10)
        x = torch.randn(n, heads * dh, generator=g, dtype=F64)
        X, kernel = _arr(x), _arr(params.conv_kernel)
        w1, b1, w2, b2 = (_arr(t) for t in (params.w1, params.b1, params.w2, params.b2))
        got = _arr(gates.predict_hidden(x, params))
        for h in range(heads):
            for t in range(n):
                u = np.zeros(dh)
                for j in range(k):
                    src = t - k + 1 + j
                    if src >= 0:
                        u += kernel[h, j] * X[src, h * dh:(h + 1) * dh]
                z = w1[h] @ u + b1[h]
                z = 0.5 * z * (1.0 + special.erf(z / math.sqrt(2.0)))
                expected = w2[h] @ z + b2[h]
                err = np.max(np.abs(got[h, t] - expected))
                assert err < 1e-10, f"head {h} t={t} off by {err:.2e}"

    def predictor_is_causal(self, seed: int) -> None:
        g = torch.Generator().manual_seed(seed)
        params = random_layer(g, 2, 4, (2, 1, 1)).gates.aperiodic
        n = 10
        x = torch.randn(n, 8, generator=g, dtype=F64)
        t0 = _randint(g, 0, n - 1)
        bumped = x.clone()
        bumped[t0] += torch.randn(8, generator=g, dtype=F64)
        before, after = gates.predict_hidden(x, params), gates.predict_hidden(bumped, params)
        assert torch.equal(before[:, :t0], after[:, :t0]), f"hidden features before t={t0} changed"

    def gates_within_unit_interval(self, seed: int) -> None:
        g = torch.Generator().manual_seed(seed)
        params = random_layer(g, 2, 4, SPLITS[seed % len(SPLITS)])
        n = _randint(g, 1, 40)
        x = torch.randn(n, 8, generator=g, dtype=F64) * 2
        matrix = gates.evaluate_gates(x, params.gates, params.temperature)
        assert float(matrix.values.min()) >= 0.0 and float(matrix.values.max()) <= 1.0, "gate outside [0, 1]"
        assert float(matrix.centers.min()) >= 0.0 and float(matrix.centers.max()) <= n - 1, "center outside sequence"
        assert float(matrix.half_widths.min()) > 0.0, "non-positive half-width"

    def period_at_least_four_frames(self, seed: int) -> None:
        g = torch.Generator().manual_seed(seed)
        rho = torch.randn(3, 5, generator=g, dtype=F64) * 50
        params = PeriodicGateParams(rho=rho, phase=torch.zeros_like(rho), duty_logit=torch.zeros_like(rho))
        assert float(gates.periods(params).min()) >= 4.0, "period below four frames"

    def positional_cos_symmetry(self, seed: int) -> None:
        g = torch.Generator().manual_seed(seed)
        pos = random_layer(g, 2, 4, (1, 1, 3), basis_size=16).gates.positional
        pos = dataclasses.replace(pos, alpha=torch.zeros_like(pos.alpha))
        n = _randint(g, 2, 60)
        values = gates.positional_gate(pos, n, 1.0)
        err = float((values - values.flip(-2)).abs().max())
        assert err < 1e-12, f"n={n}: gate(t) and gate(n-1-t) differ by {err:.2e}"

    def positional_bias_shift(self, seed: int) -> None:
        g = torch.Generator().manual_seed(seed)
        pos = random_layer(g, 2, 4, (1, 1, 3)).gates.positional
        shift = torch.randn(pos.bias.shape, generator=g, dtype=F64)
        n = _randint(g, 1, 30)
        biased = gates.positional_gate(pos, n, 0.7, bias=shift)
        moved = gates.positional_gate(dataclasses.replace(pos, bias=pos.bias + shift), n, 0.7)
        err = float((biased - moved).abs().max())
        assert err < 1e-12, f"bias shift mismatch {err:.2e}"

    # mixer

    def _random_case(self, g: torch.Generator, max_n: int = 8,
                     cross: bool = True) -> Tuple[torch.Tensor, LpaLayerParams, Optional[torch.Tensor]]:
        heads, dh = _randint(g, 1, 2), 2 * _randint(g, 1, 2)
        split = SPLITS[_randint(g, 0, len(SPLITS) - 1)]
        prev_pulses = 3 if cross and _randint(g, 0, 1) else None
        params = random_layer(g, heads, dh, split, prev_pulses=prev_pulses)
        x = torch.randn(_randint(g, 1, max_n), heads * dh, generator=g, dtype=F64)
        prev = torch.rand(prev_pulses, generator=g, dtype=F64) if prev_pulses else None
        return x, params, prev

    def pulse_weights_normalized(self, seed: int) -> None:
        g = torch.Generator().manual_seed(seed)
        params = random_layer(g, 2, 4, (2, 2, 2), noise=3.0)
        err = float((params.pulse_weights.sum(dim=-1) - 1.0).abs().max())
        assert err < 1e-6, f"pulse weights sum off by {err:.2e}"

    def summaries_match_weighted_mean(self, seed: int) -> None:
        g = torch.Generator().manual_seed(seed)
        n, pulses, d = 6, 3, 4
        values = torch.randn(1, n, d, generator=g, dtype=F64)
        weights = torch.rand(1, n, pulses, generator=g, dtype=F64)
        got, _ = mixer.gated_means(values, weights)
        V, G = _arr(values)[0], _arr(weights)[0]
        for p in range(pulses):
            expected = sum(G[t, p] * V[t] for t in range(n)) / G[:, p].sum()
            err = np.max(np.abs(_arr(got)[0, p] - expected))
            assert err < 1e-10, f"pulse {p} summary off by {err:.2e}"

    def layer_matches_brute_force(self, seed: int) -> None:
        g = torch.Generator().manual_seed(seed)
        x, params, prev = self._random_case(g)
        got = _arr(self.forward(x, params, prev).y)
        err = _rel(got, brute_force_layer(x, params, prev))
        assert err < 1e-9, f"n={x.shape[0]} H={params.heads} split={params.gates.split}: rel err {err:.2e}"

    def active_mask_range(self, seed: int) -> None:
        g = torch.Generator().manual_seed(seed)
        x, params, prev = self._random_case(g, max_n=20)
        out = mixer.lpa_forward(x, params, prev)
        assert float(out.mask.min()) >= 0.0 and float(out.mask.max()) < 1.0, "mask outside [0, 1)"
        expected = 1.0 - torch.exp(-out.gates.coverage())
        assert float((out.mask - expected).abs().max()) < 1e-12, "mask does not match gate coverage"

    def pulse_permutation_invariance(self, seed: int) -> None:
        g = torch.Generator().manual_seed(seed)
        x, params, _ = self._random_case(g, cross=False)
        n_a, n_p, n_s = params.gates.split
        pa, pp, ps = torch.randperm(n_a, generator=g), torch.randperm(n_p, generator=g), torch.randperm(n_s, generator=g)
        full = torch.cat([pa, n_a + pp, n_a + n_p + ps])
        ap, per, pos = params.gates.aperiodic, params.gates.periodic, params.gates.positional
        permuted = dataclasses.replace(
            params,
            gates=GateParams(
                aperiodic=dataclasses.replace(ap, q=ap.q[:, pa]),
                periodic=PeriodicGateParams(rho=per.rho[:, pp], phase=per.phase[:, pp],
                                            duty_logit=per.duty_logit[:, pp]),
                positional=PositionalGateParams(alpha=pos.alpha[:, ps], beta=pos.beta[:, ps], bias=pos.bias[:, ps]),
            ),
            wlogit=params.wlogit[:, full],
            amp=params.amp[:, full],
        )
        err = float((mixer.lpa_forward(x, params).y - mixer.lpa_forward(x, permuted).y).abs().max())
        assert err < 1e-12, f"permuting pulses changed the output by {err:.2e}"

    def gradients_match_finite_differences(self, seed: int) -> None:
        g = torch.Generator().manual_seed(seed)
        heads = _randint(g, 1, 2)
        params = random_layer(g, heads, 4 // heads, (1, 1, 1), basis_size=2)
        x = torch.randn(5, 4, generator=g, dtype=F64)
        upstream = torch.randn(5, 4, generator=g, dtype=F64)
        for key, result in gradcheck.check_lpa_gradients(x, params, upstream).items():
            assert result.passed(), f"{key}: rel err {result.rel_error:.2e}"

    def zero_upstream_zero_gradients(self, seed: int) -> None:
        g = torch.Generator().manual_seed(seed)
        x, params, prev = self._random_case(g)
        grads = mixer.lpa_gradients(x, params, torch.zeros_like(x), prev)
        for key, grad in grads.items():
            assert grad.numel() == 0 or float(grad.abs().max()) == 0.0, f"{key} gradient nonzero"

    # reference

    def attention_matches_loops(self, seed: int) -> None:
        g = torch.Generator().manual_seed(seed)
        params = reference.init_attention_params(8, 2, g, F64, distance_penalty=_uniform(g, 0.0, 0.5))
        x = torch.randn(4, 8, generator=g, dtype=F64)
        err = np.max(np.abs(_arr(reference.attention_forward(x, params)) - attention_oracle(x, params)))
        assert err < 1e-10, f"attention off by {err:.2e}"

    def attention_rows_stochastic(self, seed: int) -> None:
        g = torch.Generator().manual_seed(seed)
        params = reference.init_attention_params(8, 2, g, F64)
        x = torch.randn(_randint(g, 1, 20), 8, generator=g, dtype=F64) * 4
        err = float((reference.attention_weights(x, params).sum(dim=-1) - 1.0).abs().max())
        assert err < 1e-12, f"attention rows sum off by {err:.2e}"

    def encoder_taps_chain(self, seed: int) -> None:
        g = torch.Generator().manual_seed(seed)
        encoder = reference.init_encoder(dim=8, input_dim=3, layers=3, heads=2, generator=g, dtype=F64)
        out = reference.encoder_forward(torch.randn(2, 6, 3, generator=g, dtype=F64), encoder, taps=True)
        for layer in range(1, len(out.taps)):
            assert torch.equal(out.taps[layer].block_input, out.taps[layer - 1].block_output), \
                f"layer {layer} input is not layer {layer - 1} output"
        assert torch.equal(out.taps[-1].block_output, out.hidden), "last tap is not the encoder output"

    # conversion

    def temperature_schedule_endpoints(self, seed: int) -> None:
        g = torch.Generator().manual_seed(seed)
        steps = _randint(g, 2, 50)
        schedule = CurriculumSchedule(CURRICULUM_CONFIG["TAU_START"], CURRICULUM_CONFIG["TAU_END"], steps)
        taus = [conversion.temperature_at(s, schedule) for s in range(steps)]
        assert taus[0] == schedule.tau_start and abs(taus[-1] - schedule.tau_end) < 1e-12, "wrong endpoints"
        assert all(a >= b for a, b in zip(taus, taus[1:])), "temperature increased"

    def pruning_respects_floor(self, seed: int) -> None:
        g = torch.Generator().manual_seed(seed)
        amp = torch.randn(2, 12, generator=g, dtype=F64) * torch.rand(2, 12, generator=g, dtype=F64) ** 4
        floor = _randint(g, 1, 8)
        keep = conversion.surviving_pulses(amp, 0.1, floor)
        magnitude = _arr(amp).ravel()
        expected = int((magnitude > 0.1 * magnitude.max()).sum())
        assert keep.sum() == max(expected, floor), f"kept {keep.sum()}, expected {max(expected, floor)}"

    # hardgate

    def hard_matches_saturated_soft(self, seed: int) -> None:
        g = torch.Generator().manual_seed(seed)
        x, params = saturated_instance(g, n=_randint(g, 2, 6))
        violations = hardgate.margin_violations(x, params, HARDGATE_CONFIG["MARGIN"])
        assert not violations, f"instance not saturated: {violations[0]}"
        soft = _arr(self.forward(x, params).y)
        hard = _arr(hardgate.hard_forward(x, params, rounding="threshold").y)
        err = _rel(hard, soft)
        assert err < 1e-4, f"hard and soft outputs differ, rel err {err:.2e}"

    def prefix_matches_dense(self, seed: int) -> None:
        g = torch.Generator().manual_seed(seed)
        params = random_layer(g, 2, 8, (2, 2, 2))
        x = torch.randn(200, 16, generator=g, dtype=F64)
        program = hardgate.compile_program(x, params)
        prefix, _ = hardgate.prefix_accumulate(x, program, params.w_v)
        dense, _ = hardgate.dense_accumulate(x, program, params.w_v)
        err = float((prefix - dense).abs().max())
        assert err < 1e-12, f"prefix and dense summaries differ by {err:.2e}"

    def periodic_segments_match_thresholding(self, seed: int) -> None:
        rng = np.random.default_rng(seed)
        period = float(rng.uniform(4.0, 200.0))
        phase = float(rng.uniform(0.0, 2 * math.pi))
        duty = float(rng.uniform(0.01, 0.99))
        n = int(rng.integers(1, 400))
        t = np.arange(n)
        cos = np.cos(2 * math.pi * t / period - phase)
        level = math.cos(math.pi * duty)
        ambiguous = np.abs(cos - level) < 1e-9
        segments = hardgate.periodic_segments(period, phase, duty, n)
        inside = np.zeros(n, dtype=bool)
        for s, e in segments:
            inside[s:e + 1] = True
        mismatch = (inside != (cos > level)) & ~ambiguous
        assert not mismatch.any(), (f"T={period:.3f} phi={phase:.3f} d={duty:.3f} n={n}: "
                                    f"frames {np.flatnonzero(mismatch)[:5].tolist()} disagree")
        assert len(segments) <= math.ceil(n / period) + 1, f"{len(segments)} segments exceed the bound"

    def positional_runs_match_soft_gate(self, seed: int) -> None:
        g = torch.Generator().manual_seed(seed)
        pos = random_layer(g, 1, 2, (1, 1, 2), basis_size=16).gates.positional
        n = 500
        z = _arr(gates.positional_logits(pos, n))
        soft = _arr(gates.positional_gate(pos, n, 0.01)) > 0.5
        programs = hardgate.compile_positional(pos, n, cache=None)
        for j, entry in enumerate(programs[0]):
            inside = np.zeros(n, dtype=bool)
            for s, e in entry.segments:
                inside[s:e + 1] = True
            clear = np.abs(z[0, :, j]) > 0.05
            bad = np.flatnonzero((inside != soft[0, :, j]) & clear)
            assert bad.size == 0, f"pulse {j}: frames {bad[:5].tolist()} disagree with the soft gate"

    def program_cache_bounded(self, seed: int) -> None:
        cache = ProgramCache(name="check", max_size=4)
        for i in range(10):
            cache.set(("k", i), i)
        assert len(cache) == 4, f"cache holds {len(cache)} entries"
        assert ("k", 9) in cache and ("k", 0) not in cache, "eviction did not drop the oldest entries"

    # perfmodel

    def memory_table_reference(self, seed: int) -> None:
        table = perfmodel.memory_table([row[0] for row in MEMORY_REFERENCE])
        for (_, mb, kb, ratio), (_, got) in zip(MEMORY_REFERENCE, table.iterrows()):
            assert (got["attention_mb"], got["lpa_kb"], got["ratio"]) == (mb, kb, ratio), \
                f"{got['audio_s']} s: got {got['attention_mb']} MB / {got['lpa_kb']} KB / {got['ratio']}x"

    def roofline_reference(self, seed: int) -> None:
        attention = perfmodel.attention_cost(6000, 768, 12)
        for name, expected in (("linear", 1696.0), ("scores", 3311.0), ("mix", 3311.0)):
            got = attention.component(name).time_us
            assert abs(got / expected - 1.0) <= 0.01, f"attention {name}: {got:.1f} us vs {expected}"
        small, large = perfmodel.lpa_cost(6000, 768, 12), perfmodel.lpa_cost(6000, 768, 36)
        spread = large.total_time_s / small.total_time_s - 1.0
        assert abs(spread) <= 0.01, f"P=36 vs P=12 totals differ by {spread:.2%}"
        report = perfmodel.calibration_report()
        memory = report[report["bound"] == "memory"]
        outside = memory[(memory["ratio"] < 0.5) | (memory["ratio"] > 2.0)]
        assert outside.empty, f"memory-bound components off by more than 2x: {outside['component'].tolist()}"

    def cost_scaling_exponents(self, seed: int) -> None:
        mixing = perfmodel.scaling_exponents(scope="mixing")
        assert mixing["attention"] >= 1.9, f"attention mixing exponent {mixing['attention']:.3f}"
        assert mixing["lpa"] <= 1.1, f"LPA mixing exponent {mixing['lpa']:.3f}"
        total = perfmodel.scaling_exponents()
        assert total["lpa"] <= 1.1, f"LPA total exponent {total['lpa']:.3f}"
        assert total["attention"] > total["lpa"], f"attention total exponent {total['attention']:.3f}"
        asymptotic = perfmodel.scaling_exponents(PERF_CONFIG["ASYMPTOTIC_LENGTHS"])
        assert asymptotic["attention"] >= 1.9, f"attention asymptotic exponent {asymptotic['attention']:.3f}"
        assert asymptotic["lpa"] <= 1.1, f"LPA asymptotic exponent {asymptotic['lpa']:.3f}"
        totals = [perfmodel.attention_cost(t, 768, 12).total_time_s for t in PERF_CONFIG["SCALING_LENGTHS"]]
        assert all(b > a for a, b in zip(totals, totals[1:])), "attention total not increasing"
        assert perfmodel.crossover_length() is not None, "no crossover length"


def summarize(results: List[PropertyResult]) -> Tuple[int, int]:
    """Counts of passed and failed properties."""
    passed = sum(1 for r in results if r.passed)
    return passed, len(results) - passed
