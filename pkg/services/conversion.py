"""
Attention-to-LPA Conversion

MSE diagnostic sweep with elastic-net pulse pruning, selective initialization
from attention weights, and progressive layer replacement with a temperature
curriculum and auto-reverting alignment.
"""

import logging
import math
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
import torch
import torch.nn.functional as F

from config import CURRICULUM_CONFIG, GATE_CONFIG, SWEEP_CONFIG, TRAINING_CONFIG
from exceptions import ConfigError, DivergenceError, ShapeError
from models.conversion import (
    GLOBAL,
    LOCAL,
    ORDER_COLUMNS,
    ConversionResult,
    CurriculumSchedule,
    LayerSweepResult,
    StageTrace,
    SweepHyperparams,
    SweepReport,
)
from models.encoder import ATTENTION, AttentionParams, ToyEncoder
from models.lpa_params import LpaLayerParams
from services import mixer, reference, training
from services.synthetic_data import Batch, SyntheticDataset, make_dataset

ORDERS = ("mse", "reverse", "natural")


def temperature_at(step: float, schedule: CurriculumSchedule) -> float:
    """
    Linear interpolation from tau_start (step 0) to tau_end (last step).

    Steps outside the phase are clamped; a single-step phase sits at tau_end.
    """
    last = schedule.steps - 1
    if last <= 0:
        return schedule.tau_end
    frac = min(max(step / last, 0.0), 1.0)
    return schedule.tau_start + (schedule.tau_end - schedule.tau_start) * frac


def elastic_net_penalty(amp: torch.Tensor, lambda1: float, lambda2: float) -> torch.Tensor:
    return lambda1 * amp.abs().sum() + lambda2 * (amp * amp).sum()


def surviving_pulses(amp: torch.Tensor, threshold: float = SWEEP_CONFIG["PRUNE_THRESHOLD"],
                     floor: int = SWEEP_CONFIG["FLOOR"]) -> np.ndarray:
    """
    Boolean keep-mask over all pulses of a layer.

    A pulse survives when |a| > threshold * max|a|; if fewer than ``floor``
    survive, the ``floor`` largest are kept.
    """
    magnitude = amp.detach().abs().flatten().cpu().numpy()
    keep = magnitude > threshold * magnitude.max() if magnitude.size else magnitude.astype(bool)
    target = min(floor, magnitude.size)
    if keep.sum() < target:
        keep = np.zeros_like(keep)
        keep[np.argsort(-magnitude, kind="stable")[:target]] = True
    return keep


def amplitude_histogram(amp: torch.Tensor, bins: int = SWEEP_CONFIG["HISTOGRAM_BINS"]) -> List[int]:
    """Counts of |a| / max|a| over equal bins of [0, 1]."""
    magnitude = amp.detach().abs().flatten().cpu().numpy()
    peak = magnitude.max() if magnitude.size else 0.0
    relative = magnitude / peak if peak > 0 else magnitude
    counts, _ = np.histogram(relative, bins=bins, range=(0.0, 1.0))
    return counts.tolist()


def overprovisioned_split(base: Tuple[int, int, int] = GATE_CONFIG["PULSE_SPLIT"],
                          pulses_per_family: Optional[int] = None) -> Tuple[int, int, int]:
    if pulses_per_family is not None:
        return (pulses_per_family,) * 3
    factor = SWEEP_CONFIG["OVERPROVISION"]
    return tuple(n * factor for n in base)


def selective_init(attn: AttentionParams, heads: int, split: Tuple[int, int, int] = GATE_CONFIG["PULSE_SPLIT"],
                   generator: Optional[torch.Generator] = None, dim: Optional[int] = None,
                   prev_pulses: Optional[int] = None, temperature: float = 1.0) -> LpaLayerParams:
    """
    Initialize a pulse accumulator layer from an attention layer.

    W_V and W_O are copied. Query vector p of head h takes row (h * P_a + p) mod d
    of W_Q, restricted to the head's channel slice and truncated to d_h / 2.
    Everything else uses the seeded defaults.

    Args:
        attn: Source attention parameters
        heads: LPA head count
        split: Pulses per head for (aperiodic, periodic, positional)
        generator: Torch generator for the remaining defaults
        dim: Expected model width; a mismatch raises ShapeError
        prev_pulses: Size of the previous layer's gate pattern for cross-layer coordination
        temperature: Initial layer temperature

    Returns:
        LpaLayerParams
    """
    d = attn.dim
    if dim is not None and dim != d:
        raise ShapeError(f"Attention width {d} does not match requested width {dim}")
    dtype = attn.w_q.dtype
    params = mixer.init_lpa_params(d, heads, split, generator=generator, dtype=dtype,
                                   temperature=temperature, prev_pulses=prev_pulses)
    dh = params.head_dim
    n_a = split[0]
    rows = (torch.arange(heads).unsqueeze(1) * n_a + torch.arange(n_a)) % d      # (H, P_a)
    q = torch.stack([
        attn.w_q.detach()[rows[h]][:, h * dh:h * dh + dh // 2]
        for h in range(heads)
    ])
    params.gates.aperiodic.q = q.clone()
    params.w_v = attn.w_v.detach().clone()
    params.w_o = attn.w_o.detach().clone()
    return params


def resolve_order(kind: str, report: Optional[SweepReport], num_layers: int) -> List[int]:
    if kind == "natural":
        return list(range(num_layers))
    if report is None:
        raise ConfigError(f"Order {kind!r} needs a sweep report")
    if kind == "mse":
        return list(report.order)
    if kind == "reverse":
        return list(reversed(report.order))
    raise ConfigError(f"Unknown replacement order {kind!r}; expected one of {ORDERS}")


class ConversionService:
    """
    Runs the sweep and the progressive replacement on a frozen teacher encoder.
    """

    def __init__(self, seed: int = 0, settings: Optional[Dict] = None):
        """
        Initialize the conversion service.

        Args:
            seed: Seed for LPA initialization draws
            settings: Overrides for TRAINING_CONFIG keys, TAU_START / TAU_END and PULSE_SPLIT
        """
        self.seed = seed
        self.settings = {**TRAINING_CONFIG, **CURRICULUM_CONFIG, **(settings or {})}
        self.split = tuple(self.settings.get("PULSE_SPLIT", GATE_CONFIG["PULSE_SPLIT"]))
        self.logger = logging.getLogger(__name__)

    def _schedule(self, scope: str) -> CurriculumSchedule:
        return CurriculumSchedule(self.settings["TAU_START"], self.settings["TAU_END"], scope=scope)

    def _generator(self, salt: int) -> torch.Generator:
        return torch.Generator().manual_seed(self.seed * 1009 + salt)

    # ------------------------------------------------------------------
    # Diagnostic sweep
    # ------------------------------------------------------------------

    def collect_taps(self, encoder: ToyEncoder, dataset: SyntheticDataset) -> List[List[Batch]]:
        """Per layer, batches of (mix_input, mix_output) pairs under no_grad."""
        pairs: List[List[Batch]] = [[] for _ in range(encoder.num_layers)]
        with torch.no_grad():
            for batch in dataset:
                out = reference.encoder_forward(batch.noisy, encoder, taps=True)
                for layer, tap in enumerate(out.taps):
                    pairs[layer].append(Batch(noisy=tap.mix_input, clean=tap.mix_output))
        return pairs

    def fit_layer(self, params: LpaLayerParams, pairs: SyntheticDataset, epochs: int, lr: float,
                  lambda1: float = 0.0, lambda2: float = 0.0, weight_decay: float = 0.0) -> Tuple[LpaLayerParams, float]:
        """
        Fit one LPA layer to tap pairs by MSE plus an optional elastic net on amplitudes.

        Returns:
            Tuple of the fitted parameters and the final mean MSE over ``pairs``
        """
        student = params.clone(requires_grad=True)
        optimizer = training.make_optimizer([(student.parameters(), 1.0)], base_lr=lr, weight_decay=weight_decay)

        def loss_fn(u: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
            y = mixer.lpa_forward(u, student).y
            return F.mse_loss(y, target) + elastic_net_penalty(student.amp, lambda1, lambda2)

        training.run_epochs(pairs, epochs, loss_fn, optimizer)
        fitted = student.clone()
        return fitted, self.layer_mse(fitted, pairs)

    @staticmethod
    def layer_mse(params: LpaLayerParams, pairs: SyntheticDataset) -> float:
        with torch.no_grad():
            losses = [float(F.mse_loss(mixer.lpa_forward(b.noisy, params).y, b.clean)) for b in pairs]
        return float(np.mean(losses)) if losses else math.nan

    def mse_sweep(self, teacher: ToyEncoder, dataset: SyntheticDataset,
                  hp: Optional[SweepHyperparams] = None, heads: Optional[int] = None) -> SweepReport:
        """
        Measure how well an overprovisioned LPA layer can mimic each attention layer.

        Args:
            teacher: Frozen attention encoder (never modified)
            dataset: Sweep data
            hp: Sweep hyperparameters
            heads: LPA heads (largest configured count fitting the width when None)

        Returns:
            SweepReport with layers ordered easiest first; failed layers sort last
        """
        hp = hp or SweepHyperparams()
        heads = heads or reference.lpa_heads_for(teacher.dim)
        split = overprovisioned_split(self.split, hp.pulses_per_family)
        taps = self.collect_taps(teacher, dataset)

        results = []
        for layer, batches in enumerate(taps):
            self.logger.info(f"Sweeping layer {layer} with {heads} x {sum(split)} pulses")
            pairs = SyntheticDataset(batches=batches, seed=dataset.seed, split=dataset.split)
            attn = teacher.layers[layer].mixer
            if teacher.layers[layer].kind == ATTENTION:
                init = selective_init(attn, heads, split, self._generator(layer), temperature=hp.temperature)
            else:
                init = mixer.init_lpa_params(teacher.dim, heads, split, self._generator(layer), temperature=hp.temperature)
            try:
                fitted, mse = self.fit_layer(init, pairs, hp.epochs, hp.lr, hp.lambda1, hp.lambda2)
                if not math.isfinite(mse):
                    raise DivergenceError(f"Final MSE {mse}")
            except DivergenceError as e:
                self.logger.warning(f"Sweep of layer {layer} diverged: {e}")
                results.append(LayerSweepResult(layer=layer, mse=math.inf, surviving=0, failed=True,
                                                diagnostics=str(e)))
                continue
            keep = surviving_pulses(fitted.amp, hp.threshold, hp.floor)
            results.append(LayerSweepResult(layer=layer, mse=mse, surviving=int(keep.sum()),
                                            histogram=amplitude_histogram(fitted.amp)))
            self.logger.info(f"Layer {layer}: MSE {mse:.6f}, {int(keep.sum())} pulses survive")

        order = [r.layer for r in sorted(results, key=lambda r: (r.failed, r.mse, r.layer))]
        return SweepReport(layers=results, order=order)

    # ------------------------------------------------------------------
    # Progressive replacement
    # ------------------------------------------------------------------

    def distillation_targets(self, teacher: ToyEncoder, dataset: SyntheticDataset) -> SyntheticDataset:
        """Pair every input batch with the teacher's final hidden states."""
        with torch.no_grad():
            batches = [Batch(noisy=b.noisy, clean=reference.encoder_forward(b.noisy, teacher).hidden)
                       for b in dataset]
        return SyntheticDataset(batches=batches, seed=dataset.seed, split=dataset.split)

    @staticmethod
    def distillation_metric(student: ToyEncoder, targets: SyntheticDataset) -> float:
        with torch.no_grad():
            losses = [float(F.mse_loss(reference.encoder_forward(b.noisy, student).hidden, b.clean))
                      for b in targets]
        return float(np.mean(losses)) if losses else math.nan

    @staticmethod
    def set_temperature(encoder: ToyEncoder, layers: Sequence[int], tau: float) -> None:
        for index in layers:
            encoder.layers[index].mixer.temperature = tau

    def _train_phase(self, student: ToyEncoder, targets: SyntheticDataset, groups: List[Tuple[List[torch.Tensor], float]],
                     epochs: int, lr_scale: float, schedule: Optional[CurriculumSchedule], annealed: Sequence[int],
                     trace: StageTrace, stage: int, layer: int, phase: str) -> List[float]:
        base_lr = self.settings["BASE_LR"] * lr_scale
        optimizer = training.make_optimizer(groups, base_lr=base_lr, weight_decay=self.settings["WEIGHT_DECAY"])
        taus: List[float] = []

        def on_step(step: int, total: int) -> None:
            if schedule is not None:
                schedule.steps = total
                self.set_temperature(student, annealed, temperature_at(step, schedule))
            taus.append(student.layers[annealed[0]].mixer.temperature if annealed else math.nan)

        def loss_fn(noisy: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
            return F.mse_loss(reference.encoder_forward(noisy, student).hidden, target)

        losses = training.run_epochs(targets, epochs, loss_fn, optimizer, on_step,
                                     self.settings["WARMUP_FRACTION"])
        for step, (tau, loss) in enumerate(zip(taus, losses)):
            trace.add(stage=stage, layer=layer, phase=phase, step=step, tau=tau, loss=loss, val_metric=math.nan)
        return losses

    @staticmethod
    def _trainable(student: ToyEncoder, lpa_layers: Sequence[int], ffn_scale: Optional[float] = None,
                   norm_scale: Optional[float] = None) -> List[Tuple[List[torch.Tensor], float]]:
        """Parameter groups for a phase; a scale of None leaves that group frozen."""
        groups = [([t for i in lpa_layers for t in student.layers[i].mixer.parameters()], 1.0)]
        if ffn_scale is not None:
            groups.append(([t for layer in student.layers for t in layer.ffn.parameters()], ffn_scale))
        if norm_scale is not None:
            groups.append(([t for layer in student.layers
                            for t in layer.norm1.parameters() + layer.norm2.parameters()], norm_scale))
        for tensors, _ in groups:
            for t in tensors:
                t.requires_grad_(True)
        return groups

    def warm_start(self, lpa: LpaLayerParams, student: ToyEncoder, layer: int,
                   dataset: SyntheticDataset, tau: float) -> LpaLayerParams:
        """Fit the new layer to the student's current mixing-slot taps."""
        taps = self.collect_taps(student, dataset)[layer]
        pairs = SyntheticDataset(batches=taps, seed=dataset.seed, split=dataset.split)
        lpa.temperature = tau
        fitted, mse = self.fit_layer(lpa, pairs, self.settings["WARMSTART_EPOCHS"], self.settings["BASE_LR"],
                                     weight_decay=self.settings["WEIGHT_DECAY"])
        self.logger.info(f"Warm start of layer {layer}: tap MSE {mse:.6f}")
        return fitted

    def run_alignment(self, student: ToyEncoder, train: SyntheticDataset, val: SyntheticDataset,
                      trace: Optional[StageTrace] = None, stage: int = 0, layer: int = -1) -> Tuple[ToyEncoder, bool, float]:
        """
        Fine-tune every LPA layer with a global temperature re-anneal.

        The pre-alignment encoder is restored bit for bit when the validation
        metric gets worse (or training diverges).

        Returns:
            Tuple of (encoder, reverted, validation metric)
        """
        trace = trace if trace is not None else StageTrace()
        snapshot = student.clone()
        before = self.distillation_metric(snapshot, val)
        candidate = student.clone()
        lpa_layers = candidate.lpa_layers
        groups = self._trainable(candidate, lpa_layers)
        schedule = self._schedule(GLOBAL)
        try:
            self._train_phase(candidate, train, groups, self.settings["ALIGNMENT_EPOCHS"],
                              self.settings["ALIGNMENT_LR_SCALE"], schedule, lpa_layers, trace, stage, layer, "alignment")
            after = self.distillation_metric(candidate, val)
        except DivergenceError as e:
            self.logger.warning(f"Alignment diverged: {e}")
            after = math.inf

        reverted = not after <= before
        if reverted:
            self.logger.info(f"Alignment worsened the metric ({before:.6f} -> {after:.6f}); reverting")
            result, metric = snapshot, before
        else:
            result, metric = candidate.clone(), after
        trace.add(stage=stage, layer=layer, phase="alignment", step=-1, tau=math.nan, loss=after,
                  val_metric=metric, reverted=reverted)
        return result, reverted, metric

    def progressive_replace(self, teacher: ToyEncoder, order: Sequence[int], train: SyntheticDataset,
                            val: SyntheticDataset, budget: Optional[float] = None,
                            heads: Optional[int] = None) -> ConversionResult:
        """
        Replace attention layers one at a time in ``order``.

        Each stage runs: selective init, warm start on the student's taps, task
        training (distillation to the teacher's final hidden states) with a local
        temperature curriculum, then alignment of all LPA layers with auto-revert.
        Replacement stops after the first stage whose metric exceeds ``budget``;
        that stage is kept.

        Args:
            teacher: Frozen attention encoder
            order: Layer indices in replacement order
            train: Training data
            val: Held-out data for the validation metric
            budget: Metric ceiling (TRAINING_CONFIG["BUDGET"] when None)
            heads: LPA heads (largest configured count fitting the width when None)

        Returns:
            ConversionResult with the converted encoder and its stage trace
        """
        if sorted(order) != sorted(set(order)) or any(not 0 <= i < teacher.num_layers for i in order):
            raise ConfigError(f"Replacement order {list(order)} is not a set of layer indices")
        budget = self.settings["BUDGET"] if budget is None else budget
        heads = heads or reference.lpa_heads_for(teacher.dim)
        split = self.split
        total_pulses = heads * sum(split)

        train_targets = self.distillation_targets(teacher, train)
        val_targets = self.distillation_targets(teacher, val)
        student = teacher.clone()
        trace = StageTrace()
        metric = self.distillation_metric(student, val_targets)
        trace.add(stage=0, layer=-1, phase="baseline", step=0, tau=math.nan, loss=metric, val_metric=metric)
        self.logger.info(f"Baseline distillation metric {metric:.6f}")

        replaced: List[int] = []
        stopped = False
        for stage, layer in enumerate(order, start=1):
            self.logger.info(f"Stage {stage}: replacing layer {layer}")
            local = self._schedule(LOCAL)
            lpa = selective_init(student.layers[layer].mixer, heads, split, self._generator(100 + layer),
                                 dim=student.dim, prev_pulses=total_pulses, temperature=local.tau_start)
            lpa = self.warm_start(lpa, student, layer, train, local.tau_start)
            student = student.replace_mixer(layer, lpa).clone()
            replaced.append(layer)

            groups = self._trainable(student, [layer], self.settings["FFN_LR_SCALE"], 1.0)
            self._train_phase(student, train_targets, groups, self.settings["TASK_EPOCHS"], 1.0, local, [layer],
                              trace, stage, layer, "task")
            student = student.clone()
            metric = self.distillation_metric(student, val_targets)
            trace.rows[-1].val_metric = metric

            student, _, metric = self.run_alignment(student, train_targets, val_targets, trace, stage, layer)
            if metric > budget:
                self.logger.info(f"Metric {metric:.6f} exceeds budget {budget}; stopping after layer {layer}")
                stopped = True
                break

        if replaced and self.settings["FINAL_EPOCHS"] > 0:
            groups = self._trainable(student, student.lpa_layers, 1.0, 1.0)
            self._train_phase(student, train_targets, groups, self.settings["FINAL_EPOCHS"],
                              self.settings["FINAL_LR_SCALE"], None, [], trace, len(replaced) + 1, -1, "final")
            student = student.clone()
            metric = self.distillation_metric(student, val_targets)
            trace.rows[-1].val_metric = metric

        self.logger.info(f"Converted {len(replaced)} layers; final metric {metric:.6f}")
        return ConversionResult(encoder=student, trace=trace, replaced=replaced,
                                final_metric=metric, stopped_on_budget=stopped)

    # ------------------------------------------------------------------
    # Order experiment
    # ------------------------------------------------------------------

    def compare_orders(self, build_teacher, seeds: Sequence[int],
                       orders: Sequence[str] = ("mse", "reverse"),
                       hp: Optional[SweepHyperparams] = None,
                       make_data: Callable[[int, str], SyntheticDataset] = make_dataset) -> pd.DataFrame:
        """
        Paired-seed comparison of replacement orders.

        Args:
            build_teacher: Callable seed -> trained teacher encoder
            seeds: Seeds; every order sees the same teacher and data for a seed
            orders: Order kinds to compare
            hp: Sweep hyperparameters
            make_data: Callable (seed, split) -> dataset

        Returns:
            DataFrame with columns seed, order, final_loss
        """
        rows = []
        for seed in seeds:
            teacher = build_teacher(seed)
            train = make_data(seed, "train")
            val = make_data(seed, "val")
            report = ConversionService(seed, self.settings).mse_sweep(teacher, make_data(seed, "sweep"), hp)
            for kind in orders:
                service = ConversionService(seed, self.settings)
                order = resolve_order(kind, report, teacher.num_layers)
                result = service.progressive_replace(teacher, order, train, val)
                rows.append({"seed": seed, "order": kind, "final_loss": result.final_metric})
                self.logger.info(f"Seed {seed}, order {kind}: final loss {result.final_metric:.6f}")
        return pd.DataFrame(rows, columns=ORDER_COLUMNS)
