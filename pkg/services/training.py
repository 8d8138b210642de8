"""
Training helpers shared by teacher pre-training, the sweep and progressive
replacement: AdamW parameter groups, linear warmup, guarded optimizer steps.
"""

import logging
from typing import Callable, List, Optional, Sequence, Tuple

import torch
import torch.nn.functional as F

from config import TRAINING_CONFIG
from exceptions import DivergenceError
from models.encoder import ToyEncoder
from services import reference
from services.synthetic_data import SyntheticDataset

logger = logging.getLogger(__name__)

ParamGroup = Tuple[Sequence[torch.Tensor], float]


def make_optimizer(groups: Sequence[ParamGroup], base_lr: float = TRAINING_CONFIG["BASE_LR"],
                   weight_decay: float = TRAINING_CONFIG["WEIGHT_DECAY"]) -> torch.optim.AdamW:
    """
    AdamW over parameter groups given as (tensors, lr multiplier) pairs.

    Tensors must be leaves with requires_grad set; empty groups are skipped.
    """
    param_groups = [
        {"params": list(tensors), "lr": base_lr * scale}
        for tensors, scale in groups if len(tensors) > 0
    ]
    return torch.optim.AdamW(param_groups, lr=base_lr, weight_decay=weight_decay)


def warmup_scheduler(optimizer: torch.optim.Optimizer, total_steps: int,
                     warmup_fraction: float = TRAINING_CONFIG["WARMUP_FRACTION"]) -> torch.optim.lr_scheduler.LambdaLR:
    """Linear warmup over the first fraction of steps, constant afterwards."""
    warmup = max(int(total_steps * warmup_fraction), 1)

    def factor(step: int) -> float:
        return min((step + 1) / warmup, 1.0)

    return torch.optim.lr_scheduler.LambdaLR(optimizer, factor)


def optimizer_step(loss: torch.Tensor, optimizer: torch.optim.Optimizer,
                   scheduler: Optional[torch.optim.lr_scheduler.LambdaLR] = None,
                   clip: Optional[float] = TRAINING_CONFIG["GRAD_CLIP"]) -> float:
    """
    Backpropagate, clip and step.

    Raises:
        DivergenceError: If the loss is not finite
    """
    value = float(loss.detach())
    if not torch.isfinite(loss.detach()):
        optimizer.zero_grad(set_to_none=True)
        raise DivergenceError(f"Non-finite loss {value}")
    optimizer.zero_grad(set_to_none=True)
    loss.backward()
    if clip is not None:
        params = [p for group in optimizer.param_groups for p in group["params"]]
        torch.nn.utils.clip_grad_norm_(params, clip)
    optimizer.step()
    if scheduler is not None:
        scheduler.step()
    return value


def run_epochs(dataset: SyntheticDataset, epochs: int, loss_fn: Callable[[torch.Tensor, torch.Tensor], torch.Tensor],
               optimizer: torch.optim.Optimizer, on_step: Optional[Callable[[int, int], None]] = None,
               warmup_fraction: float = TRAINING_CONFIG["WARMUP_FRACTION"]) -> List[float]:
    """
    Run ``epochs`` passes over ``dataset`` with linear warmup.

    Args:
        dataset: Batches of (noisy, clean)
        epochs: Number of passes
        loss_fn: Maps (noisy, clean) to a scalar loss
        optimizer: Optimizer holding the trainable leaves
        on_step: Called as on_step(step, total) before each step (temperature schedules)
        warmup_fraction: Fraction of steps with linearly increasing lr

    Returns:
        Per-step loss values
    """
    total = epochs * len(dataset)
    scheduler = warmup_scheduler(optimizer, total, warmup_fraction)
    losses = []
    step = 0
    for _ in range(epochs):
        for batch in dataset:
            if on_step is not None:
                on_step(step, total)
            losses.append(optimizer_step(loss_fn(batch.noisy, batch.clean), optimizer, scheduler))
            step += 1
    return losses


def denoising_loss(encoder: ToyEncoder, noisy: torch.Tensor, clean: torch.Tensor) -> torch.Tensor:
    hidden = reference.encoder_forward(noisy, encoder).hidden
    return F.mse_loss(reference.reconstruct(hidden, encoder), clean)


def pretrain_teacher(encoder: ToyEncoder, dataset: SyntheticDataset,
                     steps: int = TRAINING_CONFIG["TEACHER_STEPS"],
                     lr: float = TRAINING_CONFIG["TEACHER_LR"]) -> ToyEncoder:
    """
    Train an attention encoder on denoising so its layers carry structure.

    Returns:
        A trained copy; the input encoder is left untouched
    """
    student = encoder.clone(requires_grad=True)
    optimizer = make_optimizer([(student.parameters(), 1.0)], base_lr=lr)
    scheduler = warmup_scheduler(optimizer, steps)
    loss = float("nan")
    for step in range(steps):
        batch = dataset.batches[step % len(dataset)]
        loss = optimizer_step(denoising_loss(student, batch.noisy, batch.clean), optimizer, scheduler)
        if step % 100 == 0:
            logger.debug(f"Teacher step {step}: loss {loss:.5f}")
    logger.info(f"Teacher pre-training finished after {steps} steps (loss {loss:.5f})")
    return student.clone()
