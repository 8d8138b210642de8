"""
Synthetic denoising data: per-channel sums of random sinusoids plus Gaussian noise.
"""

import logging
import math
from dataclasses import dataclass
from typing import Iterator, List, Optional

import torch

from config import DATA_CONFIG, ENCODER_CONFIG
from exceptions import ConfigError

logger = logging.getLogger(__name__)

SPLITS = {"train": 0, "val": 1, "sweep": 2}


@dataclass
class Batch:
    noisy: torch.Tensor     # (B, n, d_in)
    clean: torch.Tensor     # (B, n, d_in)


@dataclass
class SyntheticDataset:
    """Fixed list of batches for one split; identical for identical (seed, split)."""
    batches: List[Batch]
    seed: int
    split: str

    def __iter__(self) -> Iterator[Batch]:
        return iter(self.batches)

    def __len__(self) -> int:
        return len(self.batches)

    def inputs(self) -> torch.Tensor:
        """All noisy inputs stacked along the batch axis."""
        return torch.cat([b.noisy for b in self.batches], dim=0)


def sinusoid_batch(generator: torch.Generator, batch_size: int, seq_len: int, input_dim: int,
                   components: int, noise_std: float, dtype: torch.dtype = torch.float32) -> Batch:
    low, high = DATA_CONFIG["PERIOD_RANGE"]
    shape = (batch_size, 1, input_dim, components)
    log_period = torch.rand(shape, generator=generator, dtype=dtype) * (math.log(high) - math.log(low)) + math.log(low)
    phase = torch.rand(shape, generator=generator, dtype=dtype) * 2.0 * math.pi
    amplitude = torch.randn(shape, generator=generator, dtype=dtype) / math.sqrt(components)

    t = torch.arange(seq_len, dtype=dtype).view(1, seq_len, 1, 1)
    clean = (amplitude * torch.sin(2.0 * math.pi * t / torch.exp(log_period) + phase)).sum(dim=-1)
    noisy = clean + noise_std * torch.randn(clean.shape, generator=generator, dtype=dtype)
    return Batch(noisy=noisy, clean=clean)


def make_dataset(seed: int, split: str = "train", batches: Optional[int] = None,
                 batch_size: int = DATA_CONFIG["BATCH_SIZE"], seq_len: int = DATA_CONFIG["SEQ_LEN"],
                 input_dim: int = ENCODER_CONFIG["INPUT_DIM"], components: int = DATA_CONFIG["COMPONENTS"],
                 noise_std: float = DATA_CONFIG["NOISE_STD"], dtype: torch.dtype = torch.float32) -> SyntheticDataset:
    """
    Build a seeded split.

    Args:
        seed: Run seed
        split: "train", "val" or "sweep"; each split draws from its own stream
        batches: Number of batches (split default when None)
        batch_size: Sequences per batch
        seq_len: Frames per sequence
        input_dim: Channels
        components: Sinusoids per channel
        noise_std: Additive noise level
        dtype: Tensor dtype

    Returns:
        SyntheticDataset
    """
    if split not in SPLITS:
        raise ConfigError(f"Unknown split {split!r}; expected one of {sorted(SPLITS)}")
    if batches is None:
        batches = DATA_CONFIG["VAL_BATCHES"] if split == "val" else DATA_CONFIG["TRAIN_BATCHES"]
    generator = torch.Generator().manual_seed(seed * len(SPLITS) + SPLITS[split])
    data = [sinusoid_batch(generator, batch_size, seq_len, input_dim, components, noise_std, dtype)
            for _ in range(batches)]
    logger.debug(f"Built {split} split with {batches} batches (seed {seed})")
    return SyntheticDataset(batches=data, seed=seed, split=split)
