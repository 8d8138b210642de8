import json

import pytest
import torch

from services import mixer, reference

F64 = torch.float64


@pytest.fixture
def generator():
    return torch.Generator().manual_seed(0)


@pytest.fixture
def lpa_params(generator):
    """Small f64 layer: 2 heads of width 4, one pulse per family."""
    return mixer.init_lpa_params(8, heads=2, split=(1, 1, 1), generator=generator, dtype=F64, basis_size=4)


@pytest.fixture
def small_encoder(generator):
    return reference.init_encoder(dim=8, input_dim=3, layers=2, heads=2, generator=generator)


@pytest.fixture
def tiny_config(tmp_path):
    """Run configuration small enough for end-to-end CLI runs."""
    config = {
        "seed": 1,
        "output_dir": str(tmp_path / "artifacts"),
        "model": {"layers": 2, "dim": 8, "heads": 2, "input_dim": 3, "pulse_split": [1, 1, 1]},
        "data": {"seq_len": 12, "batch_size": 2, "train_batches": 2, "val_batches": 1},
        "schedule": {"teacher_steps": 5, "warmstart_epochs": 1, "task_epochs": 1,
                     "alignment_epochs": 1, "final_epochs": 1},
        "sweep": {"epochs": 1},
    }
    path = tmp_path / "run.json"
    path.write_text(json.dumps(config))
    return path
