import json
import os
from dataclasses import asdict, dataclass, field, fields
from typing import Any, Dict, Optional, Tuple

from config import CLI_CONFIG, CURRICULUM_CONFIG, DATA_CONFIG, ENCODER_CONFIG, GATE_CONFIG, TRAINING_CONFIG
from exceptions import CheckpointNotFoundError, ConfigError
from models.conversion import SweepHyperparams


@dataclass
class ModelConfig:
    layers: int = ENCODER_CONFIG["LAYERS"]
    dim: int = ENCODER_CONFIG["DIM"]
    heads: int = ENCODER_CONFIG["HEADS"]
    input_dim: int = ENCODER_CONFIG["INPUT_DIM"]
    pulse_split: Tuple[int, int, int] = GATE_CONFIG["PULSE_SPLIT"]

    def __post_init__(self):
        self.pulse_split = tuple(self.pulse_split)
        if len(self.pulse_split) != 3 or any(p < 0 for p in self.pulse_split) or sum(self.pulse_split) == 0:
            raise ConfigError(f"Pulse split must be three non-negative counts, got {self.pulse_split}")
        if self.dim % self.heads != 0:
            raise ConfigError(f"Width {self.dim} is not divisible by {self.heads} heads")
        if self.layers < 1:
            raise ConfigError(f"Encoder needs at least one layer, got {self.layers}")


@dataclass
class DataConfig:
    seq_len: int = DATA_CONFIG["SEQ_LEN"]
    batch_size: int = DATA_CONFIG["BATCH_SIZE"]
    train_batches: int = DATA_CONFIG["TRAIN_BATCHES"]
    val_batches: int = DATA_CONFIG["VAL_BATCHES"]


@dataclass
class ScheduleConfig:
    tau_start: float = CURRICULUM_CONFIG["TAU_START"]
    tau_end: float = CURRICULUM_CONFIG["TAU_END"]
    teacher_steps: int = TRAINING_CONFIG["TEACHER_STEPS"]
    warmstart_epochs: int = TRAINING_CONFIG["WARMSTART_EPOCHS"]
    task_epochs: int = TRAINING_CONFIG["TASK_EPOCHS"]
    alignment_epochs: int = TRAINING_CONFIG["ALIGNMENT_EPOCHS"]
    final_epochs: int = TRAINING_CONFIG["FINAL_EPOCHS"]
    base_lr: float = TRAINING_CONFIG["BASE_LR"]

    def training_settings(self) -> Dict[str, Any]:
        """Overrides for ConversionService settings."""
        return {
            "WARMSTART_EPOCHS": self.warmstart_epochs,
            "TASK_EPOCHS": self.task_epochs,
            "ALIGNMENT_EPOCHS": self.alignment_epochs,
            "FINAL_EPOCHS": self.final_epochs,
            "BASE_LR": self.base_lr,
            "TEACHER_STEPS": self.teacher_steps,
            "TAU_START": self.tau_start,
            "TAU_END": self.tau_end,
        }


@dataclass
class RunConfig:
    """
    Settings of one CLI run: defaults, then a JSON config file, then flags.

    JSON schema: ``{"seed": int, "output_dir": str, "model": {...},
    "data": {...}, "schedule": {...}, "sweep": {...}}`` where each section
    takes the field names of the matching dataclass.
    """
    seed: int = 0
    output_dir: str = CLI_CONFIG["OUTPUT_DIR"]
    model: ModelConfig = field(default_factory=ModelConfig)
    data: DataConfig = field(default_factory=DataConfig)
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    sweep: SweepHyperparams = field(default_factory=SweepHyperparams)

    @staticmethod
    def _section(cls, data: Optional[Dict[str, Any]], name: str):
        data = data or {}
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"Unknown keys in config section {name!r}: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "RunConfig":
        unknown = set(data) - {"seed", "output_dir", "model", "data", "schedule", "sweep"}
        if unknown:
            raise ConfigError(f"Unknown config keys: {sorted(unknown)}")
        try:
            return cls(
                seed=int(data.get("seed", 0)),
                output_dir=data.get("output_dir", CLI_CONFIG["OUTPUT_DIR"]),
                model=cls._section(ModelConfig, data.get("model"), "model"),
                data=cls._section(DataConfig, data.get("data"), "data"),
                schedule=cls._section(ScheduleConfig, data.get("schedule"), "schedule"),
                sweep=cls._section(SweepHyperparams, data.get("sweep"), "sweep"),
            )
        except TypeError as e:
            raise ConfigError(f"Invalid config: {e}")

    @classmethod
    def load(cls, path: Optional[str] = None, seed: Optional[int] = None,
             output_dir: Optional[str] = None) -> "RunConfig":
        """
        Build the run configuration.

        Seed resolution: ``seed`` argument, then the config file, then the
        PULSE_SEED environment variable, then 0.
        """
        data: Dict[str, Any] = {}
        if path is not None:
            if not os.path.exists(path):
                raise CheckpointNotFoundError(path)
            with open(path, "r") as f:
                try:
                    data = json.load(f)
                except json.JSONDecodeError as e:
                    raise ConfigError(f"Config file {path} is not valid JSON: {e}")
        if seed is None:
            seed = data.get("seed")
        if seed is None:
            try:
                seed = int(os.environ.get("PULSE_SEED", "0"))
            except ValueError:
                raise ConfigError(f"PULSE_SEED must be an integer, got {os.environ.get('PULSE_SEED')!r}")
        data["seed"] = seed
        if output_dir is not None:
            data["output_dir"] = output_dir
        elif "output_dir" not in data:
            data["output_dir"] = os.environ.get("PULSE_OUT", CLI_CONFIG["OUTPUT_DIR"])
        return cls.from_dict(data)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)
