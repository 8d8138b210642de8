import json
import logging
import os
from typing import Dict, Optional

import numpy as np
import torch

from exceptions import ConfigError, ShapeError
from models.encoder import ToyEncoder
from repositories.base_repository import BaseRepository

FORMAT = "pulse-params/1"


class ParameterRepository(BaseRepository[ToyEncoder]):
    """
    Repository for encoder checkpoints.

    A checkpoint is JSON ``{format, meta, arrays}`` where ``meta`` is
    ``ToyEncoder.describe()`` and ``arrays`` maps parameter keys such as
    ``layer.0.gates.aperiodic.q`` to ``{shape, data}`` with row-major float32 data.
    """

    def __init__(self, data_dir: str = "artifacts", dtype: torch.dtype = torch.float32):
        super().__init__(data_dir)
        self.dtype = dtype
        self.logger = logging.getLogger(__name__)

    @staticmethod
    def encode_arrays(named: Dict[str, torch.Tensor]) -> Dict[str, Dict]:
        arrays = {}
        for key, tensor in named.items():
            data = tensor.detach().cpu().to(torch.float32).numpy()
            arrays[key] = {"shape": list(data.shape), "data": data.ravel().tolist()}
        return arrays

    def decode_arrays(self, arrays: Dict[str, Dict]) -> Dict[str, torch.Tensor]:
        named = {}
        for key, entry in arrays.items():
            try:
                data = np.asarray(entry["data"], dtype=np.float32)
                shape = tuple(entry["shape"])
            except (KeyError, TypeError, ValueError) as e:
                raise ConfigError(f"Malformed array {key!r}: {e}")
            if data.size != int(np.prod(shape)):
                raise ShapeError(f"Array {key!r} has {data.size} values for shape {shape}")
            named[key] = torch.from_numpy(data.reshape(shape)).to(self.dtype)
        return named

    def get_by_id(self, id: str) -> Optional[ToyEncoder]:
        """Load an encoder checkpoint, or None when the file does not exist."""
        path = self.path_for(id)
        if not os.path.exists(path):
            return None
        with open(path, "r") as f:
            try:
                payload = json.load(f)
            except json.JSONDecodeError as e:
                raise ConfigError(f"Checkpoint {path} is not valid JSON: {e}")
        if payload.get("format") != FORMAT:
            raise ConfigError(f"Checkpoint {path} has format {payload.get('format')!r}, expected {FORMAT!r}")
        meta = payload.get("meta", {})
        encoder = ToyEncoder.from_named(self.decode_arrays(payload.get("arrays", {})), layers=meta.get("layers", []))
        self.logger.info(f"Loaded checkpoint {path} ({encoder.num_layers} layers, kinds {encoder.mixer_kinds})")
        return encoder

    def create(self, id: str, encoder: ToyEncoder) -> str:
        """Write an encoder checkpoint."""
        path = self.path_for(id)
        self._ensure_parent(path)
        payload = {
            "format": FORMAT,
            "meta": encoder.describe(),
            "arrays": self.encode_arrays(encoder.named_tensors()),
        }
        with open(path, "w") as f:
            json.dump(payload, f)
        self.logger.info(f"Saved checkpoint {path}")
        return path
