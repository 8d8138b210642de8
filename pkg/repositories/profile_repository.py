import json
import os
from typing import Optional

from config import PERF_CONFIG
from exceptions import ConfigError
from models.hardware import HardwareProfile
from repositories.base_repository import BaseRepository


class ProfileRepository(BaseRepository[HardwareProfile]):
    """
    Repository for hardware profiles: the built-in ones from PERF_CONFIG plus
    JSON files ``{name, bandwidth_bps, flops: {f16, f32}}``.
    """

    def get_by_id(self, id: str) -> Optional[HardwareProfile]:
        """Get a profile by built-in name or file path."""
        if id in PERF_CONFIG["PROFILES"]:
            return HardwareProfile.from_dict(PERF_CONFIG["PROFILES"][id])
        path = self.path_for(id)
        if not os.path.exists(path):
            return None
        with open(path, "r") as f:
            try:
                return HardwareProfile.from_dict(json.load(f))
            except json.JSONDecodeError as e:
                raise ConfigError(f"Profile {path} is not valid JSON: {e}")

    def create(self, id: str, profile: HardwareProfile) -> str:
        path = self.path_for(id)
        self._ensure_parent(path)
        with open(path, "w") as f:
            json.dump(profile.to_dict(), f, indent=2)
        return path
