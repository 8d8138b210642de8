import json
import os
from typing import List, Optional

from exceptions import ConfigError
from models.segment_program import SegmentProgram
from repositories.base_repository import BaseRepository


class ProgramRepository(BaseRepository[List[SegmentProgram]]):
    """
    Repository for compiled segment programs, one JSON file per inference run
    holding a list of programs (one per sequence).
    """

    def get_by_id(self, id: str) -> Optional[List[SegmentProgram]]:
        path = self.path_for(id)
        if not os.path.exists(path):
            return None
        with open(path, "r") as f:
            try:
                payload = json.load(f)
            except json.JSONDecodeError as e:
                raise ConfigError(f"Program dump {path} is not valid JSON: {e}")
        return [SegmentProgram.from_dict(item) for item in payload.get("programs", [])]

    def create(self, id: str, programs: List[SegmentProgram]) -> str:
        path = self.path_for(id)
        self._ensure_parent(path)
        with open(path, "w") as f:
            json.dump({"programs": [p.to_dict() for p in programs]}, f, indent=2)
        return path
