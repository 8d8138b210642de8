import logging
import os
from typing import List, Optional

import pandas as pd

from exceptions import ShapeError
from repositories.base_repository import BaseRepository


class ReportRepository(BaseRepository[pd.DataFrame]):
    """
    Repository for tabular reports written as CSV with a header row.
    """

    extension = ".csv"

    def __init__(self, data_dir: str = "artifacts"):
        super().__init__(data_dir)
        self.logger = logging.getLogger(__name__)

    def get_by_id(self, id: str) -> Optional[pd.DataFrame]:
        path = self.path_for(id)
        if not os.path.exists(path):
            return None
        return pd.read_csv(path)

    def create(self, id: str, frame: pd.DataFrame, columns: Optional[List[str]] = None) -> str:
        """Write a report; ``columns`` fixes the column order and must all be present."""
        if columns is not None:
            missing = [c for c in columns if c not in frame.columns]
            if missing:
                raise ShapeError(f"Report {id!r} is missing columns {missing}")
            frame = frame[columns]
        path = self.path_for(id)
        self._ensure_parent(path)
        frame.to_csv(path, index=False)
        self.logger.info(f"Wrote {path} ({len(frame)} rows)")
        return path
