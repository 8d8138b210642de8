import os
from abc import ABC, abstractmethod
from typing import Generic, List, Optional, TypeVar

from exceptions import CheckpointNotFoundError

T = TypeVar('T')  # Generic type for the stored artifact


class BaseRepository(Generic[T], ABC):
    """
    Abstract base repository for file-backed artifacts.

    An id is either a bare name (stored as ``<data_dir>/<id><extension>``) or
    a path to an existing or new file.
    """

    extension = ".json"

    def __init__(self, data_dir: str = "artifacts"):
        """Initialize the repository with a data directory."""
        self.data_dir = data_dir

    def path_for(self, id: str) -> str:
        """Resolve an id to a file path."""
        if os.path.isabs(id) or os.sep in id or id.endswith(self.extension):
            return id
        return os.path.join(self.data_dir, f"{id}{self.extension}")

    def exists(self, id: str) -> bool:
        return os.path.exists(self.path_for(id))

    def list_ids(self) -> List[str]:
        """Names of every artifact of this type in the data directory."""
        if not os.path.isdir(self.data_dir):
            return []
        return sorted(name[:-len(self.extension)] for name in os.listdir(self.data_dir)
                      if name.endswith(self.extension))

    def load(self, id: str) -> T:
        """Like get_by_id, but a missing artifact raises CheckpointNotFoundError."""
        entity = self.get_by_id(id)
        if entity is None:
            raise CheckpointNotFoundError(self.path_for(id))
        return entity

    @abstractmethod
    def get_by_id(self, id: str) -> Optional[T]:
        """Get an artifact by its id, or None when it does not exist."""
        pass

    @abstractmethod
    def create(self, id: str, entity: T) -> str:
        """Write an artifact and return its path."""
        pass

    def delete(self, id: str) -> bool:
        """Delete an artifact by its id."""
        path = self.path_for(id)
        if os.path.exists(path):
            os.remove(path)
            return True
        return False

    def _ensure_parent(self, path: str) -> None:
        parent = os.path.dirname(path)
        if parent:
            os.makedirs(parent, exist_ok=True)
