from dataclasses import dataclass, field
from datetime import datetime, timedelta
from typing import Any, Dict, Hashable, Optional


@dataclass
class CacheEntry:
    """
    Represents a single entry in the program cache.
    """
    key: Hashable
    data: Any
    created_at: datetime = field(default_factory=datetime.now)
    hits: int = 0

    @property
    def age(self) -> timedelta:
        """Get the age of this cache entry."""
        return datetime.now() - self.created_at


@dataclass
class ProgramCache:
    """
    Bounded cache for compiled content-independent segment programs, keyed by
    (parameter hash, sequence length). Single writer, many readers.
    """
    name: str
    entries: Dict[Hashable, CacheEntry] = field(default_factory=dict)
    max_size: Optional[int] = None
    misses: int = 0

    def get(self, key: Hashable) -> Optional[Any]:
        """Get a value from the cache."""
        entry = self.entries.get(key)
        if entry is None:
            self.misses += 1
            return None
        entry.hits += 1
        return entry.data

    def set(self, key: Hashable, value: Any) -> None:
        """Set a value in the cache."""
        self.entries[key] = CacheEntry(key=key, data=value)
        if self.max_size and len(self.entries) > self.max_size:
            self._evict_oldest()

    def delete(self, key: Hashable) -> bool:
        if key in self.entries:
            del self.entries[key]
            return True
        return False

    def clear(self) -> None:
        self.entries.clear()
        self.misses = 0

    def __len__(self) -> int:
        return len(self.entries)

    def __contains__(self, key: Hashable) -> bool:
        return key in self.entries

    def _evict_oldest(self) -> None:
        """Evict the oldest entry; insertion order breaks timestamp ties."""
        if not self.entries:
            return
        oldest_key = min(self.entries.items(), key=lambda x: x[1].created_at)[0]
        del self.entries[oldest_key]
