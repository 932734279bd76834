"""FIFO content store at each roadside unit."""
from __future__ import annotations

from collections import OrderedDict
from typing import Dict, Iterable, List, Tuple


class CacheError(ValueError):
    pass


class RsuCache:
    """First-in-first-out store of (content_id, size_bits) entries.

    Re-inserting a present item is a no-op and does not refresh its position;
    eviction is strictly by insertion age.
    """

    def __init__(self, capacity_bits: float):
        if capacity_bits < 0:
            raise CacheError("capacity must be non-negative")
        self.capacity_bits = float(capacity_bits)
        self._entries: "OrderedDict[int, float]" = OrderedDict()
        self.used_bits = 0.0

    def __len__(self) -> int:
        return len(self._entries)

    def __contains__(self, content_id: int) -> bool:
        return content_id in self._entries

    def contains(self, content_id: int) -> bool:
        return content_id in self._entries

    @property
    def entries(self) -> List[Tuple[int, float]]:
        """Oldest first."""
        return list(self._entries.items())

    def fits(self, size_bits: float) -> bool:
        return size_bits <= self.capacity_bits

    def insert(self, content_id: int, size_bits: float) -> None:
        if content_id in self._entries:
            return
        if size_bits <= 0:
            raise CacheError(f"content {content_id} has non-positive size")
        if size_bits > self.capacity_bits:
            raise CacheError(
                f"content {content_id} ({size_bits:g} bits) exceeds cache capacity {self.capacity_bits:g}")
        while self.used_bits + size_bits > self.capacity_bits:
            _, old = self._entries.popitem(last=False)
            self.used_bits -= old
        self._entries[content_id] = float(size_bits)
        self.used_bits += size_bits

    def apply_caching_decisions(self, decisions: Iterable[Tuple[int, float]]) -> "RsuCache":
        """Insert each decided content in order, deduplicated; returns self."""
        seen = set()
        for content_id, size in decisions:
            if content_id in seen:
                continue
            seen.add(content_id)
            self.insert(content_id, size)
        return self

    def clear(self) -> None:
        self._entries.clear()
        self.used_bits = 0.0

    def to_dict(self) -> Dict[str, object]:
        return {"capacity_bits": self.capacity_bits, "used_bits": self.used_bits,
                "content_ids": list(self._entries)}


def apply_caching_decisions(cache: RsuCache, decisions: Iterable[Tuple[int, float]]) -> RsuCache:
    return cache.apply_caching_decisions(decisions)
