"""LRU models of the VFS dentry cache and the OS page cache."""

from __future__ import annotations

from collections import OrderedDict
from typing import Callable, Hashable


class DcacheModel:
    """Dentry cache: LRU set of path names with hit/miss counters."""

    def __init__(self, capacity_entries: int):
        if capacity_entries < 0:
            raise ValueError("capacity_entries must be >= 0")
        self.capacity = capacity_entries
        self._lru: OrderedDict[str, bool] = OrderedDict()
        self.hits = 0
        self.misses = 0

    def __len__(self) -> int:
        return len(self._lru)

    def __contains__(self, path: str) -> bool:
        return path in self._lru

    def lookup(self, path: str) -> bool:
        """Look ``path`` up, inserting it on a miss. Returns True on a hit."""
        if path in self._lru:
            self._lru.move_to_end(path)
            self.hits += 1
            return True
        self.misses += 1
        if self.capacity:
            self._lru[path] = True
            if len(self._lru) > self.capacity:
                self._lru.popitem(last=False)
        return False

    def drop(self) -> None:
        self._lru.clear()

    def counters(self) -> dict[str, int]:
        return {"dcache_hits": self.hits, "dcache_misses": self.misses}


PageKey = tuple[Hashable, int]


class PageCacheModel:
    """4 KiB page cache keyed by (file, page index).

    Pages are clean or dirty. Evicting a dirty page first asks the owner to write
    the whole file back through ``writeback`` (which must call :meth:`clean`).
    """

    def __init__(self, capacity_pages: int, dirty_ratio_threshold: float = 0.2):
        if capacity_pages < 1:
            raise ValueError("capacity_pages must be >= 1")
        if not 0.0 < dirty_ratio_threshold <= 1.0:
            raise ValueError("dirty_ratio_threshold must lie in (0, 1]")
        self.capacity = capacity_pages
        self.dirty_ratio_threshold = dirty_ratio_threshold
        self._lru: OrderedDict[PageKey, bool] = OrderedDict()
        self._dirty: dict[Hashable, set[int]] = {}
        self.n_dirty = 0
        self.writeback: Callable[[Hashable], None] | None = None
        self.hits = 0
        self.misses = 0
        self.evictions = 0
        self.writebacks = 0

    def __len__(self) -> int:
        return len(self._lru)

    def __contains__(self, key: PageKey) -> bool:
        return key in self._lru

    @property
    def dirty_fraction(self) -> float:
        return self.n_dirty / self.capacity

    def over_dirty_threshold(self) -> bool:
        return self.n_dirty > self.dirty_ratio_threshold * self.capacity

    def lookup(self, file: Hashable, page: int) -> bool:
        key = (file, page)
        if key in self._lru:
            self._lru.move_to_end(key)
            self.hits += 1
            return True
        self.misses += 1
        return False

    def insert(self, file: Hashable, page: int, dirty: bool = False) -> None:
        key = (file, page)
        if key in self._lru:
            self._lru.move_to_end(key)
            if dirty and not self._lru[key]:
                self._set_dirty(key)
            return
        self._lru[key] = False
        if dirty:
            self._set_dirty(key)
        self._shrink()

    def _set_dirty(self, key: PageKey) -> None:
        self._lru[key] = True
        self._dirty.setdefault(key[0], set()).add(key[1])
        self.n_dirty += 1

    def _shrink(self) -> None:
        while len(self._lru) > self.capacity:
            key, dirty = next(iter(self._lru.items()))
            if dirty:
                if self.writeback is None:
                    raise RuntimeError("dirty page eviction without a writeback hook")
                self.writebacks += 1
                self.writeback(key[0])
                if self._lru.get(key):
                    raise RuntimeError("writeback hook left the page dirty")
            self._lru.pop(key)
            self.evictions += 1

    def dirty_pages(self, file: Hashable) -> list[int]:
        return sorted(self._dirty.get(file, ()))

    def dirty_files(self) -> list[Hashable]:
        """Files with dirty pages, oldest dirty page first."""
        seen: dict[Hashable, None] = {}
        for (f, _), dirty in self._lru.items():
            if dirty and f not in seen:
                seen[f] = None
        return list(seen)

    def clean(self, file: Hashable, pages: list[int] | None = None) -> None:
        dirty = self._dirty.get(file)
        if not dirty:
            return
        for p in list(dirty) if pages is None else pages:
            if p in dirty:
                dirty.discard(p)
                self._lru[(file, p)] = False
                self.n_dirty -= 1
        if not dirty:
            del self._dirty[file]

    def invalidate(self, file: Hashable) -> None:
        for key in [k for k in self._lru if k[0] == file]:
            if self._lru.pop(key):
                self.n_dirty -= 1
        self._dirty.pop(file, None)

    def drop_clean(self) -> None:
        for key in [k for k, d in self._lru.items() if not d]:
            del self._lru[key]

    def counters(self) -> dict[str, int]:
        return {
            "pagecache_hits": self.hits,
            "pagecache_misses": self.misses,
            "pagecache_evictions": self.evictions,
            "pagecache_writebacks": self.writebacks,
        }
