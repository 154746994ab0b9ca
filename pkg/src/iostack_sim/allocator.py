"""Extent allocator with allocation groups, metadata bands and a journal region.

Free space is kept per allocation group (AG) as sorted, disjoint half-open
sector runs. Files grow by appending to their last extent when the space right
after it is still free; otherwise the AG's next-fit cursor decides. Two files
flushing alternately into one AG therefore interleave, which is how the model
ages.
"""

from __future__ import annotations

import bisect
from dataclasses import dataclass, field
from typing import TYPE_CHECKING

from .trace import SECTOR

if TYPE_CHECKING:
    from .osstack import FsProfile


class AllocationError(RuntimeError):
    def __init__(self, message: str, ag: int | None = None):
        super().__init__(message)
        self.ag = ag


@dataclass
class FreeMap:
    """Sorted disjoint free runs [start, end) inside one region."""

    starts: list[int] = field(default_factory=list)
    ends: list[int] = field(default_factory=list)

    def add(self, start: int, end: int) -> None:
        if start >= end:
            return
        i = bisect.bisect_left(self.starts, start)
        if i > 0 and self.ends[i - 1] > start:
            raise AllocationError(f"double free of [{start}, {end})")
        if i < len(self.starts) and self.starts[i] < end:
            raise AllocationError(f"double free of [{start}, {end})")
        # coalesce with neighbours
        if i > 0 and self.ends[i - 1] == start:
            i -= 1
            start = self.starts[i]
            del self.starts[i], self.ends[i]
        if i < len(self.starts) and self.starts[i] == end:
            end = self.ends[i]
            del self.starts[i], self.ends[i]
        self.starts.insert(i, start)
        self.ends.insert(i, end)

    def take(self, start: int, length: int) -> None:
        """Remove [start, start+length), which must lie inside one free run."""
        i = bisect.bisect_right(self.starts, start) - 1
        if i < 0 or self.ends[i] < start + length:
            raise AllocationError(f"range [{start}, {start + length}) is not free")
        s, e = self.starts[i], self.ends[i]
        del self.starts[i], self.ends[i]
        if start + length < e:
            self.starts.insert(i, start + length)
            self.ends.insert(i, e)
        if s < start:
            self.starts.insert(i, s)
            self.ends.insert(i, start)

    def free_from(self, pos: int) -> int:
        """Free sectors from ``pos`` to the end of the run containing it (0 if allocated)."""
        i = bisect.bisect_right(self.starts, pos) - 1
        if i >= 0 and self.ends[i] > pos:
            return self.ends[i] - pos
        return 0

    def find(self, length: int, cursor: int) -> int | None:
        """Next-fit: start of the first run at/after ``cursor`` holding ``length``, wrapping."""
        i = bisect.bisect_right(self.starts, cursor) - 1
        n = len(self.starts)
        if i >= 0 and self.ends[i] - max(cursor, self.starts[i]) >= length:
            return max(cursor, self.starts[i])
        for j in list(range(i + 1, n)) + list(range(0, i + 1)):
            if self.ends[j] - self.starts[j] >= length:
                return self.starts[j]
        return None

    def runs(self) -> list[tuple[int, int]]:
        return list(zip(self.starts, self.ends))

    @property
    def free(self) -> int:
        return sum(e - s for s, e in zip(self.starts, self.ends))

    def largest(self) -> int:
        return max((e - s for s, e in zip(self.starts, self.ends)), default=0)


class AllocatorState:
    """Free-space maps per AG, per-file extent lists and metadata placement."""

    def __init__(
        self,
        capacity_sectors: int,
        allocation_groups: int = 1,
        band_sectors: int = 0,
        journal_sectors: int = 0,
        node_sectors: int = 8,
    ):
        if allocation_groups < 1:
            raise ValueError("allocation_groups must be >= 1")
        self.capacity = capacity_sectors
        self.ag_count = allocation_groups
        self.ag_size = capacity_sectors // allocation_groups
        self.node_sectors = node_sectors
        self.free: list[FreeMap] = []
        self.cursor: list[int] = []
        self.band: list[tuple[int, int]] = []
        self.band_cursor: list[int] = []
        self.extents: dict[str, list[tuple[int, int]]] = {}
        self.next_dir_ag = 0
        # journal lives at the front of the middle AG, after its band
        jag = allocation_groups // 2
        for ag in range(allocation_groups):
            start = ag * self.ag_size
            end = capacity_sectors if ag == allocation_groups - 1 else start + self.ag_size
            band_end = start + band_sectors
            self.band.append((start, band_end))
            self.band_cursor.append(start)
            data_start = band_end
            if ag == jag:
                self.journal = (band_end, band_end + journal_sectors)
                data_start = band_end + journal_sectors
            if data_start >= end:
                raise ValueError("allocation group too small for its band and journal")
            fm = FreeMap()
            fm.add(data_start, end)
            self.free.append(fm)
            self.cursor.append(data_start)
        self.journal_cursor = self.journal[0]

    def ag_of(self, lba: int) -> int:
        return min(lba // self.ag_size, self.ag_count - 1)

    @property
    def free_sectors(self) -> int:
        return sum(fm.free for fm in self.free)

    def pick_dir_ag(self) -> int:
        """Round-robin over AGs, skipping groups with less free space than average."""
        mean = self.free_sectors / self.ag_count
        for _ in range(self.ag_count):
            ag = self.next_dir_ag
            self.next_dir_ag = (self.next_dir_ag + 1) % self.ag_count
            if self.free[ag].free >= 0.5 * mean:
                return ag
        return self.next_dir_ag

    def _take(self, ag: int, start: int, length: int) -> None:
        self.free[ag].take(start, length)
        self.cursor[ag] = start + length

    def alloc_node(self, ag: int, in_band: bool) -> int:
        """One metadata node: from the AG's band when requested and available, else inline."""
        n = self.node_sectors
        if in_band:
            b0, b1 = self.band[ag]
            if self.band_cursor[ag] + n <= b1:
                lba = self.band_cursor[ag]
                self.band_cursor[ag] += n
                return lba
        for k in range(self.ag_count):
            g = (ag + k) % self.ag_count
            lba = self.free[g].find(n, self.cursor[g])
            if lba is not None:
                self._take(g, lba, n)
                return lba
        raise AllocationError(f"no space for a metadata node (AG {ag})", ag)

    def journal_slot(self, sectors: int) -> int:
        j0, j1 = self.journal
        if sectors > j1 - j0:
            raise AllocationError("journal record larger than the journal")
        if self.journal_cursor + sectors > j1:
            self.journal_cursor = j0
        lba = self.journal_cursor
        self.journal_cursor += sectors
        return lba

    def free_file(self, file: str) -> None:
        for lba, length in self.extents.pop(file, []):
            self.free[self.ag_of(lba)].add(lba, lba + length)

    def check(self) -> None:
        """Assert free runs and extents are sorted, disjoint and non-overlapping."""
        spans = []
        for ag, fm in enumerate(self.free):
            prev_end = -1
            for s, e in fm.runs():
                assert s < e and s >= prev_end, f"AG {ag} free runs unsorted or overlapping"
                prev_end = e
                spans.append((s, e))
        for exts in self.extents.values():
            spans.extend((s, s + n) for s, n in exts)
        spans.sort()
        for (a0, a1), (b0, b1) in zip(spans, spans[1:]):
            assert a1 <= b0, f"overlap between [{a0},{a1}) and [{b0},{b1})"


def allocate_extents(
    alloc: AllocatorState, file: str, nbytes: int, ag_hint: int, fs: "FsProfile"
) -> list[tuple[int, int]]:
    """Allocate ``nbytes`` for ``file``; returns the new (lba, len) pieces in sectors.

    Appends to the file's last extent when the following space is free, else
    takes a next-fit run from the hinted AG, then from the other AGs in
    round-robin order, and finally gathers whatever runs remain.
    """
    if nbytes <= 0:
        raise ValueError("allocation size must be positive")
    need = -(-nbytes // SECTOR)
    if need > alloc.free_sectors:
        raise AllocationError(
            f"out of space: {need} sectors requested, {alloc.free_sectors} free "
            f"(AG {ag_hint})",
            ag_hint,
        )
    emax = max(1, fs.extent_max_bytes // SECTOR)
    exts = alloc.extents.setdefault(file, [])
    pieces: list[tuple[int, int]] = []

    def record(lba: int, length: int) -> None:
        pieces.append((lba, length))
        if exts and exts[-1][0] + exts[-1][1] == lba and exts[-1][1] + length <= emax:
            exts[-1] = (exts[-1][0], exts[-1][1] + length)
        else:
            while length > emax:
                exts.append((lba, emax))
                lba, length = lba + emax, length - emax
            exts.append((lba, length))

    # 1. contiguous append
    if exts:
        tail = exts[-1][0] + exts[-1][1]
        ag = alloc.ag_of(tail)
        if tail < alloc.capacity:
            avail = alloc.free[ag].free_from(tail)
            take = min(avail, need)
            if take:
                alloc._take(ag, tail, take)
                record(tail, take)
                need -= take
    if not need:
        return pieces
    # 2./3. one run big enough, hinted AG first
    order = [(ag_hint + k) % alloc.ag_count for k in range(alloc.ag_count)]
    for ag in order:
        lba = alloc.free[ag].find(need, alloc.cursor[ag])
        if lba is not None:
            alloc._take(ag, lba, need)
            record(lba, need)
            return pieces
    # 4. gather fragments
    for ag in order:
        fm = alloc.free[ag]
        while need and fm.starts:
            lba = fm.find(1, alloc.cursor[ag])
            take = min(fm.free_from(lba), need)
            alloc._take(ag, lba, take)
            record(lba, take)
            need -= take
        if not need:
            break
    return pieces
