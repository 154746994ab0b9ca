"""Conventional OS path: VFS lookup, page cache, filesystem allocation, block layer.

Chunk requests from every simulated thread advance in lock-step, one step per
round, so flushes from different threads hit the allocator interleaved. Every
step yields one *batch*: the raw IOs the thread submits together and then waits
on. Batches share a provisional submit timestamp; the replay engine turns them
into a closed loop.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Iterator

from .allocator import AllocationError, AllocatorState, allocate_extents
from .blocklayer import RawIo, bio_split_merge
from .caches import DcacheModel, PageCacheModel
from .trace import SECTOR, IoEvent, IoTag, Op, Trace
from .workload import PAGE, ChunkRequest, OpKind

KiB = 1024
MiB = 1024 * KiB
PAGE_SECTORS = PAGE // SECTOR


class UnknownKeyError(KeyError):
    pass


@dataclass(frozen=True)
class FsProfile:
    name: str
    metadata_node_bytes: int
    allocation_groups: int
    delayed_alloc_window: int
    journal_write_bytes: int
    extent_max_bytes: int
    inode_bytes: int = 512
    dirent_bytes: int = 64
    band_bytes: int = 64 * MiB
    journal_bytes: int = 64 * MiB
    # PUT commits folded into one journal write
    journal_group: int = 1

    def __post_init__(self) -> None:
        if self.name not in ("ag-extent", "simple-extent"):
            raise ValueError(f"unknown filesystem profile {self.name!r}")
        if self.metadata_node_bytes not in (4 * KiB, 16 * KiB):
            raise ValueError("metadata_node_bytes must be 4 KiB or 16 KiB")
        if self.allocation_groups < 1:
            raise ValueError("allocation_groups must be >= 1")
        for f in ("delayed_alloc_window", "journal_write_bytes", "extent_max_bytes"):
            v = getattr(self, f)
            if v <= 0 or v % SECTOR:
                raise ValueError(f"{f} must be a positive multiple of {SECTOR}")
        if self.journal_group < 1:
            raise ValueError("journal_group must be >= 1")

    @property
    def banded(self) -> bool:
        """Metadata in per-AG bands (ag-extent) rather than inline with data."""
        return self.name == "ag-extent"

    @property
    def node_sectors(self) -> int:
        return self.metadata_node_bytes // SECTOR

    @classmethod
    def ag_extent(cls, **kw) -> "FsProfile":
        base = dict(
            name="ag-extent",
            metadata_node_bytes=16 * KiB,
            allocation_groups=4,
            delayed_alloc_window=4 * MiB,
            journal_write_bytes=16 * KiB,
            extent_max_bytes=8 * 1024 * MiB,
            inode_bytes=512,
        )
        base.update(kw)
        return cls(**base)

    @classmethod
    def simple_extent(cls, **kw) -> "FsProfile":
        base = dict(
            name="simple-extent",
            metadata_node_bytes=4 * KiB,
            allocation_groups=1,
            delayed_alloc_window=256 * KiB,
            journal_write_bytes=4 * KiB,
            extent_max_bytes=128 * MiB,
            inode_bytes=256,
        )
        base.update(kw)
        return cls(**base)


@dataclass(frozen=True)
class StackCosts:
    """Host-side layer costs in microseconds, plus block-layer geometry."""

    vfs_hit_us: float = 2.0
    vfs_miss_us: float = 10.0
    fs_us: float = 40.0
    # per IO already in flight when a batch is released (lock contention)
    fs_contention_us: float = 12.0
    block_us: float = 5.0
    block_queue_us: float = 2.0
    write_unit_bytes: int = 128 * KiB
    read_unit_bytes: int = 128 * KiB
    merge_window: int = 16
    max_bio_bytes: int = 256 * KiB

    @property
    def max_bio_sectors(self) -> int:
        return self.max_bio_bytes // SECTOR


@dataclass
class FileState:
    key: str
    ag: int
    dir_id: int
    dirent_node: int
    inode_lba: int
    om_lba: int
    pages: int = 0
    mapped_pages: int = 0


@dataclass
class Directory:
    nodes: list[int] = field(default_factory=list)
    entries: int = 0


class _Batcher:
    """Collects per-thread pending host costs and turns batches into events."""

    def __init__(self, costs: StackCosts, split: bool = True):
        self.costs = costs
        self.split = split
        self.events: list[IoEvent] = []
        self.raw_count = 0
        self.vfs: dict[int, float] = {}
        self.fs: dict[int, float] = {}
        self.ts: dict[int, float] = {}

    def charge(self, t: int, vfs: float = 0.0, fs: float = 0.0) -> None:
        self.vfs[t] = self.vfs.get(t, 0.0) + vfs
        self.fs[t] = self.fs.get(t, 0.0) + fs

    def submit(self, t: int, floor_ts: float, raws: list[RawIo]) -> None:
        if not raws:
            return
        ts = max(floor_ts, self.ts.get(t, -1.0) + 1.0)
        self.ts[t] = ts
        raws[0].vfs_us += self.vfs.pop(t, 0.0)
        raws[0].fs_us += self.fs.pop(t, 0.0)
        self.raw_count += len(raws)
        if not self.split:
            # device commands go out as issued, one event each
            self.events.extend(
                IoEvent(ts, r.op, r.lba, r.len, r.tag, t, r.vfs_us, r.fs_us, 0.0)
                for r in raws
            )
            return
        self.events.extend(
            bio_split_merge(
                raws,
                submit_ts=ts,
                block_us=self.costs.block_us,
                window=self.costs.merge_window,
                max_bio_sectors=self.costs.max_bio_sectors,
            )
        )

    def unattributed(self) -> float:
        return sum(self.vfs.values()) + sum(self.fs.values())


def run_threads(
    requests: Iterable[ChunkRequest], step_fn, batcher: _Batcher
) -> None:
    """Advance each thread's requests one step per round until all are done."""
    queues: dict[int, deque] = {}
    for req in requests:
        queues.setdefault(req.thread_id, deque()).append(req)
    active: dict[int, tuple[ChunkRequest, Iterator[list[RawIo]]]] = {}
    order = sorted(queues)
    while order:
        still = []
        for t in order:
            cur = active.get(t)
            if cur is None:
                req = queues[t].popleft()
                cur = (req, step_fn(t, req))
                active[t] = cur
            req, gen = cur
            try:
                raws = next(gen)
            except StopIteration:
                del active[t]
                if queues[t]:
                    still.append(t)
                continue
            batcher.submit(t, req.ts, raws)
            still.append(t)
        order = still


class OsStack:
    """Stateful OS storage stack for one OSD; ``translate`` may be called per phase."""

    def __init__(
        self,
        fs: FsProfile,
        dcache: DcacheModel,
        pcache: PageCacheModel,
        alloc: AllocatorState,
        costs: StackCosts | None = None,
    ):
        self.fs = fs
        self.costs = costs or StackCosts()
        self.dcache = dcache
        self.pcache = pcache
        self.alloc = alloc
        self.files: dict[str, FileState] = {}
        self.durable: set[str] = set()
        self.dirs: dict[int, Directory] = {}
        self.inode_slot: dict[int, tuple[int, int]] = {}  # ag -> (node lba, used)
        self.commits = 0
        self._spill: list[RawIo] = []
        self._spill_thread = 0
        pcache.writeback = self._evict_writeback

    @classmethod
    def fresh(
        cls,
        fs: FsProfile,
        capacity_sectors: int,
        dcache_entries: int,
        pagecache_pages: int,
        dirty_ratio: float = 0.2,
        costs: StackCosts | None = None,
    ) -> "OsStack":
        alloc = AllocatorState(
            capacity_sectors,
            fs.allocation_groups,
            band_sectors=fs.band_bytes // SECTOR if fs.banded else 0,
            journal_sectors=fs.journal_bytes // SECTOR,
            node_sectors=fs.node_sectors,
        )
        return cls(
            fs, DcacheModel(dcache_entries), PageCacheModel(pagecache_pages, dirty_ratio), alloc, costs
        )

    # -- metadata ---------------------------------------------------------------

    def _node_read(self, t: int, lba: int, tag: IoTag) -> list[RawIo]:
        """Read one metadata node through the page cache."""
        pkey = ("node", lba)
        if self.pcache.lookup(pkey, 0):
            return []
        for p in range(max(1, self.fs.metadata_node_bytes // PAGE)):
            self.pcache.insert(pkey, p)
        return [RawIo(Op.READ, lba, self.fs.node_sectors, tag, t)]

    def _dir_tail_node(self, dir_id: int, ag: int) -> int:
        d = self.dirs.setdefault(dir_id, Directory())
        per_node = self.fs.metadata_node_bytes // self.fs.dirent_bytes
        if d.entries >= len(d.nodes) * per_node:
            d.nodes.append(self.alloc.alloc_node(ag, self.fs.banded))
        return len(d.nodes) - 1

    def _alloc_inode(self, ag: int) -> int:
        if not self.fs.banded:
            # inode and xattr share a node placed inline with the data
            return self.alloc.alloc_node(ag, False)
        per_node = self.fs.metadata_node_bytes // self.fs.inode_bytes
        lba, used = self.inode_slot.get(ag, (None, per_node))
        if used >= per_node:
            lba, used = self.alloc.alloc_node(ag, True), 0
        self.inode_slot[ag] = (lba, used + 1)
        return lba

    def _create(self, key: str) -> FileState:
        if self.fs.banded:
            ag = self.alloc.pick_dir_ag()
            dir_id = ag
        else:
            ag = dir_id = 0
        node_idx = self._dir_tail_node(dir_id, ag)
        self.dirs[dir_id].entries += 1
        inode = self._alloc_inode(ag)
        # object metadata is an extended attribute; large attributes get their own node
        om = self.alloc.alloc_node(ag, True) if self.fs.banded else inode
        f = FileState(key, ag, dir_id, node_idx, inode, om)
        self.files[key] = f
        return f

    def _lookup(self, t: int, key: str, create: bool = False) -> tuple[FileState, list[RawIo]]:
        """Path walk. A dcache miss reads the directory node holding the entry."""
        f = self.files.get(key)
        if f is None:
            if not create:
                raise UnknownKeyError(f"no such object {key!r}")
            f = self._create(key)
        if self.dcache.lookup(f"{f.dir_id}/{key}"):
            self.batcher.charge(t, vfs=self.costs.vfs_hit_us)
            return f, []
        self.batcher.charge(t, vfs=self.costs.vfs_miss_us)
        node = self.dirs[f.dir_id].nodes[f.dirent_node]
        return f, self._node_read(t, node, IoTag.FSM)

    # -- data -------------------------------------------------------------------

    def _phys_runs(self, key: str, page0: int, npages: int) -> list[tuple[int, int, int]]:
        """Map logical pages [page0, page0+npages) to (logical page, lba, sectors) runs."""
        out = []
        want0, want1 = page0 * PAGE_SECTORS, (page0 + npages) * PAGE_SECTORS
        logical = 0
        for lba, length in self.alloc.extents.get(key, []):
            lo, hi = max(logical, want0), min(logical + length, want1)
            if lo < hi:
                out.append((lo // PAGE_SECTORS, lba + (lo - logical), hi - lo))
            logical += length
            if logical >= want1:
                break
        return out

    def _raw_ios(
        self, t: int, key: str, pages: list[int], op: Op, unit_bytes: int
    ) -> list[RawIo]:
        """Raw IOs for the given logical pages, cut at IO-unit and extent boundaries."""
        unit = max(1, unit_bytes // PAGE)
        raws: list[RawIo] = []
        i = 0
        while i < len(pages):
            j = i + 1
            while (
                j < len(pages)
                and pages[j] == pages[j - 1] + 1
                and pages[j] // unit == pages[i] // unit
            ):
                j += 1
            for _, lba, n in self._phys_runs(key, pages[i], j - i):
                raws.append(RawIo(op, lba, n, IoTag.OD, t))
            i = j
        return raws

    def _flush(self, t: int, key: str) -> list[RawIo]:
        f = self.files.get(key)
        pages = self.pcache.dirty_pages(key)
        if f is None or not pages:
            return []
        new = sum(1 for p in pages if p >= f.mapped_pages)
        fs_cost = 0.0
        if new:
            pieces = allocate_extents(self.alloc, key, new * PAGE, f.ag, self.fs)
            f.mapped_pages += new
            fs_cost = self.costs.fs_us * (1 + len(pieces))
        raws = self._raw_ios(t, key, pages, Op.WRITE, self.costs.write_unit_bytes)
        self.pcache.clean(key)
        if raws:
            raws[0].fs_us += fs_cost
        return raws

    def _evict_writeback(self, key) -> None:
        if isinstance(key, tuple):  # metadata nodes are never dirty
            return
        self._spill.extend(self._flush(self._spill_thread, key))

    def _drain_spill(self) -> list[RawIo]:
        raws, self._spill = self._spill, []
        return raws

    def _balance_dirty(self, t: int) -> list[RawIo]:
        raws = []
        while self.pcache.over_dirty_threshold():
            victims = self.pcache.dirty_files()
            if not victims:
                break
            raws.extend(self._flush(t, victims[0]))
        return raws

    # -- operations -------------------------------------------------------------

    def _put(self, t: int, req: ChunkRequest) -> Iterator[list[RawIo]]:
        old = self.files.get(req.key)
        self.durable.discard(req.key)
        if old is not None:
            self.pcache.invalidate(req.key)
            self.alloc.free_file(req.key)
            old.pages = old.mapped_pages = 0
        f, raws = self._lookup(t, req.key, create=True)
        yield raws
        self.batcher.charge(t, fs=self.costs.fs_us)
        yield self._node_read(t, f.om_lba, IoTag.OM)

        npages = req.chunk_bytes // PAGE
        unit = max(1, self.costs.write_unit_bytes // PAGE)
        window = self.fs.delayed_alloc_window // PAGE
        for p0 in range(0, npages, unit):
            self._spill_thread = t
            self.batcher.charge(t, vfs=self.costs.vfs_hit_us)
            for p in range(p0, min(p0 + unit, npages)):
                self.pcache.insert(f.key, p, dirty=True)
            f.pages = max(f.pages, min(p0 + unit, npages))
            raws = self._drain_spill()
            if len(self.pcache.dirty_pages(f.key)) >= window:
                raws += self._flush(t, f.key)
            raws += self._balance_dirty(t)
            yield raws

        # fsync: remaining data plus the object metadata node
        raws = self._flush(t, f.key)
        raws.append(RawIo(Op.WRITE, f.om_lba, self.fs.node_sectors, IoTag.OM, t))
        yield raws
        self.durable.add(f.key)
        self.commits += 1
        if self.commits % self.fs.journal_group == 0:
            n = self.fs.journal_write_bytes // SECTOR
            self.batcher.charge(t, fs=self.costs.fs_us)
            yield [RawIo(Op.WRITE, self.alloc.journal_slot(n), n, IoTag.FSM, t)]

    def _get(self, t: int, req: ChunkRequest) -> Iterator[list[RawIo]]:
        # a PUT still in flight on another thread has to land first
        while req.key not in self.durable:
            yield []
        f, raws = self._lookup(t, req.key)
        yield raws
        self.batcher.charge(t, fs=self.costs.fs_us)
        yield self._node_read(t, f.om_lba, IoTag.OM)
        npages = min(f.pages, req.chunk_bytes // PAGE) if req.chunk_bytes else f.pages
        missing = [p for p in range(npages) if not self.pcache.lookup(f.key, p)]
        raws = self._raw_ios(t, f.key, missing, Op.READ, self.costs.read_unit_bytes)
        self._spill_thread = t
        for p in missing:
            self.pcache.insert(f.key, p)
        self.batcher.charge(t, fs=self.costs.fs_us)
        yield raws + self._drain_spill()

    def _list(self, t: int, req: ChunkRequest) -> Iterator[list[RawIo]]:
        for key in sorted(self.files):
            f, raws = self._lookup(t, key)
            yield raws
            self.batcher.charge(t, fs=self.costs.fs_us)
            yield self._node_read(t, f.inode_lba, IoTag.FSM)

    def _step(self, t: int, req: ChunkRequest) -> Iterator[list[RawIo]]:
        if req.kind is OpKind.PUT:
            return self._put(t, req)
        if req.kind is OpKind.GET:
            return self._get(t, req)
        return self._list(t, req)

    def translate(self, requests: Iterable[ChunkRequest], meta: dict | None = None) -> Trace:
        self.batcher = _Batcher(self.costs)
        requests = list(requests)
        # reject unknown GET keys before simulating anything
        known = set(self.files)
        for r in requests:
            if r.kind is OpKind.PUT:
                known.add(r.key)
            elif r.kind is OpKind.GET and r.key not in known:
                raise UnknownKeyError(f"GET of unknown key {r.key!r}")
        run_threads(requests, self._step, self.batcher)
        self.last_raw_count = self.batcher.raw_count
        m = {
            "stack": "os-fs",
            "fs": self.fs.name,
            "timing": "closed",
            "fs_contention_us": f"{self.costs.fs_contention_us:g}",
            "block_queue_us": f"{self.costs.block_queue_us:g}",
            "raw_ios": str(self.batcher.raw_count),
            "unattributed_host_us": f"{self.batcher.unattributed():.3f}",
        }
        m.update(meta or {})
        return Trace(self.batcher.events, self.alloc.capacity, m)

    def sync(self) -> Trace:
        """Write back every dirty file (thread 0); returns the resulting IO."""
        self.batcher = _Batcher(self.costs)
        raws: list[RawIo] = []
        for key in self.pcache.dirty_files():
            raws.extend(self._flush(0, key))
        self.batcher.submit(0, 0.0, raws)
        return Trace(self.batcher.events, self.alloc.capacity, {"stack": "os-fs"})

    def drop_caches(self) -> None:
        self.sync()
        self.dcache.drop()
        self.pcache.drop_clean()

    def counters(self) -> dict[str, int]:
        return {**self.dcache.counters(), **self.pcache.counters()}

    # -- sequential direct-IO writer (device utilisation study) -------------------

    def sequential_writes(
        self, threads: int, io_bytes: int, ios_per_thread: int, commit_every: int = 8
    ) -> Trace:
        """Each thread appends ``io_bytes`` direct writes to its own file.

        Every write allocates (extent-map touch); every ``commit_every`` writes a
        journal record follows synchronously.
        """
        self.batcher = _Batcher(self.costs)
        reqs = [
            ChunkRequest(OpKind.PUT, f"seq-{t:04d}", io_bytes, t)
            for t in range(threads)
            for _ in range(1)
        ]
        for r in reqs:
            self._create(r.key)

        def steps(t: int, req: ChunkRequest) -> Iterator[list[RawIo]]:
            f = self.files[req.key]
            for i in range(ios_per_thread):
                pieces = allocate_extents(self.alloc, f.key, io_bytes, f.ag, self.fs)
                self.batcher.charge(
                    t, vfs=self.costs.vfs_hit_us, fs=self.costs.fs_us * (1 + len(pieces))
                )
                yield [RawIo(Op.WRITE, lba, n, IoTag.OD, t) for lba, n in pieces]
                if (i + 1) % commit_every == 0:
                    n = self.fs.journal_write_bytes // SECTOR
                    yield [RawIo(Op.WRITE, self.alloc.journal_slot(n), n, IoTag.FSM, t)]

        run_threads(reqs, steps, self.batcher)
        return Trace(
            self.batcher.events,
            self.alloc.capacity,
            {
                "stack": "os-fs",
                "fs": self.fs.name,
                "timing": "closed",
                "fs_contention_us": f"{self.costs.fs_contention_us:g}",
                "block_queue_us": f"{self.costs.block_queue_us:g}",
            },
        )


def translate_os(
    ops: Iterable[ChunkRequest],
    fs: FsProfile,
    dcache: DcacheModel,
    pcache: PageCacheModel,
    alloc: AllocatorState,
    costs: StackCosts | None = None,
) -> Trace:
    """One-shot translation of chunk requests through a fresh :class:`OsStack`."""
    return OsStack(fs, dcache, pcache, alloc, costs).translate(ops)


class RawStack:
    """Block device used directly: chunks laid out as a sequential log, no vfs/fs."""

    def __init__(self, capacity_sectors: int, costs: StackCosts | None = None):
        self.capacity = capacity_sectors
        self.costs = costs or StackCosts()
        self.cursor = 0
        self.where: dict[str, tuple[int, int]] = {}

    def _meta(self) -> dict[str, str]:
        return {
            "stack": "raw-block",
            "timing": "closed",
            "block_queue_us": f"{self.costs.block_queue_us:g}",
        }

    def _reserve(self, sectors: int) -> int:
        if self.cursor + sectors > self.capacity:
            raise AllocationError(f"raw device full: {sectors} sectors requested")
        lba = self.cursor
        self.cursor += sectors
        return lba

    @staticmethod
    def _chunk_ios(op: Op, lba: int, n: int, unit: int, t: int) -> list[RawIo]:
        return [RawIo(op, lba + s, min(unit, n - s), IoTag.OD, t) for s in range(0, n, unit)]

    def translate(self, requests: Iterable[ChunkRequest], meta: dict | None = None) -> Trace:
        requests = list(requests)
        known = set(self.where)
        for r in requests:
            if r.kind is OpKind.PUT:
                known.add(r.key)
            elif r.kind is OpKind.GET and r.key not in known:
                raise UnknownKeyError(f"GET of unknown key {r.key!r}")
        batcher = _Batcher(self.costs)
        unit = self.costs.write_unit_bytes // SECTOR

        def steps(t: int, req: ChunkRequest) -> Iterator[list[RawIo]]:
            if req.kind is OpKind.LIST:
                return
            if req.kind is OpKind.PUT:
                n = req.chunk_bytes // SECTOR
                lba = self._reserve(n)
                yield self._chunk_ios(Op.WRITE, lba, n, unit, t)
                self.where[req.key] = (lba, n)
                return
            # a PUT still in flight on another thread has to land first
            while req.key not in self.where:
                yield []
            lba, n = self.where[req.key]
            yield self._chunk_ios(Op.READ, lba, n, unit, t)

        run_threads(requests, steps, batcher)
        self.last_raw_count = batcher.raw_count
        return Trace(batcher.events, self.capacity, {**self._meta(), **(meta or {})})

    def sequential_writes(self, threads: int, io_bytes: int, ios_per_thread: int) -> Trace:
        batcher = _Batcher(self.costs)
        n = io_bytes // SECTOR
        region = self.capacity // threads
        if region < n * ios_per_thread:
            raise AllocationError("device too small for the sequential write study")
        reqs = [ChunkRequest(OpKind.PUT, f"seq-{t}", io_bytes, t) for t in range(threads)]

        def steps(t: int, req: ChunkRequest) -> Iterator[list[RawIo]]:
            for i in range(ios_per_thread):
                yield [RawIo(Op.WRITE, t * region + i * n, n, IoTag.OD, t)]

        run_threads(reqs, steps, batcher)
        return Trace(batcher.events, self.capacity, self._meta())
