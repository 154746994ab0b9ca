"""Object-Drive path: key-value commands straight to the device, no filesystem.

The drive hashes each key to an object id (OID). The OID picks a start bucket on
the LBA space and the drive allocates first-fit from there. Values larger than the
drive's cap are split into several commands; object metadata travels as one
small KV pair per object. Enumeration walks an in-device key index.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Iterable, Iterator

from .allocator import AllocationError, FreeMap
from .blocklayer import RawIo
from .caches import PageCacheModel
from .osstack import StackCosts, UnknownKeyError, _Batcher, run_threads
from .trace import SECTOR, IoTag, Op, Trace
from .workload import PAGE, ChunkRequest, OpKind

KiB = 1024
MiB = 1024 * KiB


@dataclass(frozen=True)
class DriveProfile:
    value_cap_bytes: int = 2 * MiB
    hash_levels: int = 2
    kv_lib_cost: float = 4.0
    indevice_index_cost: float = 6.0
    iterator_batch: int = 256
    bucket_count: int = 1 << 16
    # size of the per-object metadata KV pair
    om_value_bytes: int = 4 * KiB
    # one key plus descriptor as returned by the iterator
    descriptor_bytes: int = 64
    # key index reserved at the front of the device
    index_bytes: int = 64 * MiB
    # host DRAM the object layer keeps in front of the drive (0 disables it)
    host_cache_bytes: int = 36 * MiB

    def __post_init__(self) -> None:
        if self.value_cap_bytes <= 0 or self.value_cap_bytes % SECTOR:
            raise ValueError("value_cap_bytes must be a positive multiple of 512")
        if self.iterator_batch < 1:
            raise ValueError("iterator_batch must be >= 1")
        if self.hash_levels < 1 or self.bucket_count < 1:
            raise ValueError("hash_levels and bucket_count must be >= 1")
        if self.om_value_bytes <= 0 or self.om_value_bytes % SECTOR:
            raise ValueError("om_value_bytes must be a positive multiple of 512")


def _oid(key: str, level: int = 0) -> int:
    digest = hashlib.blake2b(f"{level}:{key}".encode(), digest_size=8).digest()
    return int.from_bytes(digest, "big")


@dataclass
class OidMap:
    """key -> OID -> device runs, with the drive's free map."""

    capacity_sectors: int
    profile: DriveProfile = field(default_factory=DriveProfile)
    oids: dict[str, int] = field(default_factory=dict)
    runs: dict[int, list[tuple[int, int]]] = field(default_factory=dict)
    om: dict[int, int] = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.index_sectors = self.profile.index_bytes // SECTOR
        if self.index_sectors >= self.capacity_sectors:
            raise ValueError("device too small for the key index")
        self.free = FreeMap()
        self.free.add(self.index_sectors, self.capacity_sectors)
        self.index_cursor = 0
        self._taken = set(self.oids.values())

    def oid_of(self, key: str) -> int:
        """Multi-level hash: the first level that does not collide with another key wins."""
        if key in self.oids:
            return self.oids[key]
        for level in range(self.profile.hash_levels):
            oid = _oid(key, level)
            if oid not in self._taken:
                self._taken.add(oid)
                self.oids[key] = oid
                return oid
        raise AllocationError(f"OID collision for {key!r} at every hash level")

    def bucket_lba(self, oid: int) -> int:
        span = self.capacity_sectors - self.index_sectors
        bucket = oid % self.profile.bucket_count
        return self.index_sectors + span * bucket // self.profile.bucket_count

    def _alloc(self, sectors: int, hint: int) -> int:
        lba = self.free.find(sectors, hint)
        if lba is None:
            raise AllocationError(
                f"object drive out of space: {sectors} sectors requested, "
                f"largest free run {self.free.largest()}"
            )
        self.free.take(lba, sectors)
        return lba

    def om_slot(self, oid: int) -> int:
        """Index-table slot holding the object's metadata pair (second-level hash)."""
        om_n = self.profile.om_value_bytes // SECTOR
        slots = self.index_sectors // om_n
        return (_oid(str(oid), self.profile.hash_levels) % slots) * om_n

    def place(self, key: str, chunk_sectors: int) -> tuple[int, list[tuple[int, int]]]:
        """Allocate the value commands of one object; returns (OM slot, runs).

        Each part is contiguous. The whole value goes into one run found first-fit
        from the OID's bucket when possible; otherwise each further part is placed
        first-fit right after the previous one.
        """
        oid = self.oid_of(key)
        self.delete(key, forget=False)
        cap = self.profile.value_cap_bytes // SECTOR
        sizes = [min(cap, chunk_sectors - s) for s in range(0, chunk_sectors, cap)]
        hint = self.bucket_lba(oid)
        runs: list[tuple[int, int]] = []
        if sizes and self.free.find(chunk_sectors, hint) is not None:
            pos = self._alloc(chunk_sectors, hint)
            for n in sizes:
                runs.append((pos, n))
                pos += n
        else:
            pos = hint
            for n in sizes:
                lba = self._alloc(n, pos)
                runs.append((lba, n))
                pos = lba + n
        self.om[oid] = self.om_slot(oid)
        self.runs[oid] = runs
        return self.om[oid], runs

    def delete(self, key: str, forget: bool = True) -> None:
        oid = self.oids.get(key)
        if oid is None or oid not in self.om:
            return
        del self.om[oid]
        for lba, n in self.runs.pop(oid):
            self.free.add(lba, lba + n)
        if forget:
            self._taken.discard(self.oids.pop(key))

    def index_slot(self, sectors: int) -> int:
        """Next stretch of the key index for an iterator fetch, wrapping at its end."""
        if self.index_cursor + sectors > self.index_sectors:
            self.index_cursor = 0
        lba = self.index_cursor
        self.index_cursor += sectors
        return lba

    def check(self) -> None:
        spans = list(self.free.runs())
        for runs in self.runs.values():
            spans.extend((s, s + n) for s, n in runs)
        spans.sort()
        for (a0, a1), (b0, b1) in zip(spans, spans[1:]):
            assert a1 <= b0, f"overlap between [{a0},{a1}) and [{b0},{b1})"


class ObjectDrive:
    """Stateful drive for one OSD; ``translate`` may be called once per phase.

    ``cache`` is the host's DRAM cache in front of the drive (values and
    metadata pairs, write-through); None disables it.
    """

    def __init__(self, drive: DriveProfile, oid: OidMap, cache: PageCacheModel | None = None):
        self.drive = drive
        self.oid = oid
        self.cache = cache
        self.keys: set[str] = {k for k, o in oid.oids.items() if o in oid.om}

    @classmethod
    def fresh(
        cls, drive: DriveProfile, capacity_sectors: int, cache_pages: int | None = None
    ) -> "ObjectDrive":
        cache = PageCacheModel(cache_pages) if cache_pages else None
        return cls(drive, OidMap(capacity_sectors, drive), cache)

    def drop_caches(self) -> None:
        if self.cache is not None:
            self.cache.drop_clean()

    def counters(self) -> dict[str, int]:
        return self.cache.counters() if self.cache is not None else {}

    def _cmd(self, op: Op, lba: int, n: int, tag: IoTag, t: int) -> RawIo:
        return RawIo(op, lba, n, tag, t, self.drive.kv_lib_cost, self.drive.indevice_index_cost)

    def _cached(self, key, first: int, npages: int) -> bool:
        if self.cache is None:
            return False
        return all([self.cache.lookup(key, p) for p in range(first, first + npages)])

    def _fill(self, key, first: int, npages: int) -> None:
        if self.cache is not None:
            for p in range(first, first + npages):
                self.cache.insert(key, p)

    def _step(self, t: int, req: ChunkRequest) -> Iterator[list[RawIo]]:
        om_n = self.drive.om_value_bytes // SECTOR
        om_key = ("om", req.key)
        if req.kind is OpKind.PUT:
            slot, runs = self.oid.place(req.key, req.chunk_bytes // SECTOR)
            self.keys.add(req.key)
            cmds = [self._cmd(Op.WRITE, slot, om_n, IoTag.OM, t)]
            cmds += [self._cmd(Op.WRITE, lba, n, IoTag.OD, t) for lba, n in runs]
            if self.cache is not None:
                self.cache.invalidate(req.key)
            self._fill(om_key, 0, 1)
            self._fill(req.key, 0, req.chunk_bytes // PAGE)
            yield cmds
        elif req.kind is OpKind.GET:
            # a PUT still in flight on another thread has to land first
            while req.key not in self.keys:
                yield []
            oid = self.oid.oids[req.key]
            # the metadata pair is fetched first, as the object layer needs it to read the value
            if self._cached(om_key, 0, 1):
                self.batcher.charge(t, vfs=self.drive.kv_lib_cost)
            else:
                self._fill(om_key, 0, 1)
                yield [self._cmd(Op.READ, self.oid.om[oid], om_n, IoTag.OM, t)]
            cmds = []
            page = 0
            for lba, n in self.oid.runs[oid]:
                npages = n * SECTOR // PAGE
                if not self._cached(req.key, page, npages):
                    cmds.append(self._cmd(Op.READ, lba, n, IoTag.OD, t))
                    self._fill(req.key, page, npages)
                page += npages
            if not cmds:
                self.batcher.charge(t, vfs=self.drive.kv_lib_cost)
            yield cmds
        else:
            count = req.key_count or len(self.keys)
            if not self.keys or count > len(self.keys):
                raise UnknownKeyError("LIST over keys the drive does not hold")
            batch = self.drive.iterator_batch
            n = -(-batch * self.drive.descriptor_bytes // SECTOR)
            for _ in range(0, count, batch):
                yield [self._cmd(Op.READ, self.oid.index_slot(n), n, IoTag.OM, t)]

    def translate(self, requests: Iterable[ChunkRequest], meta: dict | None = None) -> Trace:
        requests = list(requests)
        known = set(self.keys)
        for r in requests:
            if r.kind is OpKind.PUT:
                known.add(r.key)
            elif r.kind is OpKind.GET and r.key not in known:
                raise UnknownKeyError(f"GET of unknown key {r.key!r}")
        batcher = self.batcher = _Batcher(StackCosts(), split=False)
        run_threads(requests, self._step, batcher)
        self.last_raw_count = batcher.raw_count
        m = {
            "stack": "object-drive",
            "timing": "closed",
            "fs_contention_us": "0",
            "block_queue_us": "0",
            "raw_ios": str(batcher.raw_count),
            "unattributed_host_us": f"{batcher.unattributed():.3f}",
        }
        m.update(meta or {})
        return Trace(batcher.events, self.oid.capacity_sectors, m)


def translate_od(ops: Iterable[ChunkRequest], drive: DriveProfile, oid: OidMap) -> Trace:
    """One-shot translation through an :class:`ObjectDrive` over ``oid``."""
    return ObjectDrive(drive, oid).translate(ops)
