"""Device-level trace model and its two on-disk formats.

The native format is line-oriented CSV with a single ``#``-prefixed header::

    # iostack-trace v1 capacity_sectors=<n> [key=value ...]
    submit_ts_us,op,lba_sector,len_sectors,tag,thread_id,vfs_us,fs_us,block_us,device_us,complete_ts_us

(the second line above is the column order, it is *not* written to the file).
All times are microseconds, all addresses and lengths are 512-byte sectors.
"""

from __future__ import annotations

import enum
import os
from collections import defaultdict, deque
from dataclasses import dataclass, field
from typing import Iterable

SECTOR = 512
FORMAT_VERSION = "v1"
MAGIC = "iostack-trace"
LAYERS = ("vfs", "fs", "block", "device")
COLUMNS = (
    "submit_ts_us",
    "op",
    "lba_sector",
    "len_sectors",
    "tag",
    "thread_id",
    "vfs_us",
    "fs_us",
    "block_us",
    "device_us",
    "complete_ts_us",
)


class TraceFormatError(ValueError):
    pass


class Op(str, enum.Enum):
    READ = "R"
    WRITE = "W"


class IoTag(str, enum.Enum):
    OD = "OD"  # object data
    OM = "OM"  # object metadata
    FSM = "FSM"  # filesystem metadata


@dataclass(slots=True)
class IoEvent:
    submit_ts: float
    op: Op
    lba: int
    len: int
    tag: IoTag
    thread_id: int = 0
    vfs_us: float = 0.0
    fs_us: float = 0.0
    block_us: float = 0.0
    device_us: float = 0.0
    complete_ts: float = 0.0
    # raw IOs folded into this BIO by the block layer; not serialized
    merged: int = 1

    @property
    def nbytes(self) -> int:
        return self.len * SECTOR

    @property
    def end(self) -> int:
        return self.lba + self.len

    @property
    def layer_lat(self) -> dict[str, float]:
        return {
            "vfs": self.vfs_us,
            "fs": self.fs_us,
            "block": self.block_us,
            "device": self.device_us,
        }

    @property
    def latency(self) -> float:
        return self.complete_ts - self.submit_ts

    def sort_key(self) -> tuple[float, int, int]:
        return (self.submit_ts, self.thread_id, self.lba)


@dataclass
class Trace:
    events: list[IoEvent]
    device_capacity_sectors: int
    meta: dict[str, str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.device_capacity_sectors <= 0:
            raise ValueError("device capacity must be positive")
        self.sort()

    def sort(self) -> int:
        """Restore submission ordering; returns the number of rows that were out of place."""
        misplaced = 0
        prev = None
        for ev in self.events:
            key = ev.sort_key()
            if prev is not None and key < prev:
                misplaced += 1
            prev = key
        if misplaced:
            self.events.sort(key=IoEvent.sort_key)
        return misplaced

    def __len__(self) -> int:
        return len(self.events)

    @property
    def replayed(self) -> bool:
        return self.meta.get("replayed") == "1"

    def total_bytes(self, tag: IoTag | None = None, op: Op | None = None) -> int:
        return sum(
            e.nbytes
            for e in self.events
            if (tag is None or e.tag is tag) and (op is None or e.op is op)
        )

    def check_bounds(self) -> None:
        for i, ev in enumerate(self.events):
            if ev.len <= 0:
                raise ValueError(f"event {i}: non-positive length {ev.len}")
            if ev.lba < 0 or ev.end > self.device_capacity_sectors:
                raise ValueError(
                    f"event {i}: lba range [{ev.lba}, {ev.end}) exceeds capacity "
                    f"{self.device_capacity_sectors}"
                )


def _fmt(x: float) -> str:
    s = f"{x:.3f}"
    return "0.000" if s == "-0.000" else s


def _header(trace: Trace) -> str:
    parts = [f"# {MAGIC} {FORMAT_VERSION}", f"capacity_sectors={trace.device_capacity_sectors}"]
    for k in sorted(trace.meta):
        v = str(trace.meta[k])
        if not k or any(c.isspace() or c == "=" for c in k) or any(c.isspace() for c in v):
            raise ValueError(f"meta entry {k!r}={v!r} cannot be serialized")
        parts.append(f"{k}={v}")
    return " ".join(parts)


def format_row(ev: IoEvent) -> str:
    return ",".join(
        (
            _fmt(ev.submit_ts),
            ev.op.value,
            str(ev.lba),
            str(ev.len),
            ev.tag.value,
            str(ev.thread_id),
            _fmt(ev.vfs_us),
            _fmt(ev.fs_us),
            _fmt(ev.block_us),
            _fmt(ev.device_us),
            _fmt(ev.complete_ts),
        )
    )


def emit_trace(trace: Trace, path: str | os.PathLike) -> None:
    lines = [_header(trace)]
    lines.extend(format_row(ev) for ev in trace.events)
    try:
        with open(path, "w", encoding="ascii", newline="\n") as fh:
            fh.write("\n".join(lines) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write trace to {path}: {exc}") from exc


def _parse_header(line: str, path) -> tuple[int, dict[str, str]]:
    tokens = line.lstrip("#").split()
    if len(tokens) < 3 or tokens[0] != MAGIC:
        raise TraceFormatError(f"{path}:1: missing '# {MAGIC} {FORMAT_VERSION}' header")
    if tokens[1] != FORMAT_VERSION:
        raise TraceFormatError(
            f"{path}:1: unsupported format version {tokens[1]!r} (expected {FORMAT_VERSION})"
        )
    meta: dict[str, str] = {}
    for tok in tokens[2:]:
        key, sep, value = tok.partition("=")
        if not sep:
            raise TraceFormatError(f"{path}:1: malformed header field {tok!r}")
        meta[key] = value
    try:
        capacity = int(meta.pop("capacity_sectors"))
    except (KeyError, ValueError):
        raise TraceFormatError(f"{path}:1: header lacks integer capacity_sectors") from None
    if capacity <= 0:
        raise TraceFormatError(f"{path}:1: capacity_sectors must be positive")
    return capacity, meta


def _parse_row(fields: list[str], lineno: int, path) -> IoEvent:
    if len(fields) != len(COLUMNS):
        raise TraceFormatError(
            f"{path}:{lineno}: expected {len(COLUMNS)} columns, got {len(fields)}"
        )

    def col(i: int, conv):
        try:
            return conv(fields[i])
        except ValueError:
            raise TraceFormatError(
                f"{path}:{lineno}: column {i + 1} ({COLUMNS[i]}): bad value {fields[i]!r}"
            ) from None

    return IoEvent(
        submit_ts=col(0, float),
        op=col(1, Op),
        lba=col(2, int),
        len=col(3, int),
        tag=col(4, IoTag),
        thread_id=col(5, int),
        vfs_us=col(6, float),
        fs_us=col(7, float),
        block_us=col(8, float),
        device_us=col(9, float),
        complete_ts=col(10, float),
    )


def parse_trace(path: str | os.PathLike) -> Trace:
    with open(path, encoding="ascii") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise TraceFormatError(f"{path}: empty file, header required")
    capacity, meta = _parse_header(lines[0], path)
    events = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        ev = _parse_row(line.split(","), lineno, path)
        if ev.len <= 0 or ev.lba < 0 or ev.end > capacity:
            raise TraceFormatError(
                f"{path}:{lineno}: lba range [{ev.lba}, {ev.end}) invalid for capacity {capacity}"
            )
        events.append(ev)
    disorder = _count_disorder(events)
    if disorder:
        meta["resorted_rows"] = str(disorder)
    return Trace(events=events, device_capacity_sectors=capacity, meta=meta)


def _count_disorder(events: Iterable[IoEvent]) -> int:
    n = 0
    prev = None
    for ev in events:
        k = ev.sort_key()
        if prev is not None and k < prev:
            n += 1
        prev = k
    return n


def _read_tag_overrides(path) -> dict[int, IoTag]:
    tags: dict[int, IoTag] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.replace(",", " ").split()
            if len(parts) != 2:
                raise TraceFormatError(f"{path}:{lineno}: expected '<line> <tag>'")
            try:
                tags[int(parts[0])] = IoTag(parts[1])
            except ValueError:
                raise TraceFormatError(f"{path}:{lineno}: bad tag entry {line!r}") from None
    return tags


def parse_blkparse_text(
    path: str | os.PathLike,
    capacity_sectors: int,
    tag_file: str | os.PathLike | None = None,
) -> Trace:
    """Import the Q (queue) and C (complete) records of blkparse default text output.

    Each Q record becomes one event tagged OD unless ``tag_file`` maps its line
    number (1-based) to another tag. C records complete the oldest pending Q with
    the same (lba, len, op). Discards, flushes and barrier-only records are
    skipped and counted in the trace meta.
    """
    if capacity_sectors <= 0:
        raise ValueError("capacity_sectors must be positive")
    overrides = _read_tag_overrides(tag_file) if tag_file is not None else {}

    events: list[IoEvent] = []
    pending: dict[tuple[int, int, Op], deque[IoEvent]] = defaultdict(deque)
    skipped_non_rw = 0
    unmatched = 0
    parsed = 0
    with open(path, encoding="utf-8", errors="replace") as fh:
        for lineno, line in enumerate(fh, start=1):
            f = line.split()
            # dev cpu seq time pid action rwbs sector + len [proc]
            if len(f) < 10 or f[8] != "+" or f[5] not in ("Q", "C"):
                continue
            try:
                ts_us = float(f[3]) * 1e6
                pid = int(f[4])
                lba = int(f[7])
                nsec = int(f[9])
            except ValueError:
                continue
            parsed += 1
            rwbs = f[6]
            if "D" in rwbs or ("R" not in rwbs and "W" not in rwbs) or nsec <= 0:
                skipped_non_rw += 1
                continue
            op = Op.WRITE if "W" in rwbs else Op.READ
            if lba < 0 or lba + nsec > capacity_sectors:
                raise TraceFormatError(
                    f"{path}:{lineno}: lba range [{lba}, {lba + nsec}) exceeds capacity"
                )
            if f[5] == "Q":
                ev = IoEvent(
                    submit_ts=round(ts_us, 3),
                    op=op,
                    lba=lba,
                    len=nsec,
                    tag=overrides.get(lineno, IoTag.OD),
                    thread_id=pid,
                )
                events.append(ev)
                pending[(lba, nsec, op)].append(ev)
            else:
                queue = pending.get((lba, nsec, op))
                if not queue:
                    unmatched += 1
                    continue
                ev = queue.popleft()
                ev.complete_ts = round(max(ts_us, ev.submit_ts), 3)
                ev.device_us = round(ev.complete_ts - ev.submit_ts, 3)
    if parsed == 0:
        raise TraceFormatError(f"{path}: no parseable blkparse Q/C lines")
    disorder = _count_disorder(events)
    meta = {
        "source": "blkparse",
        "timing": "open",
        "skipped_non_rw": str(skipped_non_rw),
        "unmatched_completions": str(unmatched),
    }
    if disorder:
        meta["resorted_rows"] = str(disorder)
    return Trace(events=events, device_capacity_sectors=capacity_sectors, meta=meta)
