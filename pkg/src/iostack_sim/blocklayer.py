"""Block layer: stage raw IOs, merge LBA-adjacent ones, split at the max BIO size."""

from __future__ import annotations

from dataclasses import dataclass

from .trace import IoEvent, IoTag, Op

MAX_BIO_SECTORS = 512  # 256 KiB
MERGE_WINDOW = 16


@dataclass(slots=True)
class RawIo:
    op: Op
    lba: int
    len: int
    tag: IoTag
    thread_id: int = 0
    vfs_us: float = 0.0
    fs_us: float = 0.0

    @property
    def end(self) -> int:
        return self.lba + self.len


@dataclass(slots=True)
class _Run:
    op: Op
    tag: IoTag
    thread_id: int
    lba: int
    end: int
    parts: list


def bio_split_merge(
    pending: list[RawIo],
    *,
    submit_ts: float = 0.0,
    block_us: float = 0.0,
    window: int = MERGE_WINDOW,
    max_bio_sectors: int = MAX_BIO_SECTORS,
) -> list[IoEvent]:
    """Turn staged raw IOs into BIO-sized IoEvents.

    Raw IOs are taken ``window`` at a time; inside a window a raw IO joins an
    earlier run when it has the same op, tag and thread and starts where the
    run ends (or ends where it starts). Runs come out in order of their first
    raw IO and are cut into pieces of at most ``max_bio_sectors``. Each raw IO's
    vfs/fs cost moves to the BIO holding its first sector; each BIO costs
    ``block_us``.
    """
    if window < 1 or max_bio_sectors < 1:
        raise ValueError("window and max_bio_sectors must be >= 1")
    out: list[IoEvent] = []
    for w in range(0, len(pending), window):
        runs: list[_Run] = []
        for raw in pending[w : w + window]:
            if raw.len <= 0:
                raise ValueError("raw IO length must be positive")
            for run in runs:
                if run.op is raw.op and run.tag is raw.tag and run.thread_id == raw.thread_id:
                    if run.end == raw.lba:
                        run.end = raw.end
                        run.parts.append(raw)
                        break
                    if raw.end == run.lba:
                        run.lba = raw.lba
                        run.parts.append(raw)
                        break
            else:
                runs.append(_Run(raw.op, raw.tag, raw.thread_id, raw.lba, raw.end, [raw]))
        for run in runs:
            start = run.lba
            pieces = []
            while start < run.end:
                n = min(max_bio_sectors, run.end - start)
                pieces.append(
                    IoEvent(
                        submit_ts=submit_ts,
                        op=run.op,
                        lba=start,
                        len=n,
                        tag=run.tag,
                        thread_id=run.thread_id,
                        block_us=block_us,
                        merged=0,
                    )
                )
                start += n
            for raw in run.parts:
                for ev in pieces:
                    if ev.lba < raw.end and raw.lba < ev.end:
                        ev.merged += 1
                home = pieces[(raw.lba - run.lba) // max_bio_sectors]
                home.vfs_us += raw.vfs_us
                home.fs_us += raw.fs_us
            out.extend(pieces)
    return out
