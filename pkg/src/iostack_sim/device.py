"""Per-IO service time for HDD and SSD profiles.

Both service functions are pure. The HDD head position is threaded through by
the caller; queueing is the replay engine's job.
"""

from __future__ import annotations

from dataclasses import dataclass

from .trace import SECTOR, IoEvent

NTS_DEFAULT = 4 * 1024 * 1024


def _check_nts(nts_bytes: int) -> None:
    pages = nts_bytes // 4096
    if nts_bytes <= 0 or nts_bytes % 4096 or pages & (pages - 1):
        raise ValueError("nts_bytes must be a power-of-two multiple of 4 KiB")


@dataclass(frozen=True)
class HddProfile:
    avg_seek_us: float = 3500.0
    rpm: float = 15000.0
    transfer_MBps: float = 200.0
    per_cmd_us: float = 50.0
    nts_bytes: int = NTS_DEFAULT

    kind = "hdd"

    def __post_init__(self) -> None:
        if min(self.avg_seek_us, self.rpm, self.transfer_MBps, self.per_cmd_us) <= 0:
            raise ValueError("HDD parameters must be positive")
        _check_nts(self.nts_bytes)

    @property
    def half_rotation_us(self) -> float:
        return 30e6 / self.rpm


@dataclass(frozen=True)
class SsdProfile:
    per_cmd_us: float = 60.0
    transfer_MBps: float = 2000.0
    channel_parallelism: int = 8
    nts_bytes: int = NTS_DEFAULT
    # aggregate internal bandwidth shared by all channels
    max_MBps: float = 3000.0
    # commands the device accepts before the block layer has to hold them
    queue_depth: int = 1024

    kind = "ssd"

    def __post_init__(self) -> None:
        if min(self.per_cmd_us, self.transfer_MBps, self.max_MBps) <= 0:
            raise ValueError("SSD parameters must be positive")
        if self.channel_parallelism < 1 or self.queue_depth < 1:
            raise ValueError("channel_parallelism and queue_depth must be >= 1")
        _check_nts(self.nts_bytes)


def seek_us(distance: int, capacity_sectors: int, profile: HddProfile) -> float:
    """Linear seek curve: full stroke costs twice the average, with a 10% floor."""
    if distance == 0:
        return 0.0
    frac = min(abs(distance) / capacity_sectors, 1.0)
    return max(0.1 * profile.avg_seek_us, 2.0 * profile.avg_seek_us * frac)


def hdd_service(
    io: IoEvent, head_lba: int, profile: HddProfile, capacity_sectors: int
) -> tuple[float, int]:
    """Service time of ``io`` with the head at ``head_lba``; returns (us, new head)."""
    transfer = io.len * SECTOR / profile.transfer_MBps
    if io.lba == head_lba:
        positioning = 0.0
    else:
        positioning = seek_us(io.lba - head_lba, capacity_sectors, profile)
        positioning += profile.half_rotation_us
    return profile.per_cmd_us + positioning + transfer, io.lba + io.len


def ssd_service(io: IoEvent, outstanding: int, profile: SsdProfile) -> float:
    """Command overhead plus transfer spread over the channels the queue keeps busy."""
    factor = max(1, min(outstanding, profile.channel_parallelism))
    return profile.per_cmd_us + (io.len * SECTOR / profile.transfer_MBps) / factor
