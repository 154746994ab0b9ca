"""Trace replay against a device model.

Closed-loop traces (``timing=closed``, what the stack models emit) are replayed
per thread: events sharing a thread and a provisional submit timestamp form a
batch, and a thread releases its next batch only once the previous one has fully
completed. Open-loop traces (blkparse imports) are released at their recorded
timestamps.

Per event, the host part of the latency is the batch's slowest vfs+fs+block
path plus contention terms that grow with the number of IOs in flight; the
device part is service time (HDD) or time spent inside the device (SSD). Waiting
in front of the device is block-layer time.
"""

from __future__ import annotations

import heapq
from collections import deque
from dataclasses import dataclass, replace

from .device import HddProfile, SsdProfile, hdd_service, ssd_service
from .trace import SECTOR, IoEvent, Trace

DeviceProfile = HddProfile | SsdProfile

# event kinds, ordered so completions at time t are seen before releases at t
_DONE, _RELEASE, _ARRIVE = 0, 1, 2


@dataclass
class ReplayStats:
    makespan_us: float = 0.0
    device_busy_us: float = 0.0
    total_latency_us: float = 0.0
    max_outstanding: int = 0


@dataclass
class _Batch:
    thread: int
    floor_ts: float
    events: list[int]
    pending: int = 0


def _batches(trace: Trace, closed: bool) -> dict[int, deque[_Batch]]:
    per_thread: dict[int, deque[_Batch]] = {}
    for i, ev in enumerate(trace.events):
        q = per_thread.setdefault(ev.thread_id, deque())
        if closed and q and q[-1].floor_ts == ev.submit_ts:
            q[-1].events.append(i)
        else:
            q.append(_Batch(ev.thread_id, ev.submit_ts, [i]))
    return per_thread


class _Hdd:
    def __init__(self, profile: HddProfile, capacity: int):
        self.p = profile
        self.cap = capacity
        self.head = 0
        self.busy = False
        self.queue: deque[int] = deque()

    def arrive(self, i: int, now: float, sim: "_Sim") -> None:
        self.queue.append(i)
        self._kick(now, sim)

    def _kick(self, now: float, sim: "_Sim") -> None:
        if self.busy or not self.queue:
            return
        i = self.queue.popleft()
        ev = sim.out[i]
        svc, self.head = hdd_service(ev, self.head, self.p, self.cap)
        ev.block_us += now - sim.arrival[i]
        ev.device_us = svc
        sim.busy += svc
        self.busy = True
        sim.push(now + svc, _DONE, i)

    def done(self, i: int, now: float, sim: "_Sim") -> None:
        self.busy = False
        self._kick(now, sim)


class _Ssd:
    def __init__(self, profile: SsdProfile):
        self.p = profile
        self.free_channels = profile.channel_parallelism
        self.inside = 0
        self.bus_free = 0.0
        self.held: deque[int] = deque()  # waiting for a queue slot (block layer)
        self.queue: deque[int] = deque()  # accepted, waiting for a channel
        self.entered: dict[int, float] = {}

    def arrive(self, i: int, now: float, sim: "_Sim") -> None:
        self.held.append(i)
        self._kick(now, sim)

    def _kick(self, now: float, sim: "_Sim") -> None:
        while self.held and self.inside < self.p.queue_depth:
            i = self.held.popleft()
            sim.out[i].block_us += now - sim.arrival[i]
            self.entered[i] = now
            self.inside += 1
            self.queue.append(i)
        while self.queue and self.free_channels:
            i = self.queue.popleft()
            ev = sim.out[i]
            svc = ssd_service(ev, self.inside, self.p)
            xfer = ev.len * SECTOR / self.p.max_MBps
            xfer_start = max(self.bus_free, now + self.p.per_cmd_us)
            self.bus_free = xfer_start + xfer
            end = max(now + svc, self.bus_free)
            sim.busy += end - now
            self.free_channels -= 1
            sim.push(end, _DONE, i)

    def done(self, i: int, now: float, sim: "_Sim") -> None:
        sim.out[i].device_us = now - self.entered.pop(i)
        self.inside -= 1
        self.free_channels += 1
        self._kick(now, sim)


class _Sim:
    def __init__(self, trace: Trace, device: DeviceProfile):
        self.trace = trace
        self.out = [replace(ev, complete_ts=0.0) for ev in trace.events]
        self.arrival = [0.0] * len(self.out)
        self.heap: list = []
        self.seq = 0
        self.busy = 0.0
        self.in_flight = 0
        self.max_in_flight = 0
        self.fs_c = float(trace.meta.get("fs_contention_us", 0) or 0)
        self.blk_c = float(trace.meta.get("block_queue_us", 0) or 0)
        if isinstance(device, HddProfile):
            self.dev = _Hdd(device, trace.device_capacity_sectors)
        else:
            self.dev = _Ssd(device)

    def push(self, t: float, kind: int, payload) -> None:
        self.seq += 1
        heapq.heappush(self.heap, (t, kind, self.seq, payload))

    def release(self, batch: _Batch, now: float) -> None:
        backlog = self.in_flight
        host = []
        for i in batch.events:
            ev = self.out[i]
            ev.submit_ts = now
            ev.fs_us += self.fs_c * backlog
            ev.block_us += self.blk_c * backlog
            host.append(ev.vfs_us + ev.fs_us + ev.block_us)
        dispatch = now + max(host)
        for i, h in zip(batch.events, host):
            # waiting for the slowest member of the batch is plug time
            self.out[i].block_us += dispatch - now - h
            self.arrival[i] = dispatch
            self.push(dispatch, _ARRIVE, i)
        batch.pending = len(batch.events)
        self.in_flight += len(batch.events)
        self.max_in_flight = max(self.max_in_flight, self.in_flight)

    def run(self, closed: bool) -> None:
        threads = _batches(self.trace, closed)
        owner: dict[int, _Batch] = {}
        for q in threads.values():
            for b in q:
                for i in b.events:
                    owner[i] = b
        if closed:
            for q in threads.values():
                b = q.popleft()
                self.push(b.floor_ts, _RELEASE, b)
        else:
            for q in threads.values():
                while q:
                    b = q.popleft()
                    self.push(b.floor_ts, _RELEASE, b)
        while self.heap:
            now, kind, _, payload = heapq.heappop(self.heap)
            if kind == _RELEASE:
                self.release(payload, now)
            elif kind == _ARRIVE:
                self.dev.arrive(payload, now, self)
            else:
                i = payload
                self.out[i].complete_ts = now
                self.in_flight -= 1
                self.dev.done(i, now, self)
                b = owner[i]
                b.pending -= 1
                if b.pending == 0 and closed:
                    q = threads[b.thread]
                    if q:
                        nxt = q.popleft()
                        self.push(max(nxt.floor_ts, now), _RELEASE, nxt)


def replay(trace: Trace, device: DeviceProfile) -> tuple[Trace, ReplayStats]:
    """Replay ``trace`` on ``device``; returns the annotated copy and summary stats."""
    closed = trace.meta.get("timing", "closed") != "open"
    sim = _Sim(trace, device)
    sim.run(closed)
    events = sim.out
    for ev in events:
        # absorb float drift so the layer sum matches the end-to-end latency exactly
        ev.block_us += (ev.complete_ts - ev.submit_ts) - (
            ev.vfs_us + ev.fs_us + ev.block_us + ev.device_us
        )
    stats = ReplayStats(
        makespan_us=max((e.complete_ts for e in events), default=0.0)
        - min((e.submit_ts for e in events), default=0.0),
        device_busy_us=sim.busy,
        total_latency_us=sum(e.complete_ts - e.submit_ts for e in events),
        max_outstanding=sim.max_in_flight,
    )
    meta = dict(trace.meta)
    meta.update(
        replayed="1",
        device=device.kind,
        nts_bytes=str(device.nts_bytes),
        makespan_us=f"{stats.makespan_us:.3f}",
        device_busy_us=f"{stats.device_busy_us:.3f}",
    )
    return Trace(events, trace.device_capacity_sectors, meta), stats
