import itertools
import random

import pytest

from iostack_sim.device import HddProfile, SsdProfile, hdd_service, ssd_service
from iostack_sim.osstack import RawStack, StackCosts
from iostack_sim.replay import replay
from iostack_sim.trace import IoEvent, IoTag, Op, Trace

from .conftest import random_trace

CAP = 1 << 24


def _ev(ts, lba, n, tid=0, **kw):
    return IoEvent(ts, Op.WRITE, lba, n, IoTag.OD, tid, **kw)


def test_hdd_service_example():
    p = HddProfile(per_cmd_us=100.0, transfer_MBps=200.0)
    svc, head = hdd_service(_ev(0, 0, 256), 0, p, CAP)
    assert svc == pytest.approx(100 + 655.36)
    assert head == 256
    assert HddProfile(rpm=15000).half_rotation_us == 2000.0


def test_ssd_service_example():
    p = SsdProfile(per_cmd_us=80.0, transfer_MBps=3000.0, channel_parallelism=8)
    assert ssd_service(_ev(0, 0, 256), 1, p) == pytest.approx(80 + 131072 / 3000)
    full = ssd_service(_ev(0, 0, 256), 8, p) - 80
    half = ssd_service(_ev(0, 0, 256), 4, p) - 80
    assert full == pytest.approx(half / 2)
    small = ssd_service(_ev(0, 0, 8), 4, p) / 4096
    large = ssd_service(_ev(0, 0, 256), 4, p) / 131072
    assert small > large


def test_back_to_back_adjacent_hdd():
    p = HddProfile()
    tr = Trace([_ev(0.0, 1000, 8), _ev(1.0, 1008, 8)], CAP, {"timing": "open"})
    out, _ = replay(tr, p)
    second = out.events[1]
    assert second.device_us == pytest.approx(p.per_cmd_us + 4096 / p.transfer_MBps)


def test_single_io_latency():
    p = SsdProfile()
    ev = _ev(10.0, 0, 8, vfs_us=2.0, fs_us=30.0, block_us=5.0)
    out, stats = replay(Trace([ev], CAP), p)
    (e,) = out.events
    assert e.device_us == pytest.approx(ssd_service(ev, 1, p))
    assert e.complete_ts == pytest.approx(10.0 + 37.0 + e.device_us)
    assert stats.total_latency_us == pytest.approx(e.latency)


def test_hdd_busy_equals_device_sum():
    rng = random.Random(2)
    tr = random_trace(rng, 2000, CAP)
    out, stats = replay(tr, HddProfile())
    assert stats.device_busy_us == pytest.approx(sum(e.device_us for e in out.events))


@pytest.mark.parametrize("dev", [HddProfile(), SsdProfile()], ids=["hdd", "ssd"])
def test_layers_sum_to_latency(dev):
    rng = random.Random(3)
    tr = random_trace(rng, 3000, CAP)
    tr.meta.update(fs_contention_us="12", block_queue_us="2")
    out, _ = replay(tr, dev)
    assert out.replayed and out.meta["device"] == dev.kind
    for e in out.events:
        assert abs(sum(e.layer_lat.values()) - e.latency) <= 1.0
        assert min(e.layer_lat.values()) >= -1e-6


def test_closed_loop_one_batch_at_a_time():
    ev = [_ev(0.0, 0, 8), _ev(0.0, 100, 8), _ev(1.0, 200, 8)]
    out, _ = replay(Trace(ev, CAP), SsdProfile())
    first_done = max(e.complete_ts for e in out.events if e.lba in (0, 100))
    third = next(e for e in out.events if e.lba == 200)
    assert third.submit_ts >= first_done


def test_open_loop_keeps_timestamps():
    ev = [_ev(0.0, 0, 8), _ev(1.0, 5000, 8)]
    out, _ = replay(Trace(ev, CAP, {"timing": "open"}), HddProfile())
    assert [e.submit_ts for e in out.events] == [0.0, 1.0]
    assert out.events[1].block_us > 0  # waited behind the first IO


def _hdd_total(lbas):
    ev = [_ev(float(i), lba, 8) for i, lba in enumerate(lbas)]
    return replay(Trace(ev, CAP), HddProfile())[1].makespan_us


def test_contiguity_bonus():
    seq = [i * 8 for i in range(6)]
    best = _hdd_total(seq)
    for perm in itertools.permutations(seq):
        if list(perm) != seq:
            assert _hdd_total(perm) > best


@pytest.mark.parametrize("dev", [HddProfile(), SsdProfile()], ids=["hdd", "ssd"])
@pytest.mark.parametrize("threads", [1, 4, 16])
def test_large_io_higher_throughput(dev, threads):
    def mbps(io):
        tr = RawStack(CAP, StackCosts()).sequential_writes(threads, io, 64)
        _, stats = replay(tr, dev)
        return tr.total_bytes() / stats.makespan_us

    assert mbps(128 << 10) > mbps(4 << 10)


def test_replay_is_deterministic():
    tr = random_trace(random.Random(5), 500, CAP)
    a, _ = replay(tr, SsdProfile())
    b, _ = replay(tr, SsdProfile())
    assert a.events == b.events
