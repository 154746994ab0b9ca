import pytest

from iostack_sim.device import HddProfile, SsdProfile, hdd_service, seek_us, ssd_service
from iostack_sim.trace import IoEvent, IoTag, Op


def _io(lba, length):
    return IoEvent(0.0, Op.READ, lba, length, IoTag.OD, 0)


def test_hdd_sequential_skips_positioning():
    p = HddProfile()
    svc, head = hdd_service(_io(100, 8), 100, p, 1 << 20)
    assert svc == pytest.approx(p.per_cmd_us + 4096 / p.transfer_MBps)
    assert head == 108


def test_hdd_random_pays_seek_and_rotation():
    p = HddProfile()
    cap = 1 << 20
    svc, _ = hdd_service(_io(cap // 2, 8), 0, p, cap)
    expected = p.per_cmd_us + seek_us(cap // 2, cap, p) + p.half_rotation_us + 4096 / p.transfer_MBps
    assert svc == pytest.approx(expected)
    # half stroke costs the average seek
    assert seek_us(cap // 2, cap, p) == pytest.approx(p.avg_seek_us)


def test_seek_floor_and_monotone():
    p = HddProfile()
    cap = 1 << 20
    assert seek_us(1, cap, p) == pytest.approx(0.1 * p.avg_seek_us)
    values = [seek_us(d, cap, p) for d in range(0, cap, cap // 64)]
    assert values == sorted(values)


def test_ssd_parallelism_divides_transfer():
    p = SsdProfile()
    io = _io(0, 256)
    one = ssd_service(io, 1, p)
    many = ssd_service(io, 64, p)
    transfer = 256 * 512 / p.transfer_MBps
    assert one == pytest.approx(p.per_cmd_us + transfer)
    assert many == pytest.approx(p.per_cmd_us + transfer / p.channel_parallelism)


def test_ssd_large_io_costs_more():
    p = SsdProfile()
    assert ssd_service(_io(0, 8), 1, p) < ssd_service(_io(0, 2048), 1, p)


@pytest.mark.parametrize("nts", [0, 1000, 12 * 4096])
def test_nts_validation(nts):
    with pytest.raises(ValueError):
        HddProfile(nts_bytes=nts)
    with pytest.raises(ValueError):
        SsdProfile(nts_bytes=nts)


def test_profile_validation():
    with pytest.raises(ValueError):
        HddProfile(rpm=0)
    with pytest.raises(ValueError):
        SsdProfile(channel_parallelism=0)
