import random

import pytest

from iostack_sim.trace import IoEvent, IoTag, Op, Trace


def random_trace(rng: random.Random, n: int, capacity: int = 1 << 20, adjacent: float = 0.4) -> Trace:
    """Random trace; roughly ``adjacent`` of events continue where the previous one ended."""
    events = []
    ts = 0.0
    lba = rng.randrange(capacity // 2)
    for _ in range(n):
        length = rng.choice((1, 8, 16, 64, 256, 512))
        if events and rng.random() < adjacent and events[-1].end + length <= capacity:
            lba = events[-1].end
        else:
            lba = rng.randrange(capacity - length)
        ts += rng.choice((0.0, 0.0, 1.0, 2.5))
        events.append(
            IoEvent(
                submit_ts=ts,
                op=rng.choice((Op.READ, Op.WRITE)),
                lba=lba,
                len=length,
                tag=rng.choice(list(IoTag)),
                thread_id=rng.randrange(4),
            )
        )
    return Trace(events, capacity, {"seed": "1"})


@pytest.fixture
def rng():
    return random.Random(1234)
