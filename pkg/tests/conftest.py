"""Shared test helpers: random event streams and small parameter sets."""

import numpy as np
import pytest

from adder.events import D_MAX, D_ZERO, Event, StreamParams


def make_params(width=64, height=64, channels=1, tps=7650, ref_interval=255,
                delta_t_max=7650, crf=3):
    return StreamParams(width, height, channels, tps=tps,
                        ref_interval=ref_interval, delta_t_max=delta_t_max,
                        crf=crf)


def random_events(rng, params, n, t_max=None):
    """n random valid events, already in canonical (t, y, x, c) order.

    Timestamps are drawn from [0, t_max); per-pixel monotonicity comes free
    from the global sort (ties share a tick, which the model allows for
    distinct pixels).
    """
    if t_max is None:
        t_max = 4 * params.delta_t_max
    xs = rng.randint(0, params.width, size=n)
    ys = rng.randint(0, params.height, size=n)
    cs = rng.randint(0, params.channels, size=n)
    ds = rng.randint(0, D_MAX + 2, size=n)
    ts = rng.randint(0, t_max, size=n)
    events = [
        Event(int(x), int(y), int(c), D_ZERO if d == D_MAX + 1 else int(d), int(t))
        for x, y, c, d, t in zip(xs, ys, cs, ds, ts)
    ]
    events.sort(key=Event.sort_key)
    # Collapse same-pixel same-tick duplicates into distinct ticks is not
    # needed for codec tests; streams allow nondecreasing per-pixel stamps.
    return events


@pytest.fixture
def rng():
    return np.random.RandomState(1234)
