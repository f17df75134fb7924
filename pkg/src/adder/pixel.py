"""Per-pixel asynchronous integration.

A pixel accumulates intensity continuously at its current input rate.  The
moment the accumulator reaches the threshold ``2**cur_d`` an event fires,
stamped with the tick containing the crossing instant (floor of the exact
rational crossing time).  If the threshold is not reached for ``delta_t_max``
ticks, a cap event fires instead, conveying whatever accumulated: the largest
power of two not exceeding the accumulator, or ``D_ZERO`` when less than one
unit accrued.

Everything here is exact rational arithmetic so that conservation holds
bit-for-bit: over any span with no caps, ``sum(2**d_fired) + acc_final ==
rate * span + acc_initial``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Callable

from .events import D_MAX, D_ZERO, StreamParams

# Mid-range starting exponent; the rate policy takes over after the first event.
INITIAL_D = 7


@dataclass(slots=True)
class PixelState:
    """Integrator state for one pixel/channel.

    ``acc`` is the accumulated intensity in units (exact rational), ``last_t``
    the tick of the last fired event (0 before any event; the delta_t_max cap
    is anchored there from stream start), ``cur_d`` the active threshold
    exponent, and ``running_rate`` the smoothed recent intensity estimate in
    units/tick.  At rest ``0 <= acc < 2**cur_d``.
    """

    acc: Fraction = field(default_factory=lambda: Fraction(0))
    last_t: int = 0
    cur_d: int = INITIAL_D
    running_rate: Fraction = field(default_factory=lambda: Fraction(0))
    fired: bool = False

    def copy(self) -> "PixelState":
        return replace(self)


@dataclass(frozen=True, slots=True)
class FiredEvent:
    """A (d, t) pair fired by one pixel; the caller supplies (x, y, c)."""

    d: int
    t: int


def next_d(measured_rate: Fraction | int, crf_eff: int, params: StreamParams,
           d_max: int = D_MAX) -> int:
    """Decimation target for a pixel running at ``measured_rate`` units/tick.

    The sensitivity ladder aims the inter-event gap at
    ``g = min(ref_interval * 2**crf_eff, delta_t_max)`` ticks and picks the
    largest threshold reachable within it:
    ``clamp(floor(log2(max(1, rate * g))), 0, d_max)``.  Exact and
    deterministic: ``floor(log2)`` is computed on the rational itself.
    """
    if measured_rate < 0:
        raise ValueError("measured_rate must be >= 0")
    g = min(params.ref_interval << crf_eff, params.delta_t_max)
    x = Fraction(measured_rate) * g
    if x <= 1:
        return 0
    q = x.numerator // x.denominator
    if q < 1:
        return 0
    return min(q.bit_length() - 1, d_max)


def _bits_needed(acc: Fraction) -> int:
    """Smallest b with acc < 2**b; 0 when acc < 1."""
    if acc < 1:
        return 0
    # floor(acc) >= 1, and acc < floor(acc) + 1 <= 2**bit_length(floor(acc)).
    return (acc.numerator // acc.denominator).bit_length()


def _largest_pow2_leq(acc: Fraction) -> int:
    """Largest d with 2**d <= acc, for acc >= 1."""
    q = acc.numerator // acc.denominator
    return q.bit_length() - 1


def integrate(
    state: PixelState,
    rate: Fraction | int,
    span: int,
    d_policy: Callable[[Fraction], int],
    now_base: int,
    delta_t_max: int,
) -> tuple[list[FiredEvent], PixelState]:
    """Accumulate ``rate`` units/tick over ``[now_base, now_base + span]``.

    Returns the fired events (threshold crossings and delta_t_max caps, in
    time order) and the updated state.  ``d_policy`` is consulted after every
    fired event with the residual accumulation; the engine passes a closure
    over its rate estimate, tests may pin a constant.  The chosen exponent is
    raised, if necessary, so the residual stays below the new threshold (the
    at-rest invariant); the raise drains naturally at the next crossing.

    Timestamps floor the exact crossing instant to a tick.  When two
    crossings land in one tick (intensity above one unit/tick), the later
    one is pushed to the next tick so per-pixel stamps strictly increase.
    """
    rate = Fraction(rate)
    if rate < 0:
        raise ValueError("rate must be >= 0")
    if span < 1:
        raise ValueError("span must be >= 1")

    acc = state.acc
    last_t = state.last_t
    cur_d = state.cur_d
    fired = state.fired
    t_end = now_base + span
    t_cur = Fraction(now_base)
    out: list[FiredEvent] = []

    while True:
        threshold = 1 << cur_d
        t_cap = last_t + delta_t_max
        if rate > 0:
            t_cross = t_cur + (threshold - acc) / rate
        else:
            t_cross = None

        if t_cross is not None and t_cross <= t_end and t_cross <= t_cap:
            # Threshold crossing: stamp the tick containing the instant.
            tick = t_cross.numerator // t_cross.denominator
            if fired and tick <= last_t:
                tick = last_t + 1
            acc = Fraction(0)  # exact: acc + rate*(t_cross - t_cur) == threshold
            t_cur = t_cross
            out.append(FiredEvent(cur_d, tick))
            last_t, fired = tick, True
            cur_d = max(d_policy(acc), _bits_needed(acc))
        elif t_cap <= t_end:
            # Gap cap: convey what accumulated by last_t + delta_t_max.
            acc += rate * (t_cap - t_cur)
            t_cur = Fraction(t_cap)
            if acc < 1:
                out.append(FiredEvent(D_ZERO, t_cap))
            else:
                d_fired = _largest_pow2_leq(acc)
                acc -= 1 << d_fired
                out.append(FiredEvent(d_fired, t_cap))
            last_t, fired = t_cap, True
            cur_d = max(d_policy(acc), _bits_needed(acc))
        else:
            acc += rate * (t_end - t_cur)
            break

    new_state = PixelState(acc=acc, last_t=last_t, cur_d=cur_d,
                           running_rate=state.running_rate, fired=fired)
    return out, new_state
