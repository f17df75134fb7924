"""Event model: the event tuple, stream parameters, and intensity arithmetic.

An event stream is a sequence of per-pixel samples ``(x, y, c, d, t)``.  Each
event says: since this pixel's previous event, ``2**d`` intensity units
accumulated, finishing at tick ``t``.  The average intensity over that gap is
therefore ``2**d / delta_t`` units per tick, where one intensity unit is one
full-scale-normalized sample-tick: a pixel held at sample value ``v``
contributes ``v`` units over ``ref_interval`` ticks, i.e. ``v / ref_interval``
units per tick.

All arithmetic in this module is exact (integers and `fractions.Fraction`);
rounding happens only in :func:`display_value`, which maps an event back to an
8-bit sample.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

# Decimation exponent bounds.  The accumulation threshold is 2**d intensity
# units; 2**20 comfortably exceeds 255 units/tick times any desk-scale gap.
D_MAX = 20

# Sentinel decimation: "intensity was exactly zero over the elapsed gap".
# Kept maximally distant from the legal 0..20 range in an 8-bit field.
D_ZERO = 255

_TICK_RANGE = 1 << 32  # timestamps must fit an unsigned 32-bit field


class SentinelDecimationError(ValueError):
    """Raised when an intensity is requested for the zero-intensity sentinel."""


@dataclass(frozen=True, slots=True)
class Event:
    """One event: pixel address, channel, decimation exponent, tick stamp."""

    x: int
    y: int
    c: int
    d: int
    t: int

    def sort_key(self) -> tuple[int, int, int, int]:
        """Canonical stream order: time, then raster position, then channel."""
        return (self.t, self.y, self.x, self.c)


@dataclass(frozen=True, slots=True)
class StreamParams:
    """Plane geometry plus the time model of a stream.

    ``tps`` is ticks per second, ``ref_interval`` the ticks spanned by one
    input frame, ``delta_t_max`` the largest permitted gap between a pixel's
    consecutive events, and ``crf`` the 0..9 quality knob (0 = most
    sensitive).  ``crf`` steers the transcoder only; it is not a property of
    a recorded stream.
    """

    width: int
    height: int
    channels: int = 1
    tps: int = 7650
    ref_interval: int = 255
    delta_t_max: int = 7650
    crf: int = 3

    @property
    def plane_shape(self) -> tuple[int, int, int]:
        return (self.channels, self.height, self.width)


def validate_params(p: StreamParams) -> list[str]:
    """Return every violated invariant of ``p``; empty list iff valid."""
    violations = []
    if p.width < 1:
        violations.append("width >= 1")
    if p.height < 1:
        violations.append("height >= 1")
    if p.channels not in (1, 3):
        violations.append("channels in {1, 3}")
    if p.ref_interval < 1:
        violations.append("ref_interval >= 1")
    else:
        if p.delta_t_max < p.ref_interval:
            violations.append("delta_t_max >= ref_interval")
        if p.delta_t_max % p.ref_interval != 0:
            violations.append("delta_t_max multiple of ref_interval")
        if p.tps < p.ref_interval:
            violations.append("tps >= ref_interval")
    if not 0 <= p.crf <= 9:
        violations.append("crf in 0..=9")
    return violations


def intensity_per_tick(d: int, delta_t: int) -> Fraction:
    """Exact intensity rate ``2**d / delta_t`` in units per tick.

    No floating point at this layer; callers that need a sample value go
    through :func:`display_value`.  The sentinel ``D_ZERO`` has no rate and
    must be branched on first.
    """
    if d == D_ZERO:
        raise SentinelDecimationError("D_ZERO carries no intensity rate")
    if not 0 <= d <= D_MAX:
        raise ValueError(f"decimation {d} outside 0..{D_MAX}")
    if delta_t < 1:
        raise ValueError("delta_t must be >= 1")
    return Fraction(1 << d, delta_t)


def display_value(d: int, delta_t: int, ref_interval: int) -> int:
    """Map an event back to an 8-bit sample: ``2**d * ref_interval / delta_t``.

    Rounds half away from zero and clamps to 0..255.  ``D_ZERO`` renders 0.
    """
    if d == D_ZERO:
        return 0
    if delta_t < 1:
        raise ValueError("delta_t must be >= 1")
    # Values are nonnegative, so half-away-from-zero == half-up:
    # round(n/m) = (2n + m) // (2m) in exact integer arithmetic.
    n = (1 << d) * ref_interval
    v = (2 * n + delta_t) // (2 * delta_t)
    return min(v, 255)


def display_plane(d: np.ndarray, delta_t: np.ndarray, ref_interval: int) -> np.ndarray:
    """Vectorized :func:`display_value` over int64 arrays; d < 0 renders 0.

    Both ``d < 0`` (no event yet) and ``d == D_ZERO`` map to 0.  Entries of
    ``delta_t`` are clamped to >= 1 so a same-tick replacement cannot divide
    by zero.
    """
    d = np.asarray(d, dtype=np.int64)
    dt = np.maximum(np.asarray(delta_t, dtype=np.int64), 1)
    live = (d >= 0) & (d != D_ZERO)
    n = np.where(live, np.int64(1) << np.where(live, d, 0), 0) * ref_interval
    v = (2 * n + dt) // (2 * dt)
    return np.minimum(v, 255).astype(np.uint8)


def validate_event(ev: Event, params: StreamParams) -> None:
    """Raise ValueError if ``ev`` cannot belong to a stream with ``params``."""
    if not (0 <= ev.x < params.width and 0 <= ev.y < params.height):
        raise ValueError(f"event at ({ev.x},{ev.y}) outside {params.width}x{params.height} plane")
    if not 0 <= ev.c < params.channels:
        raise ValueError(f"event channel {ev.c} outside {params.channels} channel(s)")
    if ev.d != D_ZERO and not 0 <= ev.d <= D_MAX:
        raise ValueError(f"decimation {ev.d} outside 0..{D_MAX} and not D_ZERO")
    if not 0 <= ev.t < _TICK_RANGE:
        raise ValueError(f"timestamp {ev.t} outside unsigned 32-bit range")
