"""Frame reconstruction: hold each pixel at its most recent event.

The canvas keeps, per pixel/channel, the last event's decimation and tick
plus the tick of the event before it; a snapshot renders every pixel as
``display_value(d, last_t - prev_t, ref_interval)``.  Pixels that have not
fired yet render 0, as do zero-intensity sentinel events.
"""

from __future__ import annotations

import numpy as np

from .events import D_ZERO, Event, StreamParams, display_plane


class TimestampRegressionError(ValueError):
    """An event arrived earlier than the pixel's stored timestamp."""


class Canvas:
    """Mutable per-pixel last-event store; snapshots are immutable copies."""

    def __init__(self, params: StreamParams) -> None:
        self.params = params
        shape = params.plane_shape  # (channels, height, width)
        self._d = np.full(shape, -1, dtype=np.int64)  # -1: no event yet
        self._t_last = np.zeros(shape, dtype=np.int64)
        self._t_prev = np.zeros(shape, dtype=np.int64)

    def apply_event(self, ev: Event) -> None:
        """Fold one event in; rejects per-pixel timestamp regressions."""
        p = self.params
        if not (0 <= ev.x < p.width and 0 <= ev.y < p.height and 0 <= ev.c < p.channels):
            raise ValueError(f"event at ({ev.x},{ev.y},c{ev.c}) outside plane")
        idx = (ev.c, ev.y, ev.x)
        if ev.t < self._t_last[idx]:
            raise TimestampRegressionError(
                f"pixel ({ev.x},{ev.y},c{ev.c}): event t={ev.t} before stored "
                f"t={int(self._t_last[idx])}")
        self._t_prev[idx] = self._t_last[idx]
        self._t_last[idx] = ev.t
        self._d[idx] = ev.d

    def apply_events(self, events) -> None:
        for ev in events:
            self.apply_event(ev)

    def apply_batch(self, events: list[Event]) -> None:
        """Vectorized apply for a time-sorted batch; same result as applying
        each event in order (only each pixel's last two stamps matter)."""
        n = len(events)
        if n < 64:
            self.apply_events(events)
            return
        p = self.params
        xs = np.fromiter((e.x for e in events), np.int64, n)
        ys = np.fromiter((e.y for e in events), np.int64, n)
        cs = np.fromiter((e.c for e in events), np.int64, n)
        ds = np.fromiter((e.d for e in events), np.int64, n)
        ts = np.fromiter((e.t for e in events), np.int64, n)
        if (xs.min() < 0 or ys.min() < 0 or cs.min() < 0
                or xs.max() >= p.width or ys.max() >= p.height
                or cs.max() >= p.channels):
            raise ValueError("event outside plane in batch")
        if (np.diff(ts) < 0).any():
            raise ValueError("batch must be sorted by t")
        lin = (cs * p.height + ys) * p.width + xs
        order = np.argsort(lin, kind="stable")  # keeps time order per pixel
        lin_s, t_s, d_s = lin[order], ts[order], ds[order]
        bounds = np.nonzero(np.diff(lin_s))[0]
        last = np.append(bounds, n - 1)
        first = np.append(0, bounds + 1)
        pix = lin_s[last]
        c_i, rest = np.divmod(pix, p.height * p.width)
        y_i, x_i = np.divmod(rest, p.width)
        stored = self._t_last[c_i, y_i, x_i]
        if (t_s[first] < stored).any():
            bad = int(np.nonzero(t_s[first] < stored)[0][0])
            raise TimestampRegressionError(
                f"pixel ({int(x_i[bad])},{int(y_i[bad])},c{int(c_i[bad])}): "
                f"batch event regresses below stored t")
        size = last - first + 1
        prev = np.where(size >= 2, t_s[np.maximum(last - 1, 0)], stored)
        self._t_prev[c_i, y_i, x_i] = prev
        self._t_last[c_i, y_i, x_i] = t_s[last]
        self._d[c_i, y_i, x_i] = d_s[last]

    def frame_at(self, ref_interval: int | None = None) -> np.ndarray:
        """Deterministic u8 snapshot: (h, w) for grayscale, (h, w, 3) otherwise."""
        if ref_interval is None:
            ref_interval = self.params.ref_interval
        dt = self._t_last - self._t_prev
        planes = display_plane(self._d, dt, ref_interval)
        if self.params.channels == 1:
            return planes[0]
        return np.moveaxis(planes, 0, -1)

    def last_event_tick(self) -> int:
        return int(self._t_last.max())


def play(params: StreamParams, events: list[Event], target_fps: int,
         end_t: int | None = None):
    """Yield (tick, frame) snapshots every tps/target_fps ticks of stream time.

    Pacing is in stream ticks, not wall time; the caller owns any real-time
    throttling.  ``end_t`` defaults to the last event's timestamp, so a fully
    flushed stream plays to its end; pass it explicitly to keep a schedule
    over an event-free tail.
    """
    if target_fps < 1:
        raise ValueError("target_fps must be >= 1")
    if end_t is None:
        end_t = max((e.t for e in events), default=0)
    canvas = Canvas(params)
    n_frames = -(-end_t * target_fps // params.tps)  # ceil
    i = 0
    for k in range(1, n_frames + 1):
        tick = k * params.tps // target_fps
        while i < len(events) and events[i].t <= tick:
            canvas.apply_event(events[i])
            i += 1
        yield tick, canvas.frame_at()
