"""Transcoding engine: framed and DVS sources to per-pixel intensity events.

The engine owns one integrator per pixel/channel.  Hot-path bookkeeping is
vectorized: a screen pass finds the pixels that will fire (threshold crossing
or delta_t_max cap) during a span, everything else accumulates in place with
integer math.  Firing pixels run the exact rational integrator from
:mod:`adder.pixel`, so engine output is bit-identical to integrating every
pixel individually.

Internal scaling: accumulators hold units * 256 * ref_interval (samples are
Q8.8 so the DVS level bridge keeps sub-sample precision), and the smoothed
rate estimate is fixed-point with a 2**32 denominator.  All of it stays
exact; there is no floating point in the integration path.

Engine state is confined to one worker thread.  Control mutations (set_crf,
set_roi) are applied between frame or window batches, never concurrently
with integration.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .events import D_MAX, D_ZERO, Event, StreamParams, validate_params
from .pixel import INITIAL_D, PixelState, integrate, next_d

_RATE_BITS = 32  # fixed-point denominator of the smoothed rate estimate
_Q_BITS = 8      # Q8.8 sample quantization


def _bit_length_i64(y: np.ndarray) -> np.ndarray:
    """Exact vectorized int bit_length for nonnegative int64 arrays."""
    y = y.astype(np.uint64)
    bl = np.zeros(y.shape, dtype=np.int64)
    for s in (32, 16, 8, 4, 2, 1):
        big = y >= (np.uint64(1) << np.uint64(s))
        bl[big] += s
        y = np.where(big, y >> np.uint64(s), y)
    return bl + y.astype(np.int64)


def _next_d_vec(rate_fp: np.ndarray, crf_eff: np.ndarray,
                params: StreamParams, d_max: int) -> np.ndarray:
    """Vectorized :func:`adder.pixel.next_d` over fixed-point rate estimates.

    Bit-identical to the scalar formula: the estimate is the dyadic rational
    rate_fp / 2**32, so floor(log2(max(1, rate * g))) reduces to integer bit
    positions of rate_fp * g.
    """
    g = np.minimum(np.int64(params.ref_interval) << crf_eff.astype(np.int64),
                   params.delta_t_max)
    v = np.maximum(rate_fp * g, np.int64(1) << _RATE_BITS)
    return np.clip(_bit_length_i64(v) - (_RATE_BITS + 1), 0, d_max)


@dataclass(frozen=True, slots=True)
class RoiRect:
    """Inclusive pixel bounds of a region of interest."""

    x0: int
    y0: int
    x1: int
    y1: int

    def validate(self, params: StreamParams) -> None:
        if not (0 <= self.x0 <= self.x1 < params.width
                and 0 <= self.y0 <= self.y1 < params.height):
            raise ValueError(f"roi {self} outside {params.width}x{params.height} plane")

    def contains(self, x: int, y: int) -> bool:
        return self.x0 <= x <= self.x1 and self.y0 <= y <= self.y1


@dataclass(frozen=True, slots=True)
class DvsEvent:
    """A polarity event from a DVS-style source (microsecond timestamps)."""

    x: int
    y: int
    p: int
    t_us: int


@dataclass(frozen=True, slots=True)
class DvsSourceConfig:
    """Log-intensity threshold and starting level for the DVS bridge."""

    theta: float = 0.2
    initial_level: int = 128

    def validate(self) -> None:
        if self.theta <= 0:
            raise ValueError("theta must be > 0")
        if not 0 <= self.initial_level <= 255:
            raise ValueError("initial_level must be in 0..255")


@dataclass(slots=True)
class TranscoderConfig:
    params: StreamParams
    d_max: int = D_MAX
    feature_interval: int = 30
    roi: RoiRect | None = None
    mode: str = "framed"  # "framed" | "dvs"

    def validate(self) -> None:
        bad = validate_params(self.params)
        if bad:
            raise ValueError(f"invalid stream params: {bad}")
        if self.feature_interval < 1:
            raise ValueError("feature_interval must be >= 1")
        if self.mode not in ("framed", "dvs"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.params.delta_t_max // max(1, self.params.ref_interval) >= 1 << 22:
            raise ValueError("delta_t_max/ref_interval ratio too large for "
                             "the fixed-point rate policy")
        if self.roi is not None:
            self.roi.validate(self.params)


class EngineTerminatedError(RuntimeError):
    pass


class Transcoder:
    """Per-pixel asynchronous integrator over a whole plane."""

    def __init__(self, config: TranscoderConfig,
                 dvs: DvsSourceConfig | None = None) -> None:
        config.validate()
        self.config = config
        self.params = config.params
        p = self.params
        shape = p.plane_shape  # (channels, height, width)
        self._scale = (1 << _Q_BITS) * p.ref_interval  # acc units scale
        self._acc = np.zeros(shape, dtype=np.int64)
        self._last_t = np.zeros(shape, dtype=np.int64)
        self._fired = np.zeros(shape, dtype=bool)
        self._cur_d = np.full(shape, INITIAL_D, dtype=np.int16)
        self._rate_fp = np.zeros(shape, dtype=np.int64)
        self._crf_eff = np.empty((p.height, p.width), dtype=np.uint8)
        self._rebuild_crf_map()
        self.clock = 0
        self.frames_in = 0
        self.terminated = False
        self._rate_seeded = False

        if config.mode == "dvs":
            self._dvs = dvs or DvsSourceConfig()
            self._dvs.validate()
            lvl = self._dvs.initial_level << _Q_BITS
            self._level_q = np.full(shape, lvl, dtype=np.int64)
            self._rate_fp[:] = (lvl << (_RATE_BITS - _Q_BITS)) // p.ref_interval
            self._px_clock = np.zeros(shape, dtype=np.int64)
            self._last_t_us = -1
            self._window_end = p.delta_t_max
            self._pending: list[Event] = []

    # -- sensitivity control ------------------------------------------------

    def effective_crf(self, x: int, y: int) -> int:
        """ROI pixels get maximum sensitivity (crf 0); others the global crf."""
        p = self.params
        if not (0 <= x < p.width and 0 <= y < p.height):
            raise ValueError(f"({x},{y}) outside {p.width}x{p.height} plane")
        return int(self._crf_eff[y, x])

    def set_crf(self, crf: int) -> None:
        """Takes effect at each pixel's next event; accumulation is kept."""
        if not 0 <= crf <= 9:
            raise ValueError("crf must be in 0..9")
        self.params = StreamParams(self.params.width, self.params.height,
                                   self.params.channels, tps=self.params.tps,
                                   ref_interval=self.params.ref_interval,
                                   delta_t_max=self.params.delta_t_max, crf=crf)
        self.config.params = self.params
        self._rebuild_crf_map()

    def set_roi(self, roi: RoiRect | None) -> None:
        if roi is not None:
            roi.validate(self.params)
        self.config.roi = roi
        self._rebuild_crf_map()

    def clear_roi(self) -> None:
        self.set_roi(None)

    def _rebuild_crf_map(self) -> None:
        self._crf_eff.fill(self.params.crf)
        roi = self.config.roi
        if roi is not None:
            self._crf_eff[roi.y0:roi.y1 + 1, roi.x0:roi.x1 + 1] = 0

    # -- framed ingestion ----------------------------------------------------

    def transcode_frame(self, frame: np.ndarray,
                        frame_index: int | None = None) -> list[Event]:
        """Integrate one frame span; returns events sorted by (t, y, x, c)."""
        if self.terminated:
            raise EngineTerminatedError("engine already flushed")
        if self.config.mode != "framed":
            raise ValueError("transcode_frame requires framed mode")
        if frame_index is None:
            frame_index = self.frames_in
        if frame_index != self.frames_in:
            raise ValueError(
                f"frame_index {frame_index} out of order (expected {self.frames_in})")
        planes = self._as_planes(frame)
        p = self.params
        span = p.ref_interval
        t0 = frame_index * span
        t_end = t0 + span

        samples = planes.astype(np.int64)
        rate_obs = (samples << _RATE_BITS) // p.ref_interval
        if self._rate_seeded:
            # one-line exponential blend, alpha = 0.5, exact in fixed point
            self._rate_fp = (self._rate_fp + rate_obs) >> 1
        else:
            self._rate_fp = rate_obs
            self._rate_seeded = True

        rate_q = samples << _Q_BITS
        events = self._advance_span(rate_q, t0, t_end)
        self.frames_in += 1
        self.clock = t_end
        events.sort(key=Event.sort_key)
        return events

    def _as_planes(self, frame: np.ndarray) -> np.ndarray:
        p = self.params
        frame = np.asarray(frame)
        if frame.ndim == 2:
            planes = frame[None, :, :]
        elif frame.ndim == 3 and frame.shape[0] == p.channels:
            planes = frame
        elif frame.ndim == 3 and frame.shape[2] == p.channels:
            planes = np.moveaxis(frame, -1, 0)
        else:
            raise ValueError(f"frame shape {frame.shape} does not match plane "
                             f"{p.plane_shape}")
        if planes.shape != p.plane_shape:
            raise ValueError(f"frame shape {frame.shape} does not match plane "
                             f"{p.plane_shape}")
        if planes.dtype != np.uint8:
            raise ValueError("frames must be uint8")
        return planes

    # -- the shared span advance ----------------------------------------------

    def _advance_span(self, rate_q: np.ndarray, t0: int, t_end: int,
                      px_clock: np.ndarray | None = None) -> list[Event]:
        """Advance pixels over [t0/px_clock, t_end) at per-pixel Q8.8 rates.

        Inactive pixels (no crossing, no cap due) take the vectorized
        accumulate; the rest run the exact scalar integrator.
        """
        p = self.params
        dtm = p.delta_t_max
        if px_clock is None:
            contrib = rate_q * (t_end - t0)
        else:
            contrib = rate_q * np.maximum(t_end - px_clock, 0)
        threshold = (np.int64(1) << self._cur_d.astype(np.int64)) * self._scale
        cross = self._acc + contrib >= threshold
        cap_due = (t_end - self._last_t) >= dtm
        active = cross | cap_due
        if px_clock is not None:
            active &= px_clock < t_end

        inactive = ~active
        self._acc[inactive] += contrib[inactive]

        events: list[Event] = []

        # Fast path: idle dark pixels (zero rate, below one unit) only need
        # D_ZERO gap caps; same result as the scalar integrator, vectorized.
        zero_cap = active & (rate_q == 0) & (self._acc < self._scale)
        if zero_cap.any():
            cs, ys, xs = np.nonzero(zero_cap)
            last = self._last_t[zero_cap]
            k = (t_end - last) // dtm
            policy = _next_d_vec(self._rate_fp[zero_cap],
                                 self._crf_eff[ys, xs], p, self.config.d_max)
            for ci, yi, xi, l0, kk in zip(cs.tolist(), ys.tolist(), xs.tolist(),
                                          last.tolist(), k.tolist()):
                base = l0
                for _ in range(kk):
                    base += dtm
                    events.append(Event(xi, yi, ci, D_ZERO, base))
            self._last_t[zero_cap] = last + k * dtm
            self._fired[zero_cap] = True
            self._cur_d[zero_cap] = policy.astype(np.int16)
            active &= ~zero_cap

        if not active.any():
            if px_clock is not None:
                np.maximum(px_clock, t_end, out=px_clock)
            return events

        ch, height, width = p.plane_shape
        scale = self._scale
        acc_a, last_a, fired_a = self._acc, self._last_t, self._fired
        curd_a, rate_a = self._cur_d, self._rate_fp
        crf_map = self._crf_eff
        for flat in np.flatnonzero(active.ravel()):
            c, rest = divmod(int(flat), height * width)
            y, x = divmod(rest, width)
            idx = (c, y, x)
            start = t0 if px_clock is None else int(px_clock[idx])
            span = t_end - start
            policy_d = next_d(Fraction(int(rate_a[idx]), 1 << _RATE_BITS),
                              int(crf_map[y, x]), p, self.config.d_max)
            state = PixelState(acc=Fraction(int(acc_a[idx]), scale),
                               last_t=int(last_a[idx]),
                               cur_d=int(curd_a[idx]),
                               fired=bool(fired_a[idx]))
            fired_evs, st = integrate(state, Fraction(int(rate_q[idx]), scale),
                                      span, lambda _acc, _d=policy_d: _d,
                                      start, dtm)
            new_acc = st.acc * scale
            # engine rates always have denominators dividing the scale
            acc_a[idx] = new_acc.numerator // new_acc.denominator
            last_a[idx] = st.last_t
            curd_a[idx] = st.cur_d
            fired_a[idx] = st.fired
            for fe in fired_evs:
                events.append(Event(x, y, c, fe.d, fe.t))
        if px_clock is not None:
            np.maximum(px_clock, t_end, out=px_clock)
        return events

    # -- DVS ingestion ---------------------------------------------------------

    def ingest_dvs(self, ev: DvsEvent) -> list[Event]:
        """Fold one DVS polarity event in; returns completed-window batches.

        The touched pixel integrates its held level up to the event tick,
        then the level steps by exp(p * theta).  Whole delta_t_max windows
        are closed by advancing every pixel to the boundary, which makes the
        window's events final and sortable; those batches are what this
        returns (usually empty, a full batch when a window closes).
        """
        if self.terminated:
            raise EngineTerminatedError("engine already flushed")
        if self.config.mode != "dvs":
            raise ValueError("ingest_dvs requires dvs mode")
        p = self.params
        if not (0 <= ev.x < p.width and 0 <= ev.y < p.height):
            raise ValueError(f"dvs event at ({ev.x},{ev.y}) outside plane")
        if ev.p not in (1, -1):
            raise ValueError(f"polarity must be +1/-1, got {ev.p}")
        if ev.t_us < self._last_t_us:
            raise ValueError(f"dvs timestamp regression: {ev.t_us} after "
                             f"{self._last_t_us}")
        self._last_t_us = ev.t_us
        t = ev.t_us * p.tps // 1_000_000

        out: list[Event] = []
        while t >= self._window_end:
            out.extend(self._close_window())

        idx = (0, ev.y, ev.x)
        if t > self._px_clock[idx]:
            self._pending.extend(
                self._advance_pixel(idx, int(self._px_clock[idx]), t))
        # zero-order hold ends here: step the level on the log-intensity grid
        level = float(self._level_q[idx]) / (1 << _Q_BITS)
        level = min(255.0, max(0.0, level * math.exp(ev.p * self._dvs.theta)))
        self._level_q[idx] = int(round(level * (1 << _Q_BITS)))
        self._rate_fp[idx] = (int(self._level_q[idx]) << (_RATE_BITS - _Q_BITS)) \
            // p.ref_interval
        self.clock = max(self.clock, t)
        return out

    def _advance_pixel(self, idx, start: int, t_end: int) -> list[Event]:
        p = self.params
        c, y, x = idx
        scale = self._scale
        policy_d = next_d(Fraction(int(self._rate_fp[idx]), 1 << _RATE_BITS),
                          int(self._crf_eff[y, x]), p, self.config.d_max)
        state = PixelState(acc=Fraction(int(self._acc[idx]), scale),
                           last_t=int(self._last_t[idx]),
                           cur_d=int(self._cur_d[idx]),
                           fired=bool(self._fired[idx]))
        fired_evs, st = integrate(state, Fraction(int(self._level_q[idx]), scale),
                                  t_end - start, lambda _a, _d=policy_d: _d,
                                  start, p.delta_t_max)
        new_acc = st.acc * scale
        self._acc[idx] = new_acc.numerator // new_acc.denominator
        self._last_t[idx] = st.last_t
        self._cur_d[idx] = st.cur_d
        self._fired[idx] = st.fired
        self._px_clock[idx] = t_end
        return [Event(x, y, c, fe.d, fe.t) for fe in fired_evs]

    def _close_window(self) -> list[Event]:
        end = self._window_end
        batch = self._advance_span(self._level_q, 0, end, px_clock=self._px_clock)
        batch.extend(self._pending)
        self._pending = []
        batch.sort(key=Event.sort_key)
        self._window_end = end + self.params.delta_t_max
        self.clock = max(self.clock, end)
        return batch

    # -- termination -------------------------------------------------------------

    def flush(self, end_t: int | None = None) -> list[Event]:
        """Advance everyone to end_t and emit each pixel's final cap.

        The returned batch completes the stream: every pixel's residual
        accumulation becomes one last event (D_ZERO when below one unit), so
        a reader reconstructs the final state exactly.
        """
        if self.terminated:
            raise EngineTerminatedError("engine already flushed")
        if end_t is None:
            end_t = self.clock
        if end_t < self.clock:
            raise ValueError(f"flush end_t {end_t} before engine clock {self.clock}")

        events: list[Event] = []
        if self.config.mode == "dvs":
            events.extend(self._pending)
            self._pending = []
            if end_t > 0:
                events.extend(self._advance_span(self._level_q, 0, end_t,
                                                 px_clock=self._px_clock))
        elif end_t > self.clock:
            # no further light after the last frame: advance at zero rate
            zero = np.zeros(self.params.plane_shape, dtype=np.int64)
            events.extend(self._advance_span(zero, self.clock, end_t))

        scale = self._scale
        ch, height, width = self.params.plane_shape
        acc = self._acc.ravel()
        last = self._last_t.ravel()
        fired = self._fired.ravel()
        t_arr = np.full(acc.shape, end_t, dtype=np.int64)
        bump = fired & (last >= end_t)
        t_arr[bump] = last[bump] + 1
        units = acc // scale
        has = units >= 1
        d_arr = np.full(acc.shape, D_ZERO, dtype=np.int64)
        d_arr[has] = _bit_length_i64(units[has]) - 1
        acc[has] -= np.int64(scale) << d_arr[has]
        lin = np.arange(acc.size)
        c_i, rest = np.divmod(lin, height * width)
        y_i, x_i = np.divmod(rest, width)
        events.extend(
            Event(x, y, c, d, t) for x, y, c, d, t in
            zip(x_i.tolist(), y_i.tolist(), c_i.tolist(), d_arr.tolist(),
                t_arr.tolist()))
        self.terminated = True
        self.clock = end_t
        events.sort(key=Event.sort_key)
        return events
