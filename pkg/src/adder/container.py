"""The ``.adder`` container: header, raw and compressed codecs, inspection.

Layout (all multi-byte fields little-endian):

    magic   5 bytes  "ADDER"
    version u8       1
    codec   u8       0 = raw, 1 = compressed
    width   u16
    height  u16
    channels u8
    tps     u32
    ref_interval u32
    delta_t_max  u32

Raw payload: fixed-width records ``x:u16 y:u16 [c:u8] d:u8 t:u32`` with the
channel byte omitted for single-channel streams.  Compressed payload: a
sequence of chunks, each spanning one delta_t_max-aligned window:
``start_t:u32 event_count:u32 payload_len:u32`` followed by the
arithmetic-coded payload.  Within a chunk, events are regrouped pixel-major
(raster order); each pixel contributes its event count, then per event the
decimation (context-modelled on the pixel's recent decimation trend) and the
tick delta since the pixel's previous event in the chunk (window start for
the first).  Both codecs are bit-exact inverses of their writers.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .coder import Decoder, Encoder, UintModel
from .events import D_MAX, D_ZERO, Event, StreamParams, validate_event, validate_params

MAGIC = b"ADDER"
VERSION = 1
CODEC_RAW = 0
CODEC_COMPRESSED = 1

_HEADER = struct.Struct("<5sBBHHBIII")
HEADER_SIZE = _HEADER.size  # 24

# Decimation-trend context buckets for the compressed codec.
_CTX_FIRST = 0
_CTX_LOWER = 1
_CTX_EQUAL = 2
_CTX_HIGHER = 3

_D_SENTINEL_CODE = D_MAX + 1  # D_ZERO is coded as 21


class ContainerError(Exception):
    """Base class for container format errors."""


class BadMagicError(ContainerError):
    pass


class UnsupportedFormatError(ContainerError):
    """Unknown version or codec id."""


class TruncatedStreamError(ContainerError):
    def __init__(self, message: str, events_recovered: int) -> None:
        super().__init__(f"{message} ({events_recovered} events recovered)")
        self.events_recovered = events_recovered


class UnsortedEventsError(ContainerError):
    pass


class WindowViolationError(ContainerError):
    pass


@dataclass(frozen=True, slots=True)
class CodedChunk:
    """One compressed window: decodes to exactly event_count events with
    timestamps in [start_t, start_t + delta_t_max)."""

    start_t: int
    event_count: int
    payload: bytes


def _gray_dtype() -> np.dtype:
    return np.dtype([("x", "<u2"), ("y", "<u2"), ("d", "u1"), ("t", "<u4")])


def _color_dtype() -> np.dtype:
    return np.dtype([("x", "<u2"), ("y", "<u2"), ("c", "u1"), ("d", "u1"), ("t", "<u4")])


def _check_sorted_and_valid(events: list[Event], params: StreamParams) -> None:
    prev = None
    for ev in events:
        validate_event(ev, params)
        key = ev.sort_key()
        if prev is not None and key < prev:
            raise UnsortedEventsError(
                f"events not sorted by (t, y, x, c) near t={ev.t}")
        prev = key


def pack_header(params: StreamParams, codec_id: int) -> bytes:
    bad = validate_params(params)
    if bad:
        raise ValueError(f"invalid stream params: {bad}")
    return _HEADER.pack(MAGIC, VERSION, codec_id, params.width, params.height,
                        params.channels, params.tps, params.ref_interval,
                        params.delta_t_max)


def unpack_header(data: bytes) -> tuple[StreamParams, int]:
    if len(data) < HEADER_SIZE:
        raise TruncatedStreamError("stream shorter than header", 0)
    magic, version, codec_id, w, h, ch, tps, ref, dtm = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise BadMagicError(f"bad magic {magic!r}")
    if version != VERSION:
        raise UnsupportedFormatError(f"unknown version {version}")
    if codec_id not in (CODEC_RAW, CODEC_COMPRESSED):
        raise UnsupportedFormatError(f"unknown codec id {codec_id}")
    # The container does not persist the transcode-side crf knob; readers see
    # the default.
    params = StreamParams(w, h, ch, tps=tps, ref_interval=ref, delta_t_max=dtm)
    bad = validate_params(params)
    if bad:
        raise UnsupportedFormatError(f"header violates stream invariants: {bad}")
    return params, codec_id


def _events_to_array(events: list[Event], channels: int) -> np.ndarray:
    dtype = _gray_dtype() if channels == 1 else _color_dtype()
    arr = np.empty(len(events), dtype=dtype)
    arr["x"] = [e.x for e in events]
    arr["y"] = [e.y for e in events]
    if channels == 3:
        arr["c"] = [e.c for e in events]
    arr["d"] = [e.d for e in events]
    arr["t"] = [e.t for e in events]
    return arr


def _events_from_array(arr: np.ndarray, channels: int) -> list[Event]:
    if channels == 3:
        return [Event(int(x), int(y), int(c), int(d), int(t))
                for x, y, c, d, t in zip(arr["x"], arr["y"], arr["c"], arr["d"], arr["t"])]
    return [Event(int(x), int(y), 0, int(d), int(t))
            for x, y, d, t in zip(arr["x"], arr["y"], arr["d"], arr["t"])]


# ---------------------------------------------------------------------------
# Compressed chunks


def _d_code(d: int) -> int:
    return _D_SENTINEL_CODE if d == D_ZERO else d


def _d_uncode(code: int) -> int:
    return D_ZERO if code == _D_SENTINEL_CODE else code


def _trend_bucket(prev_d: int | None, prev_prev_d: int | None) -> int:
    if prev_d is None:
        return _CTX_FIRST
    if prev_prev_d is None:
        return _CTX_EQUAL
    if prev_d < prev_prev_d:
        return _CTX_LOWER
    if prev_d > prev_prev_d:
        return _CTX_HIGHER
    return _CTX_EQUAL


def compress_chunk(events: list[Event], params: StreamParams,
                   start_t: int | None = None) -> CodedChunk:
    """Entropy-code one window of events (pixel-major regrouping)."""
    dtm = params.delta_t_max
    if start_t is None:
        start_t = (events[0].t // dtm) * dtm if events else 0
    if not events:
        return CodedChunk(start_t, 0, b"")
    for ev in events:
        if not start_t <= ev.t < start_t + dtm:
            raise WindowViolationError(
                f"event t={ev.t} outside window [{start_t}, {start_t + dtm})")

    w, h, ch = params.width, params.height, params.channels
    # Pixel-major, time within pixel: stable sort on the linear raster index.
    lin = np.array([(e.y * w + e.x) * ch + e.c for e in events], dtype=np.int64)
    order = np.argsort(lin, kind="stable")
    counts = np.bincount(lin, minlength=w * h * ch)

    enc = Encoder()
    n_model = UintModel()
    dt_model = UintModel()
    d_models = [UintModel() for _ in range(4)]
    pos = 0
    for pix in range(w * h * ch):
        n = int(counts[pix])
        enc.encode_uint(n_model, n)
        prev_d: int | None = None
        prev_prev_d: int | None = None
        prev_t = start_t
        for _ in range(n):
            ev = events[order[pos]]
            pos += 1
            bucket = _trend_bucket(prev_d, prev_prev_d)
            enc.encode_uint(d_models[bucket], _d_code(ev.d))
            enc.encode_uint(dt_model, ev.t - prev_t)
            prev_prev_d, prev_d = prev_d, _d_code(ev.d)
            prev_t = ev.t
    return CodedChunk(start_t, len(events), enc.finish())


def decompress_chunk(chunk: CodedChunk, params: StreamParams) -> list[Event]:
    """Bit-exact inverse of :func:`compress_chunk` (canonical time order)."""
    if chunk.event_count == 0:
        return []
    w, h, ch = params.width, params.height, params.channels
    dec = Decoder(chunk.payload)
    n_model = UintModel()
    dt_model = UintModel()
    d_models = [UintModel() for _ in range(4)]
    out: list[Event] = []
    for pix in range(w * h * ch):
        n = dec.decode_uint(n_model)
        c = pix % ch
        x = (pix // ch) % w
        y = pix // (ch * w)
        prev_d: int | None = None
        prev_prev_d: int | None = None
        prev_t = chunk.start_t
        for _ in range(n):
            bucket = _trend_bucket(prev_d, prev_prev_d)
            d_code = dec.decode_uint(d_models[bucket])
            dt = dec.decode_uint(dt_model)
            t = prev_t + dt
            out.append(Event(x, y, c, _d_uncode(d_code), t))
            prev_prev_d, prev_d = prev_d, d_code
            prev_t = t
    if len(out) != chunk.event_count:
        raise TruncatedStreamError("chunk decoded to wrong event count", len(out))
    out.sort(key=Event.sort_key)
    return out


# ---------------------------------------------------------------------------
# Whole streams


def write_stream(params: StreamParams, events: list[Event], codec_id: int = CODEC_RAW) -> bytes:
    """Serialize a sorted event sequence; raises before emitting any bytes."""
    if codec_id not in (CODEC_RAW, CODEC_COMPRESSED):
        raise UnsupportedFormatError(f"unknown codec id {codec_id}")
    _check_sorted_and_valid(events, params)
    header = pack_header(params, codec_id)
    if codec_id == CODEC_RAW:
        return header + _events_to_array(events, params.channels).tobytes()

    parts = [header]
    dtm = params.delta_t_max
    i = 0
    while i < len(events):
        w_start = (events[i].t // dtm) * dtm
        j = i
        while j < len(events) and events[j].t < w_start + dtm:
            j += 1
        chunk = compress_chunk(events[i:j], params, w_start)
        parts.append(struct.pack("<III", chunk.start_t, chunk.event_count,
                                 len(chunk.payload)))
        parts.append(chunk.payload)
        i = j
    return b"".join(parts)


def read_stream(data: bytes) -> tuple[StreamParams, list[Event]]:
    """Exact inverse of :func:`write_stream` for both codecs."""
    params, codec_id = unpack_header(data)
    body = data[HEADER_SIZE:]
    if codec_id == CODEC_RAW:
        dtype = _gray_dtype() if params.channels == 1 else _color_dtype()
        n, rem = divmod(len(body), dtype.itemsize)
        arr = np.frombuffer(body[:n * dtype.itemsize], dtype=dtype)
        events = _events_from_array(arr, params.channels)
        if rem:
            raise TruncatedStreamError("raw stream truncated mid-record", n)
        return params, events

    events: list[Event] = []
    pos = 0
    while pos < len(body):
        if pos + 12 > len(body):
            raise TruncatedStreamError("compressed stream truncated mid-chunk-header",
                                       len(events))
        start_t, count, plen = struct.unpack_from("<III", body, pos)
        pos += 12
        if pos + plen > len(body):
            raise TruncatedStreamError("compressed stream truncated mid-payload",
                                       len(events))
        chunk = CodedChunk(start_t, count, body[pos:pos + plen])
        pos += plen
        events.extend(decompress_chunk(chunk, params))
    return params, events


# ---------------------------------------------------------------------------
# Inspection


@dataclass(frozen=True, slots=True)
class StreamInfo:
    params: StreamParams
    codec_id: int
    event_count: int
    duration_ticks: int
    duration_seconds: float
    events_per_second: float
    size_bytes: int
    raw_equivalent_bytes: int
    compression_ratio: float | None

    def format_report(self) -> str:
        p = self.params
        codec = "raw" if self.codec_id == CODEC_RAW else "compressed"
        lines = [
            f"plane:        {p.width}x{p.height}, {p.channels} channel(s)",
            f"codec:        {codec}",
            f"tps:          {p.tps}",
            f"ref_interval: {p.ref_interval}",
            f"delta_t_max:  {p.delta_t_max}",
            f"events:       {self.event_count}",
            f"duration:     {self.duration_ticks} ticks ({self.duration_seconds:.3f} s)",
            f"event rate:   {self.events_per_second:.1f}/s",
            f"size:         {self.size_bytes} bytes",
        ]
        if self.compression_ratio is not None:
            lines.append(f"compressed/raw: {self.compression_ratio:.3f}")
        return "\n".join(lines)


def inspect(data: bytes) -> StreamInfo:
    """Decode and summarize a stream (propagates read errors)."""
    params, codec_id = unpack_header(data)
    _, events = read_stream(data)
    n = len(events)
    if n:
        tmin = min(e.t for e in events)
        tmax = max(e.t for e in events)
        dur = tmax - tmin
    else:
        dur = 0
    dur_s = dur / params.tps
    rate = n / dur_s if dur_s > 0 else 0.0
    rec = 9 if params.channels == 1 else 10
    raw_eq = HEADER_SIZE + n * rec
    ratio = len(data) / raw_eq if codec_id == CODEC_COMPRESSED else None
    return StreamInfo(params, codec_id, n, dur, dur_s, rate, len(data),
                      raw_eq, ratio)
