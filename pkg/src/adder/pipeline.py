"""Live transcode pipeline: source -> transcoder -> {compressor, preview, vision}.

A session runs three long-lived workers:

* the transcoder thread owns the engine, pulls frames (or DVS events) from
  the source, applies control commands between integration batches, feeds
  the compressor queue, and publishes preview snapshots;
* the compressor thread owns the output encoder: it buckets incoming event
  batches into delta_t_max-aligned windows and writes them to the ``.adder``
  file as soon as the transcoder clock has safely passed a window;
* the hub thread runs corner-cluster detection on preview snapshots at the
  configured cadence and keeps the latest boxes for the stats feed.

All cross-worker traffic is queues plus two depth-1 latest-wins slots, so a
slow (or absent) preview consumer never stalls the transcoder, and the
compressor applies backpressure only through its bounded queue.
"""

from __future__ import annotations

import csv
import io
import os
import queue
import struct
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .container import (
    CODEC_COMPRESSED,
    CODEC_RAW,
    _events_to_array,
    compress_chunk,
    pack_header,
)
from .events import Event, StreamParams, validate_params
from .reconstruct import Canvas
from .sources import FrameSource, open_source, read_dvs_csv
from .transcode import DvsSourceConfig, RoiRect, Transcoder, TranscoderConfig
from .vision import ClusterConfig, clusters_to_boxes, dbscan, fast_detect

COMPRESSOR_QUEUE_CHUNKS = 64
PUT_TIMEOUT_S = 2.0


class SessionClosedError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# Commands


@dataclass(frozen=True, slots=True)
class SetCrf:
    value: int


@dataclass(frozen=True, slots=True)
class SetRoi:
    x0: int
    y0: int
    x1: int
    y1: int


@dataclass(frozen=True, slots=True)
class ClearRoi:
    pass


@dataclass(frozen=True, slots=True)
class ToggleFeatures:
    on: bool


@dataclass(frozen=True, slots=True)
class Stop:
    pass


@dataclass(frozen=True, slots=True)
class CommandAck:
    command: object
    apply_by_tick: int


# ---------------------------------------------------------------------------
# Session plumbing


class LatestSlot:
    """Depth-1 latest-wins frame slot; producers never block."""

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self._item = None
        self._fresh = False
        self.dropped = 0

    def put(self, item) -> None:
        with self._lock:
            if self._fresh:
                self.dropped += 1
            self._item = item
            self._fresh = True

    def get(self):
        """Newest unseen item, or None; an item is observed at most once."""
        with self._lock:
            if not self._fresh:
                return None
            self._fresh = False
            return self._item


@dataclass(frozen=True, slots=True)
class StatsSnapshot:
    events_per_sec: float
    transcode_fps: float
    compressed_bytes_per_sec: float
    compressor_queue_depth: int
    dropped_previews: int
    latest_boxes: tuple
    events_total: int
    frames_total: int
    clock: int


@dataclass(slots=True)
class SessionConfig:
    source: str
    output: str | None = None
    codec_id: int = CODEC_RAW
    crf: int = 3
    dtm_multiple: int = 30
    ref_interval: int = 255
    roi: RoiRect | None = None
    features_enabled: bool = False
    preview_rate_cap: int = 30
    feature_interval: int = 30
    cluster: ClusterConfig = field(default_factory=ClusterConfig)
    fast_threshold: int = 30
    dvs: DvsSourceConfig = field(default_factory=DvsSourceConfig)
    dvs_plane: tuple[int, int] | None = None  # (width, height) for CSV input
    realtime: bool = False  # pace frames to the source fps


class _CompressorWorker(threading.Thread):
    """Owns the output stream; fed event batches through a bounded queue."""

    def __init__(self, params: StreamParams, path: str | None, codec_id: int):
        super().__init__(name="adder-compressor", daemon=True)
        self.params = params
        self.path = path
        self.codec_id = codec_id
        self.queue: queue.Queue = queue.Queue(maxsize=COMPRESSOR_QUEUE_CHUNKS)
        self.events_received = 0
        self.bytes_written = 0
        self.error: BaseException | None = None
        self._buckets: dict[int, list[Event]] = {}
        self._written_windows: set[int] = set()
        self._fh = None

    def run(self) -> None:
        try:
            if self.path is not None:
                self._fh = open(self.path, "wb")
                header = pack_header(self.params, self.codec_id)
                self._fh.write(header)
                self.bytes_written += len(header)
            while True:
                item = self.queue.get()
                if item is None:
                    self._finalize()
                    return
                events, watermark = item
                self._ingest(events, watermark)
        except BaseException as exc:  # surfaced to the session
            self.error = exc

    def _ingest(self, events: list[Event], watermark: int) -> None:
        dtm = self.params.delta_t_max
        self.events_received += len(events)
        for ev in events:
            w = (ev.t // dtm) * dtm
            if w in self._written_windows:
                raise RuntimeError(
                    f"event t={ev.t} arrived after window {w} was finalized")
            self._buckets.setdefault(w, []).append(ev)
        # A window is safe once the engine clock passed its end plus one
        # frame span (bumped stamps can trail the span end slightly).
        safe_before = watermark - self.params.ref_interval
        for w in sorted(self._buckets):
            if w + dtm <= safe_before:
                self._write_window(w)
            else:
                break

    def _write_window(self, w: int) -> None:
        events = self._buckets.pop(w)
        events.sort(key=Event.sort_key)
        if self._fh is not None:
            self.bytes_written += self._encode(events, w)
        self._written_windows.add(w)

    def _encode(self, events: list[Event], w: int) -> int:
        if self.codec_id == CODEC_RAW:
            blob = _events_to_array(events, self.params.channels).tobytes()
        else:
            chunk = compress_chunk(events, self.params, w)
            blob = struct.pack("<III", chunk.start_t, chunk.event_count,
                               len(chunk.payload)) + chunk.payload
        self._fh.write(blob)
        return len(blob)

    def _finalize(self) -> None:
        for w in sorted(self._buckets):
            self._write_window(w)
        if self._fh is not None:
            self._fh.close()
            self._fh = None


class Session:
    """A live transcode run; constructed via :func:`start_session`."""

    def __init__(self, cfg: SessionConfig) -> None:
        self.cfg = cfg
        self._mode = "framed"
        self._source: FrameSource | None = None
        self._dvs_events = None
        if cfg.source.endswith(".csv"):
            self._mode = "dvs"
            if cfg.dvs_plane is None:
                raise ValueError("dvs csv input needs dvs_plane=(width, height)")
            if not os.path.exists(cfg.source):
                raise FileNotFoundError(f"no such file: {cfg.source}")
            w, h = cfg.dvs_plane
            fps = 30
            self.params = StreamParams(
                w, h, 1, tps=cfg.ref_interval * fps,
                ref_interval=cfg.ref_interval,
                delta_t_max=cfg.ref_interval * cfg.dtm_multiple, crf=cfg.crf)
        else:
            self._source = open_source(cfg.source)
            self.params = self._source.stream_params(
                ref_interval=cfg.ref_interval, dtm_multiple=cfg.dtm_multiple,
                crf=cfg.crf)
        bad = validate_params(self.params)
        if bad:
            raise ValueError(f"invalid stream params: {bad}")
        if cfg.output is not None:
            parent = Path(cfg.output).resolve().parent
            if not parent.is_dir():
                raise FileNotFoundError(f"output directory {parent} missing")

        self.engine = Transcoder(
            TranscoderConfig(params=self.params, roi=cfg.roi,
                             feature_interval=cfg.feature_interval,
                             mode=self._mode),
            dvs=cfg.dvs if self._mode == "dvs" else None)

        self.preview_slot = LatestSlot()
        self._vision_slot = LatestSlot()
        self._commands: queue.Queue = queue.Queue()
        self._stop_requested = threading.Event()
        self.finished = threading.Event()
        self.features_enabled = cfg.features_enabled
        self.latest_boxes: tuple = ()
        self.error: BaseException | None = None
        self.frame_times: list[float] = []
        self.events_total = 0
        self.frames_total = 0
        self._started = time.monotonic()
        self._stats_mark = (self._started, 0, 0, 0)
        self._canvas = Canvas(self.params)

        self._compressor = _CompressorWorker(
            self.params, cfg.output, cfg.codec_id)
        self._transcoder = threading.Thread(
            target=self._run_transcoder, name="adder-transcoder", daemon=True)
        self._hub = threading.Thread(
            target=self._run_hub, name="adder-hub", daemon=True)

    # -- public API --------------------------------------------------------

    @property
    def alive(self) -> bool:
        return not self.finished.is_set()

    def submit_command(self, cmd) -> CommandAck:
        if not self.alive:
            raise SessionClosedError("session is not live")
        if isinstance(cmd, SetCrf) and not 0 <= cmd.value <= 9:
            raise ValueError("crf must be in 0..9")
        if isinstance(cmd, SetRoi):
            RoiRect(cmd.x0, cmd.y0, cmd.x1, cmd.y1).validate(self.params)
        if not isinstance(cmd, (SetCrf, SetRoi, ClearRoi, ToggleFeatures, Stop)):
            raise ValueError(f"unknown command {cmd!r}")
        self._commands.put(cmd)
        if isinstance(cmd, Stop):
            self._stop_requested.set()
        horizon = (self.params.ref_interval if self._mode == "framed"
                   else self.params.delta_t_max)
        return CommandAck(cmd, self.engine.clock + horizon)

    def latest_preview(self):
        return self.preview_slot.get()

    def stats(self) -> StatsSnapshot:
        """Counters plus rates over the window since the previous stats() call."""
        now = time.monotonic()
        t0, ev0, fr0, by0 = self._stats_mark
        ev, fr, by = (self.events_total, self.frames_total,
                      self._compressor.bytes_written)
        dt = max(now - t0, 1e-9)
        self._stats_mark = (now, ev, fr, by)
        return StatsSnapshot(
            events_per_sec=(ev - ev0) / dt,
            transcode_fps=(fr - fr0) / dt,
            compressed_bytes_per_sec=(by - by0) / dt,
            compressor_queue_depth=self._compressor.queue.qsize(),
            dropped_previews=self.preview_slot.dropped,
            latest_boxes=tuple(self.latest_boxes),
            events_total=ev,
            frames_total=fr,
            clock=self.engine.clock,
        )

    def wait(self, timeout: float | None = None) -> bool:
        done = self.finished.wait(timeout)
        if done:
            self._transcoder.join(timeout=5)
            self._compressor.join(timeout=5)
            self._hub.join(timeout=5)
            if self.error is None and self._compressor.error is not None:
                self.error = self._compressor.error
        return done

    def stop(self, timeout: float = 10.0) -> None:
        if self.alive:
            self.submit_command(Stop())
        if not self.wait(timeout):
            raise TimeoutError("session did not stop in time")
        if self.error is not None:
            raise self.error

    # -- workers -------------------------------------------------------------

    def _start(self) -> None:
        self._compressor.start()
        self._hub.start()
        self._transcoder.start()

    def _apply_pending_commands(self) -> None:
        while True:
            try:
                cmd = self._commands.get_nowait()
            except queue.Empty:
                return
            if isinstance(cmd, SetCrf):
                self.engine.set_crf(cmd.value)
            elif isinstance(cmd, SetRoi):
                self.engine.set_roi(RoiRect(cmd.x0, cmd.y0, cmd.x1, cmd.y1))
            elif isinstance(cmd, ClearRoi):
                self.engine.clear_roi()
            elif isinstance(cmd, ToggleFeatures):
                self.features_enabled = cmd.on
            elif isinstance(cmd, Stop):
                self._stop_requested.set()

    def _push_batch(self, events: list[Event], watermark: int) -> None:
        self.events_total += len(events)
        while True:
            if self._compressor.error is not None:
                raise RuntimeError("compressor failed") from self._compressor.error
            try:
                self._compressor.queue.put((events, watermark),
                                           timeout=PUT_TIMEOUT_S)
                return
            except queue.Full:
                continue

    def _publish_preview(self, tick: int, last_push: int) -> int:
        cap = max(1, self.cfg.preview_rate_cap)
        min_gap = max(1, self.params.tps // cap)
        if tick - last_push < min_gap:
            return last_push
        frame = self._canvas.frame_at()
        self.preview_slot.put((frame, tick))
        cadence = max(self.params.tps // max(1, self.cfg.feature_interval),
                      self.params.ref_interval)
        if self.features_enabled and tick // cadence > last_push // cadence:
            self._vision_slot.put((frame, tick))
        return tick

    def _run_transcoder(self) -> None:
        try:
            last_push = -10**18
            if self._mode == "framed":
                paced = self.cfg.realtime
                frame_span_s = 1.0 / max(1, self._source.fps)
                for frame in self._source:
                    t0 = time.perf_counter()
                    self._apply_pending_commands()
                    if self._stop_requested.is_set():
                        break
                    events = self.engine.transcode_frame(frame)
                    self._canvas.apply_batch(events)
                    self._push_batch(events, self.engine.clock)
                    self.frames_total += 1
                    last_push = self._publish_preview(self.engine.clock, last_push)
                    dt = time.perf_counter() - t0
                    self.frame_times.append(dt)
                    if paced and dt < frame_span_s:
                        time.sleep(frame_span_s - dt)
            else:
                self._dvs_events = read_dvs_csv(self.cfg.source)
                for ev in self._dvs_events:
                    t0 = time.perf_counter()
                    self._apply_pending_commands()
                    if self._stop_requested.is_set():
                        break
                    events = self.engine.ingest_dvs(ev)
                    if events:
                        self._canvas.apply_batch(events)
                        self._push_batch(events, self.engine.clock)
                        self.frame_times.append(time.perf_counter() - t0)
                    last_push = self._publish_preview(self.engine.clock, last_push)
            self._apply_pending_commands()
            final = self.engine.flush()
            self._canvas.apply_batch(final)
            self._push_batch(final, self.engine.clock + self.params.delta_t_max)
            self.preview_slot.put((self._canvas.frame_at(), self.engine.clock))
        except BaseException as exc:
            self.error = exc
        finally:
            self._compressor.queue.put(None)
            self._compressor.join()
            self.finished.set()

    def _run_hub(self) -> None:
        while not self.finished.is_set() or self._vision_slot._fresh:
            item = self._vision_slot.get()
            if item is None:
                time.sleep(0.005)
                continue
            frame, tick = item
            gray = frame if frame.ndim == 2 else frame[:, :, 0]
            try:
                keypoints = fast_detect(gray, self.cfg.fast_threshold)
                labels = dbscan(keypoints, self.cfg.cluster.eps,
                                self.cfg.cluster.min_pts)
                boxes = clusters_to_boxes(keypoints, labels, self.cfg.cluster)
                self.latest_boxes = tuple(b.bbox for b in boxes)
            except ValueError:
                self.latest_boxes = ()


def start_session(cfg: SessionConfig) -> Session:
    """Validate the config, open the source, spawn the three workers."""
    session = Session(cfg)
    session._start()
    return session


# ---------------------------------------------------------------------------
# Benchmarks


@dataclass(frozen=True, slots=True)
class BenchRow:
    label: str
    source: str
    codec: str
    frames: int
    events: int
    wall_s: float
    fps: float
    mean_batch_ms: float
    median_batch_ms: float
    max_batch_ms: float
    output_bytes: int


def bench_cell(label: str, source: str, codec_id: int | None,
               out_dir: str | None = None, crf: int = 3) -> BenchRow:
    """Transcode one source to completion and measure the transcoder loop."""
    output = None
    if codec_id is not None:
        base = Path(out_dir) if out_dir else Path(".")
        output = str(base / f"bench_{label}.adder")
    cfg = SessionConfig(source=source, output=output,
                        codec_id=codec_id if codec_id is not None else CODEC_RAW,
                        crf=crf)
    session = start_session(cfg)
    t0 = time.perf_counter()
    session.wait()
    wall = time.perf_counter() - t0
    if session.error is not None:
        raise session.error
    times = np.array(session.frame_times or [0.0])
    size = os.path.getsize(output) if output else 0
    codec = {None: "none", CODEC_RAW: "raw", CODEC_COMPRESSED: "compressed"}[codec_id]
    # fps over the transcode loop itself; wall time additionally pays the
    # final flush (one event per pixel) and file finalization
    loop_s = float(times.sum())
    return BenchRow(
        label=label, source=source, codec=codec,
        frames=session.frames_total, events=session.events_total,
        wall_s=wall, fps=session.frames_total / loop_s if loop_s > 0 else 0.0,
        mean_batch_ms=float(times.mean() * 1e3),
        median_batch_ms=float(np.median(times) * 1e3),
        max_batch_ms=float(times.max() * 1e3),
        output_bytes=size)


def bench_matrix(cells: list[tuple[str, str, int | None]],
                 out_dir: str | None = None) -> list[BenchRow]:
    return [bench_cell(label, source, codec, out_dir) for label, source, codec in cells]


def bench_csv(rows: list[BenchRow]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(["label", "source", "codec", "frames", "events", "wall_s",
                     "fps", "mean_batch_ms", "median_batch_ms", "max_batch_ms",
                     "output_bytes"])
    for r in rows:
        writer.writerow([r.label, r.source, r.codec, r.frames, r.events,
                         f"{r.wall_s:.4f}", f"{r.fps:.2f}",
                         f"{r.mean_batch_ms:.3f}", f"{r.median_batch_ms:.3f}",
                         f"{r.max_batch_ms:.3f}", r.output_bytes])
    return buf.getvalue()


def bench_table(rows: list[BenchRow]) -> str:
    head = f"{'label':<18} {'codec':<11} {'frames':>7} {'events':>10} " \
           f"{'fps':>8} {'med ms':>8} {'max ms':>8} {'bytes':>10}"
    lines = [head, "-" * len(head)]
    for r in rows:
        lines.append(f"{r.label:<18} {r.codec:<11} {r.frames:>7} {r.events:>10} "
                     f"{r.fps:>8.2f} {r.median_batch_ms:>8.3f} "
                     f"{r.max_batch_ms:>8.3f} {r.output_bytes:>10}")
    return "\n".join(lines)
