"""Framed and DVS input sources.

Framed sources yield uint8 channel planes shaped (channels, height, width):

* Y4M files, mono or 4:2:0 (chroma planes are nearest-upsampled to full
  resolution; no colorspace conversion happens here).
* Numbered PGM/PPM sequences, given as a directory or a glob pattern.
* Synthetic clips addressed by URI, e.g.
  ``synth://square?seed=7&w=64&h=64&frames=120`` with patterns ``square``
  (bouncing block), ``gradient`` (scrolling ramp), ``constant`` and ``noise``.

DVS input is a CSV of ``t_us,x,y,p`` lines with p in {1,-1}.
"""

from __future__ import annotations

import glob
import io
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator
from urllib.parse import parse_qs, urlparse

import numpy as np

from .events import StreamParams
from .imagefiles import read_netpbm
from .transcode import DvsEvent

DEFAULT_REF_INTERVAL = 255
DEFAULT_DTM_MULTIPLE = 30


@dataclass(frozen=True, slots=True)
class FrameSource:
    """A framed clip: geometry, nominal rate, and a plane-batch iterator."""

    width: int
    height: int
    channels: int
    fps: int
    frames: object  # callable returning an iterator of (c, h, w) uint8

    def __iter__(self) -> Iterator[np.ndarray]:
        return self.frames()

    def stream_params(self, ref_interval: int = DEFAULT_REF_INTERVAL,
                      dtm_multiple: int = DEFAULT_DTM_MULTIPLE,
                      crf: int = 3) -> StreamParams:
        return StreamParams(self.width, self.height, self.channels,
                            tps=ref_interval * self.fps,
                            ref_interval=ref_interval,
                            delta_t_max=ref_interval * dtm_multiple,
                            crf=crf)


def open_source(uri: str) -> FrameSource:
    """Dispatch a source string to the right reader."""
    if uri.startswith("synth://"):
        return synth_source(uri)
    path = Path(uri)
    if path.suffix.lower() == ".y4m":
        if not path.exists():
            raise FileNotFoundError(f"no such file: {uri}")
        return y4m_source(path)
    if path.is_dir() or any(ch in uri for ch in "*?["):
        return sequence_source(uri)
    if path.suffix.lower() in (".pgm", ".ppm"):
        return sequence_source(uri)
    raise ValueError(f"unrecognized source: {uri}")


# ---------------------------------------------------------------------------
# Y4M


def y4m_source(path: str | Path) -> FrameSource:
    data = Path(path).read_bytes()
    nl = data.index(b"\n")
    tokens = data[:nl].split(b" ")
    if tokens[0] != b"YUV4MPEG2":
        raise ValueError(f"{path}: not a Y4M file")
    width = height = None
    fps_num, fps_den = 30, 1
    colorspace = b"420"
    for tok in tokens[1:]:
        if not tok:
            continue
        tag, val = tok[:1], tok[1:]
        if tag == b"W":
            width = int(val)
        elif tag == b"H":
            height = int(val)
        elif tag == b"F":
            num, den = val.split(b":")
            fps_num, fps_den = int(num), int(den)
        elif tag == b"C":
            colorspace = val
    if width is None or height is None:
        raise ValueError(f"{path}: missing geometry in Y4M header")
    if colorspace.startswith(b"mono"):
        channels = 1
    elif colorspace.startswith(b"420"):
        channels = 3
        if width % 2 or height % 2:
            raise ValueError(f"{path}: 4:2:0 needs even dimensions")
    else:
        raise ValueError(f"{path}: unsupported colorspace C{colorspace.decode()}")
    fps = max(1, round(fps_num / fps_den))

    body = data[nl + 1:]

    def frames() -> Iterator[np.ndarray]:
        pos = 0
        y_size = width * height
        c_size = (width // 2) * (height // 2) if channels == 3 else 0
        while pos < len(body):
            nl2 = body.index(b"\n", pos)
            if not body[pos:nl2].startswith(b"FRAME"):
                raise ValueError(f"{path}: bad frame marker")
            pos = nl2 + 1
            need = y_size + 2 * c_size
            raw = body[pos:pos + need]
            if len(raw) < need:
                raise ValueError(f"{path}: truncated frame")
            pos += need
            y = np.frombuffer(raw[:y_size], dtype=np.uint8).reshape(height, width)
            if channels == 1:
                yield y[None, :, :].copy()
                continue
            u = np.frombuffer(raw[y_size:y_size + c_size], dtype=np.uint8)
            v = np.frombuffer(raw[y_size + c_size:], dtype=np.uint8)
            u = u.reshape(height // 2, width // 2).repeat(2, 0).repeat(2, 1)
            v = v.reshape(height // 2, width // 2).repeat(2, 0).repeat(2, 1)
            yield np.stack([y, u, v])

    return FrameSource(width, height, channels, fps, frames)


def write_y4m(path: str | Path, planes_iter, width: int, height: int,
              channels: int, fps: int = 30) -> None:
    """Small Y4M writer (mono or 4:2:0 by 2x2 mean) for tests and demos."""
    with open(path, "wb") as fh:
        cs = b"mono" if channels == 1 else b"420jpeg"
        fh.write(b"YUV4MPEG2 W%d H%d F%d:1 Ip A1:1 C%s\n" % (width, height, fps, cs))
        for planes in planes_iter:
            fh.write(b"FRAME\n")
            fh.write(planes[0].tobytes())
            if channels == 3:
                for ci in (1, 2):
                    p = planes[ci].astype(np.uint16)
                    sub = (p[0::2, 0::2] + p[0::2, 1::2] + p[1::2, 0::2]
                           + p[1::2, 1::2] + 2) // 4
                    fh.write(sub.astype(np.uint8).tobytes())


# ---------------------------------------------------------------------------
# Numbered image sequences


def sequence_source(pattern: str) -> FrameSource:
    if os.path.isdir(pattern):
        paths = sorted(glob.glob(os.path.join(pattern, "*.pgm"))
                       + glob.glob(os.path.join(pattern, "*.ppm")))
    else:
        paths = sorted(glob.glob(pattern))
    if not paths:
        raise FileNotFoundError(f"no frames match {pattern!r}")
    first = read_netpbm(paths[0])
    channels = 1 if first.ndim == 2 else 3
    height, width = first.shape[:2]

    def frames() -> Iterator[np.ndarray]:
        for p in paths:
            img = read_netpbm(p)
            if img.shape[:2] != (height, width):
                raise ValueError(f"{p}: frame size changed mid-sequence")
            yield img[None, :, :] if channels == 1 else np.moveaxis(img, -1, 0)

    return FrameSource(width, height, channels, 30, frames)


# ---------------------------------------------------------------------------
# Synthetic clips


def _qget(q, key, default, cast=int):
    if key in q:
        return cast(q[key][0])
    return default


def synth_source(uri: str) -> FrameSource:
    parsed = urlparse(uri)
    pattern = parsed.netloc or parsed.path.strip("/")
    q = parse_qs(parsed.query)
    w = _qget(q, "w", 64)
    h = _qget(q, "h", 64)
    n = _qget(q, "frames", 120)
    fps = _qget(q, "fps", 30)
    seed = _qget(q, "seed", 0)
    channels = _qget(q, "c", 1)
    if channels not in (1, 3):
        raise ValueError("synth channels must be 1 or 3")

    if pattern == "constant":
        value = _qget(q, "value", 128)

        def gen():
            frame = np.full((channels, h, w), value, dtype=np.uint8)
            for _ in range(n):
                yield frame.copy()

    elif pattern == "gradient":
        step = _qget(q, "step", 2)

        def gen():
            ramp = (np.arange(w) * 255 // max(1, w - 1)).astype(np.int64)
            for k in range(n):
                row = ((ramp + k * step) % 256).astype(np.uint8)
                plane = np.tile(row, (h, 1))
                yield _colorize(plane, channels)

    elif pattern == "noise":
        lo = _qget(q, "lo", 0)
        hi = _qget(q, "hi", 255)

        def gen():
            rng = np.random.RandomState(seed)
            for _ in range(n):
                yield rng.randint(lo, hi + 1,
                                  size=(channels, h, w)).astype(np.uint8)

    elif pattern == "square":
        size = _qget(q, "size", max(4, w // 4))
        fg = _qget(q, "fg", 255)
        bg = _qget(q, "bg", 0)
        speed = _qget(q, "speed", 1)
        x0 = _qget(q, "x0", -1)
        y0 = _qget(q, "y0", -1)

        def gen():
            rng = np.random.RandomState(seed)
            x = int(rng.randint(0, max(1, w - size))) if x0 < 0 else x0
            y = int(rng.randint(0, max(1, h - size))) if y0 < 0 else y0
            dx = dy = speed
            for _ in range(n):
                plane = np.full((h, w), bg, dtype=np.uint8)
                plane[y:y + size, x:x + size] = fg
                yield _colorize(plane, channels)
                x += dx
                y += dy
                if x < 0 or x + size > w:
                    dx = -dx
                    x += 2 * dx
                if y < 0 or y + size > h:
                    dy = -dy
                    y += 2 * dy

    else:
        raise ValueError(f"unknown synth pattern {pattern!r}")

    return FrameSource(w, h, channels, fps, gen)


def _colorize(plane: np.ndarray, channels: int) -> np.ndarray:
    if channels == 1:
        return plane[None, :, :]
    # cheap distinct channels: identity, roll, inversion
    return np.stack([plane, np.roll(plane, plane.shape[1] // 3, axis=1),
                     255 - plane])


# ---------------------------------------------------------------------------
# DVS CSV


def read_dvs_csv(path_or_file) -> Iterator[DvsEvent]:
    """Yield DvsEvent from ``t_us,x,y,p`` lines; blank and # lines skipped."""
    if hasattr(path_or_file, "read"):
        fh = path_or_file
        close = False
    else:
        fh = open(path_or_file, "r")
        close = True
    try:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split(",")
            if len(parts) != 4:
                raise ValueError(f"line {lineno}: expected t_us,x,y,p")
            t_us, x, y, p = (int(v) for v in parts)
            if p not in (1, -1):
                raise ValueError(f"line {lineno}: polarity must be 1 or -1")
            yield DvsEvent(x, y, p, t_us)
    finally:
        if close:
            fh.close()
