"""Binary PGM (P5) and PPM (P6) reading and writing, maxval 255."""

from __future__ import annotations

import re
from pathlib import Path

import numpy as np

_TOKEN = re.compile(rb"(?:\s|#[^\n]*\n)*(\S+)")


def _read_tokens(data: bytes, count: int) -> tuple[list[bytes], int]:
    """First `count` whitespace/comment-delimited tokens and the offset of the
    byte after the single whitespace that terminates the last one."""
    tokens = []
    pos = 0
    for _ in range(count):
        m = _TOKEN.match(data, pos)
        if not m:
            raise ValueError("malformed netpbm header")
        tokens.append(m.group(1))
        pos = m.end()
    return tokens, pos + 1  # skip exactly one whitespace byte after maxval


def read_netpbm(path: str | Path) -> np.ndarray:
    """Load a P5 PGM as (h, w) u8 or a P6 PPM as (h, w, 3) u8."""
    data = Path(path).read_bytes()
    (magic, w_tok, h_tok, maxval_tok), offset = _read_tokens(data, 4)
    if magic not in (b"P5", b"P6"):
        raise ValueError(f"unsupported netpbm magic {magic!r}")
    w, h, maxval = int(w_tok), int(h_tok), int(maxval_tok)
    if maxval != 255:
        raise ValueError("only maxval 255 is supported")
    depth = 1 if magic == b"P5" else 3
    need = w * h * depth
    raster = data[offset:offset + need]
    if len(raster) < need:
        raise ValueError(f"{path}: truncated raster")
    arr = np.frombuffer(raster, dtype=np.uint8)
    return arr.reshape((h, w) if depth == 1 else (h, w, 3)).copy()


def write_netpbm(path: str | Path, image: np.ndarray) -> None:
    """Write (h, w) u8 as P5 or (h, w, 3) u8 as P6."""
    image = np.asarray(image, dtype=np.uint8)
    if image.ndim == 2:
        magic = b"P5"
        h, w = image.shape
    elif image.ndim == 3 and image.shape[2] == 3:
        magic = b"P6"
        h, w = image.shape[:2]
    else:
        raise ValueError(f"unsupported image shape {image.shape}")
    header = b"%s\n%d %d\n255\n" % (magic, w, h)
    Path(path).write_bytes(header + image.tobytes())
