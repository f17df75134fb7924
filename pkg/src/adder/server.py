"""Local WebSocket control endpoint for live transcode sessions.

Two endpoints on one port:

``/ctl``
    Newline-delimited JSON.  Clients send commands (``set_crf``, ``set_roi``,
    ``clear_roi``, ``toggle_features``, ``open``, ``stop``); the server pushes
    ``{"stats": {...}}`` at 4 Hz, ``{"boxes": [[x0,y0,x1,y1], ...]}`` after
    each detection pass, and answers each command with ``{"ack": ...}`` or
    ``{"error": ...}``.

``/preview``
    Binary frames: little-endian u64 tick, u16 width, u16 height,
    u8 channels, then row-major raw samples.

Single session at a time; ``open`` replaces the current one.  Local use
only: no auth, binds loopback by default.
"""

from __future__ import annotations

import asyncio
import json
import struct
from urllib.parse import urlparse

import numpy as np

from .pipeline import (
    ClearRoi,
    SessionClosedError,
    SessionConfig,
    SetCrf,
    SetRoi,
    Stop,
    ToggleFeatures,
    start_session,
)

STATS_HZ = 4
PREVIEW_POLL_HZ = 60


def encode_preview(frame: np.ndarray, tick: int) -> bytes:
    """Pack one snapshot for the /preview endpoint."""
    if frame.ndim == 2:
        h, w = frame.shape
        channels = 1
    else:
        h, w, channels = frame.shape
    return struct.pack("<QHHB", tick, w, h, channels) + frame.tobytes()


def decode_command(line: str) -> dict:
    obj = json.loads(line)
    if not isinstance(obj, dict) or "cmd" not in obj:
        raise ValueError("command must be an object with a 'cmd' field")
    return obj


class ControlServer:
    def __init__(self, host: str = "127.0.0.1", port: int = 8765,
                 crf: int = 3, output: str | None = None) -> None:
        self.host = host
        self.port = port
        self.default_crf = crf
        self.default_output = output
        self.session = None
        self._ctl_clients: set = set()
        self._preview_clients: set = set()
        self._last_boxes = None

    # -- session control ------------------------------------------------------

    def open_source(self, source: str) -> None:
        if self.session is not None and self.session.alive:
            self.session.stop()
        self.session = start_session(SessionConfig(
            source=source, output=self.default_output, crf=self.default_crf,
            features_enabled=True, realtime=True))

    def apply_command(self, obj: dict) -> dict:
        cmd = obj.get("cmd")
        if cmd == "open":
            self.open_source(obj["source"])
            return {"ack": "open", "source": obj["source"]}
        if self.session is None:
            raise SessionClosedError("no session open")
        mapping = {
            "set_crf": lambda: SetCrf(int(obj["value"])),
            "set_roi": lambda: SetRoi(int(obj["x0"]), int(obj["y0"]),
                                      int(obj["x1"]), int(obj["y1"])),
            "clear_roi": ClearRoi,
            "toggle_features": lambda: ToggleFeatures(bool(obj["on"])),
            "stop": Stop,
        }
        if cmd not in mapping:
            raise ValueError(f"unknown command {cmd!r}")
        ack = self.session.submit_command(mapping[cmd]())
        return {"ack": cmd, "apply_by_tick": ack.apply_by_tick}

    # -- endpoint handlers ------------------------------------------------------

    async def handle(self, websocket) -> None:
        path = urlparse(websocket.request.path).path
        if path == "/ctl":
            await self._handle_ctl(websocket)
        elif path == "/preview":
            await self._handle_preview(websocket)
        else:
            await websocket.close(code=1008, reason=f"unknown path {path}")

    async def _handle_ctl(self, websocket) -> None:
        self._ctl_clients.add(websocket)
        try:
            async for message in websocket:
                if isinstance(message, bytes):
                    message = message.decode("utf-8", "replace")
                for line in message.splitlines():
                    line = line.strip()
                    if not line:
                        continue
                    try:
                        reply = self.apply_command(decode_command(line))
                    except (KeyError, ValueError, TypeError,
                            SessionClosedError, FileNotFoundError) as exc:
                        reply = {"error": str(exc)}
                    await websocket.send(json.dumps(reply) + "\n")
        finally:
            self._ctl_clients.discard(websocket)

    async def _handle_preview(self, websocket) -> None:
        self._preview_clients.add(websocket)
        try:
            await websocket.wait_closed()
        finally:
            self._preview_clients.discard(websocket)

    # -- push loops ----------------------------------------------------------------

    async def _broadcast(self, clients: set, payload) -> None:
        dead = []
        for ws in clients:
            try:
                await ws.send(payload)
            except Exception:
                dead.append(ws)
        for ws in dead:
            clients.discard(ws)

    async def stats_loop(self) -> None:
        while True:
            await asyncio.sleep(1.0 / STATS_HZ)
            if self.session is None:
                continue
            st = self.session.stats()
            payload = {
                "stats": {
                    "events_per_sec": st.events_per_sec,
                    "transcode_fps": st.transcode_fps,
                    "compressed_bytes_per_sec": st.compressed_bytes_per_sec,
                    "compressor_queue_depth": st.compressor_queue_depth,
                    "dropped_previews": st.dropped_previews,
                    "events_total": st.events_total,
                    "clock": st.clock,
                }
            }
            await self._broadcast(self._ctl_clients, json.dumps(payload) + "\n")
            boxes = [list(b) for b in st.latest_boxes]
            if boxes != self._last_boxes:
                self._last_boxes = boxes
                await self._broadcast(self._ctl_clients,
                                      json.dumps({"boxes": boxes}) + "\n")

    async def preview_loop(self) -> None:
        while True:
            await asyncio.sleep(1.0 / PREVIEW_POLL_HZ)
            if self.session is None or not self._preview_clients:
                continue
            item = self.session.latest_preview()
            if item is None:
                continue
            frame, tick = item
            await self._broadcast(self._preview_clients,
                                  encode_preview(frame, tick))

    async def run(self, ready: asyncio.Event | None = None) -> None:
        from websockets.asyncio.server import serve as ws_serve

        async with ws_serve(self.handle, self.host, self.port) as server:
            if ready is not None:
                ready.set()
            await asyncio.gather(self.stats_loop(), self.preview_loop())


def serve(host: str = "127.0.0.1", port: int = 8765,
          source: str | None = None, crf: int = 3,
          output: str | None = None) -> None:
    """Blocking entry point used by ``adder serve``."""
    server = ControlServer(host=host, port=port, crf=crf, output=output)
    if source is not None:
        server.open_source(source)
    print(f"control endpoint ws://{host}:{port}/ctl, preview on /preview")
    try:
        asyncio.run(server.run())
    except KeyboardInterrupt:
        pass
    finally:
        if server.session is not None and server.session.alive:
            server.session.stop()
