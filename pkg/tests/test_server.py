"""WebSocket control endpoint: /ctl commands and /preview binary frames."""

import asyncio
import json
import socket
import struct
import threading
import time
from pathlib import Path

import numpy as np
import pytest
from jsonschema import validate as schema_validate

from adder.server import ControlServer, decode_command, encode_preview

import websockets

SCHEMA = json.loads(
    (Path(__file__).resolve().parent.parent / "protocol"
     / "ctl-commands.schema.json").read_text())

SOURCE = "synth://square?seed=5&w=32&h=32&frames=100000&size=8&speed=1"


def free_port():
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]


@pytest.fixture(scope="module")
def server():
    port = free_port()
    srv = ControlServer(port=port)
    ready = threading.Event()
    thread = threading.Thread(target=lambda: asyncio.run(srv.run(ready=ready)),
                              daemon=True)
    thread.start()
    assert ready.wait(10), "server did not start"
    yield srv, port
    if srv.session is not None and srv.session.alive:
        srv.session.stop()


async def _send_cmd(ws, obj):
    schema_validate(obj, SCHEMA)  # everything we send is schema-clean
    await ws.send(json.dumps(obj) + "\n")
    while True:
        reply = json.loads((await asyncio.wait_for(ws.recv(), 10)).strip())
        if "stats" in reply or "boxes" in reply:
            continue  # pushed frames interleave with replies
        return reply


class TestCtl:
    def test_open_control_stop_cycle(self, server):
        srv, port = server

        async def scenario():
            async with websockets.connect(f"ws://127.0.0.1:{port}/ctl") as ws:
                reply = await _send_cmd(ws, {"cmd": "open", "source": SOURCE})
                assert reply == {"ack": "open", "source": SOURCE}

                reply = await _send_cmd(ws, {"cmd": "set_crf", "value": 7})
                assert reply["ack"] == "set_crf"
                assert reply["apply_by_tick"] > 0

                reply = await _send_cmd(
                    ws, {"cmd": "set_roi", "x0": 2, "y0": 2, "x1": 10, "y1": 10})
                assert reply["ack"] == "set_roi"

                reply = await _send_cmd(ws, {"cmd": "clear_roi"})
                assert reply["ack"] == "clear_roi"

                reply = await _send_cmd(ws, {"cmd": "toggle_features", "on": True})
                assert reply["ack"] == "toggle_features"

                # stats frames arrive at 4 Hz
                saw_stats = False
                deadline = time.time() + 5
                while time.time() < deadline and not saw_stats:
                    msg = json.loads((await asyncio.wait_for(ws.recv(), 10)).strip())
                    saw_stats = "stats" in msg
                assert saw_stats
                st = msg["stats"]
                for key in ("events_per_sec", "transcode_fps",
                            "compressor_queue_depth", "dropped_previews"):
                    assert key in st

                reply = await _send_cmd(ws, {"cmd": "stop"})
                assert reply["ack"] == "stop"

        asyncio.run(scenario())

    def test_malformed_command_gets_error_not_crash(self, server):
        srv, port = server

        async def scenario():
            async with websockets.connect(f"ws://127.0.0.1:{port}/ctl") as ws:
                await ws.send("this is not json\n")
                reply = json.loads((await asyncio.wait_for(ws.recv(), 10)).strip())
                assert "error" in reply
                await ws.send(json.dumps({"cmd": "warp_core_breach"}) + "\n")
                while True:
                    reply = json.loads(
                        (await asyncio.wait_for(ws.recv(), 10)).strip())
                    if "stats" not in reply and "boxes" not in reply:
                        break
                assert "error" in reply

        asyncio.run(scenario())

    def test_unknown_path_closed(self, server):
        srv, port = server

        async def scenario():
            async with websockets.connect(f"ws://127.0.0.1:{port}/nope") as ws:
                with pytest.raises(websockets.ConnectionClosed):
                    await asyncio.wait_for(ws.recv(), 10)

        asyncio.run(scenario())


class TestPreview:
    def test_binary_layout(self, server):
        srv, port = server

        async def scenario():
            async with websockets.connect(f"ws://127.0.0.1:{port}/ctl") as ws:
                await _send_cmd(ws, {"cmd": "open", "source": SOURCE})
                async with websockets.connect(
                        f"ws://127.0.0.1:{port}/preview") as pv:
                    msg = await asyncio.wait_for(pv.recv(), 15)
                    assert isinstance(msg, bytes)
                    tick, w, h, ch = struct.unpack_from("<QHHB", msg)
                    assert (w, h, ch) == (32, 32, 1)
                    assert len(msg) == 13 + w * h * ch
                await _send_cmd(ws, {"cmd": "stop"})

        asyncio.run(scenario())


class TestHelpers:
    def test_encode_preview_gray(self):
        frame = np.arange(12, dtype=np.uint8).reshape(3, 4)
        blob = encode_preview(frame, tick=777)
        tick, w, h, ch = struct.unpack_from("<QHHB", blob)
        assert (tick, w, h, ch) == (777, 4, 3, 1)
        assert blob[13:] == frame.tobytes()

    def test_encode_preview_color(self):
        frame = np.zeros((2, 2, 3), dtype=np.uint8)
        blob = encode_preview(frame, tick=1)
        _, w, h, ch = struct.unpack_from("<QHHB", blob)
        assert (w, h, ch) == (2, 2, 3)

    def test_decode_command_requires_cmd(self):
        with pytest.raises(ValueError):
            decode_command(json.dumps({"nope": 1}))

    def test_schema_rejects_bad_commands(self):
        import jsonschema

        for bad in ({"cmd": "set_crf", "value": 11},
                    {"cmd": "set_roi", "x0": 0},
                    {"cmd": "open"},
                    {"cmd": "warp"},):
            with pytest.raises(jsonschema.ValidationError):
                schema_validate(bad, SCHEMA)
