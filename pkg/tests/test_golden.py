"""Golden fixtures: the container and player must reproduce frozen bytes.

The fixtures were produced once from audited output (the encoders are
hand-serialization- and round-trip-checked elsewhere) and pin the formats:
any byte drift in the writer, reader, or player is a regression.
"""

from pathlib import Path

import pytest

from adder.container import (
    CODEC_COMPRESSED,
    CODEC_RAW,
    inspect,
    read_stream,
    write_stream,
)
from adder.imagefiles import read_netpbm
from adder.reconstruct import play

DATA = Path(__file__).resolve().parent / "data"
RAW = DATA / "golden_raw.adder"
COMP = DATA / "golden_comp.adder"


@pytest.fixture(scope="module")
def golden_stream():
    params, events = read_stream(RAW.read_bytes())
    return params, events


class TestGoldenContainer:
    def test_raw_fixture_reencodes_identically(self, golden_stream):
        params, events = golden_stream
        assert write_stream(params, events, CODEC_RAW) == RAW.read_bytes()

    def test_compressed_fixture_reencodes_identically(self, golden_stream):
        params, events = golden_stream
        assert write_stream(params, events, CODEC_COMPRESSED) == COMP.read_bytes()

    def test_both_codecs_decode_to_same_stream(self, golden_stream):
        _, events = golden_stream
        _, events2 = read_stream(COMP.read_bytes())
        assert events == events2

    def test_known_metadata(self):
        info = inspect(RAW.read_bytes())
        assert (info.params.width, info.params.height) == (24, 24)
        assert info.params.tps == 7650
        assert info.event_count == 4096
        assert info.size_bytes == 36888
        comp_info = inspect(COMP.read_bytes())
        assert comp_info.compression_ratio < 0.1  # highly redundant clip


class TestGoldenPlayback:
    def test_playback_reproduces_reference_frames(self, golden_stream):
        params, events = golden_stream
        frames = list(play(params, events, target_fps=10))
        assert len(frames) == 11
        picks = frames[:3] + frames[-1:]
        for i, (_, frame) in enumerate(picks):
            ref = read_netpbm(DATA / f"golden_frame_{i}.pgm")
            assert frame.tobytes() == ref.tobytes()
