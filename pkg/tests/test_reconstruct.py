"""Canvas reconstruction and playback pacing."""

import numpy as np
import pytest

from adder.events import D_ZERO, Event, StreamParams
from adder.reconstruct import Canvas, TimestampRegressionError, play
from adder.transcode import Transcoder, TranscoderConfig

from conftest import make_params


class TestApplyEvent:
    def test_first_event_display(self):
        canvas = Canvas(make_params())
        canvas.apply_event(Event(0, 0, 0, 7, 255))
        assert canvas.frame_at()[0, 0] == 128

    def test_second_event_same_gap_same_display(self):
        canvas = Canvas(make_params())
        canvas.apply_event(Event(0, 0, 0, 7, 255))
        canvas.apply_event(Event(0, 0, 0, 7, 510))
        assert canvas.frame_at()[0, 0] == 128

    def test_d_zero_renders_black(self):
        canvas = Canvas(make_params())
        canvas.apply_event(Event(2, 3, 0, 7, 255))
        canvas.apply_event(Event(2, 3, 0, D_ZERO, 1000))
        assert canvas.frame_at()[3, 2] == 0

    def test_empty_canvas_all_zero(self):
        canvas = Canvas(make_params())
        assert not canvas.frame_at().any()

    def test_untouched_neighbors_unaffected(self):
        canvas = Canvas(make_params())
        canvas.apply_event(Event(4, 4, 0, D_ZERO, 7650))
        frame = canvas.frame_at()
        assert frame[4, 4] == 0
        assert not frame.any()

    def test_regression_names_pixel(self):
        canvas = Canvas(make_params())
        canvas.apply_event(Event(5, 6, 0, 7, 1000))
        with pytest.raises(TimestampRegressionError) as ei:
            canvas.apply_event(Event(5, 6, 0, 7, 999))
        assert "(5,6" in str(ei.value)

    def test_out_of_plane_rejected(self):
        canvas = Canvas(make_params(width=8, height=8))
        with pytest.raises(ValueError):
            canvas.apply_event(Event(8, 0, 0, 7, 1))

    def test_cross_pixel_order_commutes(self, rng):
        params = make_params(width=16, height=16)
        events = []
        for i in range(200):
            x, y = int(rng.randint(0, 16)), int(rng.randint(0, 16))
            events.append(Event(x, y, 0, int(rng.randint(0, 10)),
                                int(rng.randint(0, 5000))))
        # group per pixel, keep per-pixel time order, interleave differently
        per_pixel = {}
        for e in sorted(events, key=Event.sort_key):
            per_pixel.setdefault((e.x, e.y), []).append(e)

        c1 = Canvas(params)
        for e in sorted(events, key=Event.sort_key):
            c1.apply_event(e)
        c2 = Canvas(params)
        for key in sorted(per_pixel, reverse=True):  # pixel-major, reversed
            for e in per_pixel[key]:
                c2.apply_event(e)
        assert np.array_equal(c1.frame_at(), c2.frame_at())

    def test_color_canvas_shape(self):
        canvas = Canvas(make_params(channels=3))
        canvas.apply_event(Event(1, 1, 2, 7, 255))
        frame = canvas.frame_at()
        assert frame.shape == (64, 64, 3)
        assert frame[1, 1, 2] == 128
        assert frame[1, 1, 0] == 0


class TestEndToEnd:
    def _reconstruct_clip(self, value, crf, n_frames=20, size=8):
        # Fidelity is judged on the streamed clip itself; the terminal flush
        # cap is a stream-termination datum (largest 2^d <= residual), not a
        # display sample, so it is not applied here.
        params = StreamParams(size, size, 1, tps=7650, ref_interval=255,
                              delta_t_max=1530, crf=crf)
        eng = Transcoder(TranscoderConfig(params=params))
        canvas = Canvas(params)
        frame = np.full((size, size), value, dtype=np.uint8)
        for _ in range(n_frames):
            canvas.apply_events(eng.transcode_frame(frame))
        return canvas.frame_at()

    @pytest.mark.parametrize("value", [1, 2, 5, 17, 64, 128, 200, 255])
    def test_constant_clip_crf0_within_one_level(self, value):
        out = self._reconstruct_clip(value, crf=0)
        assert np.abs(out.astype(int) - value).max() <= 1

    def test_permanently_black_region_is_exactly_zero(self):
        params = StreamParams(8, 8, 1, tps=7650, ref_interval=255,
                              delta_t_max=510, crf=3)
        eng = Transcoder(TranscoderConfig(params=params))
        canvas = Canvas(params)
        frame = np.full((8, 8), 140, dtype=np.uint8)
        frame[:, :4] = 0  # permanently black half
        for k in range(8):
            canvas.apply_events(eng.transcode_frame(frame))
            if (k + 1) * 255 >= params.delta_t_max:
                assert not canvas.frame_at()[:, :4].any()

    def test_alternating_frames_temporal_average_band(self):
        u1, u2 = 60, 200
        params = StreamParams(8, 8, 1, tps=7650, ref_interval=255,
                              delta_t_max=7650, crf=9)
        eng = Transcoder(TranscoderConfig(params=params))
        canvas = Canvas(params)
        for k in range(40):
            v = u1 if k % 2 else u2
            canvas.apply_events(
                eng.transcode_frame(np.full((8, 8), v, dtype=np.uint8)))
        out = canvas.frame_at().astype(int)
        assert out.min() >= u1 - 1
        assert out.max() <= u2 + 1


class TestPlay:
    def test_frame_count_from_duration(self):
        params = StreamParams(8, 8, 1, tps=76500, ref_interval=255,
                              delta_t_max=7650)
        events = [Event(0, 0, 0, 7, 0), Event(0, 0, 0, 7, 153000)]
        frames = list(play(params, events, target_fps=30))
        assert len(frames) == 60

    def test_zero_event_schedule_with_explicit_end(self):
        params = make_params()
        frames = list(play(params, [], target_fps=30, end_t=params.tps))
        assert len(frames) == 30
        assert all(not f.any() for _, f in frames)

    def test_snapshots_reflect_events_up_to_tick(self):
        params = make_params()
        events = [Event(0, 0, 0, 7, 255), Event(0, 0, 0, D_ZERO, 5000)]
        frames = dict(play(params, events, target_fps=30, end_t=7650))
        ticks = sorted(frames)
        assert frames[ticks[0]][0, 0] == 128  # first snapshot after t=255
        assert frames[ticks[-1]][0, 0] == 0   # sentinel applied by the end
