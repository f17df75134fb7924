"""Per-pixel integration: crossings, caps, conservation, rate policy."""

from fractions import Fraction

import numpy as np
import pytest

from adder.events import D_MAX, D_ZERO, StreamParams
from adder.pixel import PixelState, integrate, next_d


def tick_step_oracle(rate, span, d, now_base=0):
    """Independent tick-by-tick simulator for constant rate and fixed d.

    Accumulates one tick at a time; a crossing strictly inside tick k stamps
    k, a crossing exactly on the boundary instant k+1 stamps k+1.  No caps.
    """
    rate = Fraction(rate)
    th = 1 << d
    acc = Fraction(0)
    stamps = []
    for k in range(span):
        acc += rate
        while acc >= th:
            overshoot = acc - th
            inside = overshoot > 0  # crossing before the tick boundary
            stamps.append(now_base + k if inside else now_base + k + 1)
            acc -= th
    return stamps, acc


def fixed_policy(d):
    return lambda acc: d


BIG_DTM = 1 << 40  # effectively disables caps


class TestCrossings:
    def test_unit_rate_fixed_d7(self):
        # Full-scale sample at ref=255 integrates 1 unit/tick.
        oracle_stamps, oracle_acc = tick_step_oracle(1, 510, 7)
        assert oracle_stamps == [128, 256, 384]
        assert oracle_acc == 126

        evs, st = integrate(PixelState(cur_d=7), Fraction(1), 510,
                            fixed_policy(7), 0, BIG_DTM)
        assert [e.t for e in evs] == oracle_stamps
        assert all(e.d == 7 for e in evs)
        assert st.acc == oracle_acc

    def test_fractional_rate_matches_oracle(self):
        rng = np.random.RandomState(11)
        for _ in range(200):
            num = int(rng.randint(1, 256))
            den = int(rng.randint(max(num, 1), 512))  # rate <= 1 unit/tick
            d = int(rng.randint(0, 9))
            span = int(rng.randint(1, 1500))
            rate = Fraction(num, den)
            o_stamps, o_acc = tick_step_oracle(rate, span, d)
            evs, st = integrate(PixelState(cur_d=d), rate, span,
                                fixed_policy(d), 0, BIG_DTM)
            assert [e.t for e in evs] == o_stamps
            assert st.acc == o_acc

    def test_zero_rate_no_events(self):
        evs, st = integrate(PixelState(cur_d=7), 0, 100, fixed_policy(7), 0, 7650)
        assert evs == []
        assert st.acc == 0

    def test_timestamps_strictly_increase_at_high_rate(self):
        # 200 units/tick with d=0 would floor many crossings into one tick;
        # stamps must still strictly increase.
        evs, _ = integrate(PixelState(cur_d=0), Fraction(200), 3,
                           fixed_policy(0), 0, BIG_DTM)
        ts = [e.t for e in evs]
        assert all(a < b for a, b in zip(ts, ts[1:]))
        assert len(evs) == 600  # 200 units/tick * 3 ticks at threshold 2^0

    def test_resumes_across_spans(self):
        # Two spans of 255 at rate 1 behave like one span of 510.
        st = PixelState(cur_d=7)
        evs1, st = integrate(st, 1, 255, fixed_policy(7), 0, BIG_DTM)
        evs2, st = integrate(st, 1, 255, fixed_policy(7), 255, BIG_DTM)
        assert [e.t for e in evs1 + evs2] == [128, 256, 384]
        assert st.acc == 126


class TestCaps:
    def test_zero_intensity_cap(self):
        evs, st = integrate(PixelState(cur_d=7), 0, 7650, fixed_policy(7), 0, 7650)
        assert len(evs) == 1
        assert evs[0].d == D_ZERO
        assert evs[0].t == 7650

    def test_repeated_zero_caps(self):
        evs, st = integrate(PixelState(cur_d=7), 0, 23000, fixed_policy(7), 0, 7650)
        assert [e.t for e in evs] == [7650, 15300, 22950]
        assert all(e.d == D_ZERO for e in evs)

    def test_cap_carries_partial_accumulation(self):
        # 5 units accumulated, then starve: cap conveys 2^2, keeps residual 1.
        st = PixelState(acc=Fraction(5), cur_d=7)
        evs, st = integrate(st, 0, 7650, fixed_policy(7), 0, 7650)
        assert evs[0].d == 2
        assert st.acc == 1

    def test_sub_unit_accumulation_caps_as_zero(self):
        st = PixelState(acc=Fraction(1, 2), cur_d=7)
        evs, st = integrate(st, 0, 7650, fixed_policy(7), 0, 7650)
        assert evs[0].d == D_ZERO
        assert st.acc == Fraction(1, 2)

    def test_slow_rate_caps_before_crossing(self):
        # rate so small the crossing would overshoot delta_t_max
        rate = Fraction(1, 10000)
        evs, st = integrate(PixelState(cur_d=7), rate, 7650, fixed_policy(7), 0, 7650)
        assert len(evs) == 1
        assert evs[0].t == 7650
        # 7650/10000 units < 1 -> D_ZERO
        assert evs[0].d == D_ZERO

    def test_no_gap_exceeds_dtm(self):
        rng = np.random.RandomState(5)
        dtm = 1000
        for _ in range(50):
            rate = Fraction(int(rng.randint(0, 50)), 1000)
            st = PixelState(cur_d=int(rng.randint(0, 10)))
            evs, st = integrate(st, rate, 5000, fixed_policy(st.cur_d), 0, dtm)
            stamps = [0] + [e.t for e in evs]
            gaps = [b - a for a, b in zip(stamps, stamps[1:])]
            assert all(g <= dtm for g in gaps)


class TestConservation:
    def test_exact_partition_randomized(self):
        rng = np.random.RandomState(42)
        for _ in range(500):
            rate = Fraction(int(rng.randint(0, 300)), int(rng.randint(1, 300)))
            span = int(rng.randint(1, 4000))
            d = int(rng.randint(0, 13))
            evs, st = integrate(PixelState(cur_d=d), rate, span,
                                fixed_policy(d), 0, BIG_DTM)
            fired = sum(Fraction(2) ** e.d for e in evs)
            assert fired + st.acc == rate * span

    def test_acc_below_threshold_at_rest(self):
        rng = np.random.RandomState(9)
        for _ in range(200):
            d = int(rng.randint(0, 10))
            rate = Fraction(int(rng.randint(0, 200)), int(rng.randint(1, 200)))
            evs, st = integrate(PixelState(cur_d=d), rate, int(rng.randint(1, 800)),
                                fixed_policy(d), 0, BIG_DTM)
            assert 0 <= st.acc < 2**st.cur_d


class TestNextD:
    PARAMS = StreamParams(64, 64, 1, tps=76500, ref_interval=255, delta_t_max=7650)

    def test_unit_rate_crf0(self):
        assert next_d(Fraction(1), 0, self.PARAMS) == 7

    def test_zero_rate(self):
        for crf in range(10):
            assert next_d(Fraction(0), crf, self.PARAMS) == 0

    def test_unit_rate_crf3(self):
        # gap target min(255 * 8, 7650) = 2040; floor(log2(2040)) = 10
        assert next_d(Fraction(1), 3, self.PARAMS) == 10

    def test_gap_capped_by_dtm(self):
        # crf 9: 255 * 512 = 130560 caps at 7650; floor(log2(7650)) = 12
        assert next_d(Fraction(1), 9, self.PARAMS) == 12

    def test_clamped_to_d_max(self):
        assert next_d(Fraction(10**9), 9, self.PARAMS) == D_MAX

    def test_monotone_in_crf(self):
        for num in (1, 50, 200):
            rate = Fraction(num, 255)
            ds = [next_d(rate, crf, self.PARAMS) for crf in range(10)]
            assert all(a <= b for a, b in zip(ds, ds[1:]))

    def test_exact_power_boundary(self):
        # rate * g == 2^k exactly must give k, not k - 1
        p = StreamParams(64, 64, 1, tps=76500, ref_interval=256, delta_t_max=8192)
        assert next_d(Fraction(1), 0, p) == 8
        assert next_d(Fraction(1, 2), 0, p) == 7


class TestPolicyInteraction:
    def test_policy_applied_after_each_event(self):
        seen = []

        def policy(acc):
            seen.append(acc)
            return 5

        integrate(PixelState(cur_d=7), 1, 510, policy, 0, BIG_DTM)
        assert len(seen) >= 3

    def test_threshold_raise_protects_residual(self):
        # Cap leaves residual 3 (d'=2 from 7 units); policy wants d=0 but the
        # engine must keep acc < 2^cur_d, so cur_d becomes 2.
        st = PixelState(acc=Fraction(7), cur_d=5)
        evs, st2 = integrate(st, 0, 7650, fixed_policy(0), 0, 7650)
        assert evs[0].d == 2
        assert st2.acc == 3
        assert st2.cur_d == 2
        assert st2.acc < 2**st2.cur_d
