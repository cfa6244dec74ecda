import numpy as np
import pytest

from helpers import make_cycle, periodic_intervals, signals

from rtpc.cycles import CycleParams, detect_cycles
from rtpc.diff import (
    average_params,
    delay_scan,
    diff_ex_in,
    extract_result,
    finalize_scan,
    sweep_diffs,
)
from rtpc.errors import InsufficientCycles, ZeroInspiratoryValue
from rtpc.respiration import EX, IN, detect_resp_intervals, label_cycles, shift_intervals


def params(mean=740.0, sv=11.6, period=0.94):
    return CycleParams(mean_flow_ml_min=mean, stroke_volume_ml=sv, cardiac_period_s=period)


class TestAverageParams:
    def test_arithmetic_mean(self):
        cycles = [make_cycle(0.0, 1.0, 760.0), make_cycle(1.0, 2.0, 770.0)]
        labels = [EX, EX]
        avg = average_params(cycles, labels, EX, min_cycles=2)
        assert avg.mean_flow_ml_min == pytest.approx(765.0)

    def test_insufficient_for_missing_phase(self):
        cycles = [make_cycle(0.0, 1.0), make_cycle(1.0, 2.0), make_cycle(2.0, 3.0)]
        labels = [IN, IN, IN]
        with pytest.raises(InsufficientCycles):
            average_params(cycles, labels, EX)

    def test_invalid_cycles_ignored(self):
        cycles = [make_cycle(0.0, 1.0, 700.0), make_cycle(1.0, 2.0, 800.0, valid=False),
                  make_cycle(2.0, 3.0, 720.0)]
        labels = [EX, EX, EX]
        avg = average_params(cycles, labels, EX, min_cycles=2)
        assert avg.mean_flow_ml_min == pytest.approx(710.0)

    def test_modulation_ratio_recovered(self):
        flow, resp, _ = signals(
            duration_s=300.0,
            modulation={"mean_flow_pct": 10.0, "shape": "square"},
        )
        cycles = detect_cycles(flow)
        labels = label_cycles(cycles, detect_resp_intervals(resp))
        p_ex = average_params(cycles, labels, EX)
        p_in = average_params(cycles, labels, IN)
        assert p_ex.mean_flow_ml_min / p_in.mean_flow_ml_min == pytest.approx(1.10, abs=0.01)


class TestDiffExIn:
    def test_reference_percentages(self):
        d = diff_ex_in(params(mean=765.0), params(mean=735.0))
        assert d["mean_flow"] == pytest.approx(100.0 * 30.0 / 735.0)
        assert d["mean_flow"] == pytest.approx(4.08, abs=0.01)

    def test_equal_gives_zero(self):
        d = diff_ex_in(params(), params())
        assert all(v == 0.0 for v in d.values())

    def test_period_difference(self):
        d = diff_ex_in(params(period=1.0), params(period=0.925))
        assert d["cardiac_period"] == pytest.approx(8.108108, abs=1e-5)

    def test_zero_inspiratory_value(self):
        with pytest.raises(ZeroInspiratoryValue):
            diff_ex_in(params(), params(mean=0.0))


def constant_cycle_set(duration_s=60.0, period=0.94, mean=600.0):
    cycles = []
    start = 0.47
    while start + period < duration_s:
        cycles.append(make_cycle(start, start + period, mean))
        start += period
    return cycles


class TestDelayScan:
    def test_zero_delay_modulation(self):
        flow, resp, _ = signals(
            duration_s=300.0,
            modulation={"mean_flow_pct": 10.0, "shape": "square"},
        )
        cycles = detect_cycles(flow)
        intervals = detect_resp_intervals(resp)
        scan = delay_scan(cycles, intervals, "mean_flow")
        assert scan.max_diff_pct == pytest.approx(10.0, abs=1.5)
        period = intervals.mean_period_s
        assert scan.argmax_delay_s <= 0.47 or scan.argmax_delay_s >= period - 0.47

    def test_sensor_delay_recovered(self):
        flow, resp, _ = signals(
            duration_s=300.0,
            modulation={"mean_flow_pct": 10.0, "shape": "square", "sensor_delay_s": 1.2},
        )
        cycles = detect_cycles(flow)
        intervals = detect_resp_intervals(resp)
        scan = delay_scan(cycles, intervals, "mean_flow")
        assert scan.argmax_delay_s == pytest.approx(1.2, abs=0.47)
        assert scan.delay_pct == pytest.approx(27.9, abs=11.0)

    def test_constant_flow_zero_everywhere(self):
        cycles = constant_cycle_set()
        intervals = periodic_intervals(period_s=4.3, n_breaths=13)
        scan = delay_scan(cycles, intervals, "mean_flow")
        finite = scan.diff_pct[np.isfinite(scan.diff_pct)]
        assert np.all(finite == 0.0)
        assert scan.max_diff_pct == 0.0
        assert scan.argmax_delay_s == 0.0  # earliest tie wins
        assert scan.diff_at_zero_pct == 0.0

    def test_grid_covers_one_period(self):
        cycles = constant_cycle_set()
        intervals = periodic_intervals(period_s=4.3, n_breaths=13)
        scan = delay_scan(cycles, intervals, "mean_flow", step_s=0.075)
        assert scan.delays_s[0] == 0.0
        assert scan.delays_s[-1] < intervals.mean_period_s
        assert len(scan.delays_s) == 58
        assert 0.0 <= scan.delay_pct < 100.0

    def test_unknown_parameter(self):
        with pytest.raises(ValueError):
            delay_scan([], periodic_intervals(4.0, 4), "bogus")

    def test_deterministic(self):
        flow, resp, _ = signals(duration_s=120.0, seed=5)
        cycles = detect_cycles(flow)
        intervals = detect_resp_intervals(resp)
        a = delay_scan(cycles, intervals, "stroke_volume")
        b = delay_scan(cycles, intervals, "stroke_volume")
        assert np.array_equal(a.diff_pct, b.diff_pct)
        assert a.argmax_delay_s == b.argmax_delay_s


class TestSweepMissingDelays:
    def make_sparse_setup(self):
        # cycles only under the first breath; shifting the intervals far
        # enough strands one phase below min_cycles
        intervals = periodic_intervals(period_s=4.0, n_breaths=3)
        cycles = [make_cycle(0.1 + 0.45 * i, 0.55 + 0.45 * i, 700.0 + i) for i in range(8)]
        return cycles, intervals

    def test_skipped_delays_recorded_as_nan(self):
        cycles, intervals = self.make_sparse_setup()
        delays, diffs = sweep_diffs(cycles, intervals, step_s=0.25, min_cycles=3,
                                    max_missing_fraction=1.0)
        missing = np.isnan(diffs["mean_flow"])
        assert missing.any()
        assert np.isfinite(diffs["mean_flow"]).any()

    def test_too_many_missing_raises(self):
        cycles, intervals = self.make_sparse_setup()
        with pytest.raises(InsufficientCycles):
            sweep_diffs(cycles, intervals, step_s=0.25, min_cycles=3,
                        max_missing_fraction=0.2)


class TestSignedMaxCompleteness:
    def test_negative_at_zero_surfaces_with_delay(self):
        # a half-breath sensor delay makes the zero-delay Diff negative; the
        # full-period scan still finds the positive maximum near T/2
        flow, resp, _ = signals(
            duration_s=300.0,
            modulation={"period_pct": 8.0, "shape": "square", "sensor_delay_s": 2.15},
        )
        cycles = detect_cycles(flow)
        intervals = detect_resp_intervals(resp)
        scan = delay_scan(cycles, intervals, "cardiac_period")
        assert scan.diff_at_zero_pct < -4.0
        assert scan.max_diff_pct > 6.0
        assert scan.argmax_delay_s == pytest.approx(2.15, abs=0.47)


class TestPhaseSwapProperty:
    def test_half_period_shift_swaps_labels(self):
        intervals = periodic_intervals(period_s=4.0, n_breaths=40)
        cycles = [make_cycle(8.0 + 0.9 * i, 8.9 + 0.9 * i) for i in range(120)]
        half = intervals.mean_period_s / 2.0
        for d in (0.0, 0.6, 1.1):
            lab_a = label_cycles(cycles, shift_intervals(intervals, d))
            lab_b = label_cycles(cycles, shift_intervals(intervals, d + half))
            swapped = {IN: EX, EX: IN}
            for a, b in zip(lab_a, lab_b):
                if a in swapped and b in swapped:
                    assert b == swapped[a]


class TestExtractResult:
    def test_reference_record(self):
        scan = finalize_scan(
            "mean_flow",
            delays=np.array([0.0, 0.56]),
            values=np.array([2.7, 4.3]),
            mean_period_s=4.3,
        )
        record = extract_result(scan)
        assert record.at_zero_pct == pytest.approx(2.7)
        assert record.max_pct == pytest.approx(4.3)
        assert record.delay_s == pytest.approx(0.56)
        assert record.delay_pct == pytest.approx(100.0 * 0.56 / 4.3)
        assert round(record.delay_pct, 1) == 13.0

    def test_flat_scan_max_equals_at_zero(self):
        scan = finalize_scan(
            "mean_flow",
            delays=np.arange(0.0, 4.0, 0.5),
            values=np.full(8, 1.5),
            mean_period_s=4.3,
        )
        assert scan.max_diff_pct == scan.diff_at_zero_pct
        assert scan.argmax_delay_s == 0.0

    def test_delay_pct_consistency(self):
        scan = finalize_scan(
            "stroke_volume",
            delays=np.array([0.0, 1.0, 2.0]),
            values=np.array([0.1, 5.0, 1.0]),
            mean_period_s=4.0,
        )
        record = extract_result(scan)
        assert abs(record.delay_pct - 100.0 * record.delay_s / 4.0) <= 1e-9
        assert record.scan_delays_s == (0.0, 1.0, 2.0)

    def test_nan_scan_values_become_none(self):
        scan = finalize_scan(
            "mean_flow",
            delays=np.array([0.0, 1.0, 2.0]),
            values=np.array([0.5, np.nan, 2.0]),
            mean_period_s=4.0,
        )
        record = extract_result(scan)
        assert record.scan_diff_pct == (0.5, None, 2.0)
