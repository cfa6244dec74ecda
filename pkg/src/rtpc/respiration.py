"""Breathing intervals from the belt signal, and phase labels for cycles.

Belt polarity convention: rising amplitude is inhalation, so a trough-to-peak
stretch is an inspiratory interval (IN) and peak-to-trough is expiratory
(EX). Invert the belt signal upstream if a sensor uses the opposite
convention. Intervals can be shifted by a nonnegative delay; a positive
delay means the flow response lags the belt.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.signal import find_peaks

from .errors import NoBreathsDetected, NonAlternating
from .io import SampledSignal

IN = "IN"
EX = "EX"
UNLABELED = "UNLABELED"


@dataclass(frozen=True)
class RespInterval:
    start_s: float
    end_s: float
    phase: str


@dataclass(frozen=True)
class RespIntervals:
    """Abutting, strictly alternating IN/EX intervals.

    Boundaries are stored undelayed plus an accumulated delay, so shifting
    composes exactly: shift(shift(I, a), b) equals shift(I, a + b).
    """

    phases: tuple
    base_bounds: tuple  # len(phases) + 1 boundary times, undelayed
    mean_period_s: float
    delay_s: float = 0.0

    def __post_init__(self):
        if len(self.base_bounds) != len(self.phases) + 1:
            raise ValueError("need exactly one more boundary than phases")
        if len(self.phases) < 1:
            raise NoBreathsDetected("no breathing intervals")
        bounds = np.asarray(self.base_bounds, dtype=np.float64)
        if not (np.diff(bounds) > 0).all():
            raise ValueError("interval boundaries must be strictly increasing")
        for a, b in zip(self.phases[:-1], self.phases[1:]):
            if a == b or {a, b} != {IN, EX}:
                raise NonAlternating(f"phases do not alternate: {a!r} followed by {b!r}")
        if self.phases[0] not in (IN, EX):
            raise NonAlternating(f"unknown phase {self.phases[0]!r}")
        if not self.mean_period_s > 0:
            raise NoBreathsDetected(f"mean period must be positive, got {self.mean_period_s}")
        durations = np.diff(bounds)
        if (durations <= 0.3 * self.mean_period_s).any() or (durations >= 3.0 * self.mean_period_s).any():
            raise NonAlternating(
                "interval durations outside (0.3, 3.0) x mean period "
                f"{self.mean_period_s:.3g} s: {durations.min():.3g}..{durations.max():.3g} s"
            )
        object.__setattr__(self, "phases", tuple(self.phases))
        object.__setattr__(self, "base_bounds", tuple(float(b) for b in self.base_bounds))

    def __len__(self) -> int:
        return len(self.phases)

    @property
    def starts(self) -> np.ndarray:
        return np.asarray(self.base_bounds[:-1]) + self.delay_s

    @property
    def ends(self) -> np.ndarray:
        return np.asarray(self.base_bounds[1:]) + self.delay_s

    @property
    def intervals(self) -> tuple:
        return tuple(
            RespInterval(start_s=s, end_s=e, phase=p)
            for s, e, p in zip(self.starts, self.ends, self.phases)
        )

    @property
    def span(self) -> tuple:
        return (self.base_bounds[0] + self.delay_s, self.base_bounds[-1] + self.delay_s)


def _moving_average(values: np.ndarray, window: int) -> np.ndarray:
    """Centered box filter with edge renormalization."""
    if window <= 1:
        return values.astype(np.float64)
    kernel = np.ones(window)
    sums = np.convolve(values, kernel, mode="same")
    counts = np.convolve(np.ones(values.size), kernel, mode="same")
    return sums / counts


def detect_resp_intervals(
    resp: SampledSignal,
    smooth_window_s: float = 0.5,
    min_separation_s: float = 1.5,
    prominence_fraction: float = 0.2,
) -> RespIntervals:
    """Extract alternating IN/EX intervals from a belt signal.

    The signal is box-smoothed over smooth_window_s, then troughs and peaks
    are detected with a minimum separation and a prominence floor of
    prominence_fraction times the smoothed signal range. Runs of same-type
    extrema are collapsed to the most extreme one. The mean breathing period
    is the mean trough-to-trough duration, which needs at least two troughs.
    """
    if resp.kind != "respiration":
        raise ValueError(f"expected a respiration signal, got kind {resp.kind!r}")
    if resp.duration_s < 2.0 * min_separation_s:
        raise NoBreathsDetected(
            f"recording of {resp.duration_s:.3g} s is shorter than 2 x {min_separation_s} s"
        )
    window = max(1, int(round(smooth_window_s / resp.dt_s)))
    if window % 2 == 0:
        window += 1
    smoothed = _moving_average(resp.values, window)
    signal_range = float(smoothed.max() - smoothed.min())
    if signal_range <= 0:
        raise NoBreathsDetected("belt signal is constant")
    prominence = prominence_fraction * signal_range
    distance = max(1, int(np.ceil(min_separation_s / resp.dt_s)))
    peak_idx, _ = find_peaks(smoothed, distance=distance, prominence=prominence)
    trough_idx, _ = find_peaks(-smoothed, distance=distance, prominence=prominence)

    events = sorted(
        [(int(i), "peak") for i in peak_idx] + [(int(i), "trough") for i in trough_idx]
    )
    # Collapse runs of same-type events, keeping the most extreme (earliest on ties).
    collapsed: list = []
    for idx, etype in events:
        if collapsed and collapsed[-1][1] == etype:
            prev_idx = collapsed[-1][0]
            better = (
                smoothed[idx] > smoothed[prev_idx]
                if etype == "peak"
                else smoothed[idx] < smoothed[prev_idx]
            )
            if better:
                collapsed[-1] = (idx, etype)
        else:
            collapsed.append((idx, etype))

    n_troughs = sum(1 for _, e in collapsed if e == "trough")
    n_peaks = sum(1 for _, e in collapsed if e == "peak")
    if n_troughs < 2 or n_peaks < 1:
        raise NoBreathsDetected(
            f"found {n_troughs} troughs and {n_peaks} peaks; need a full breath"
        )
    trough_times = [resp.t0_s + i * resp.dt_s for i, e in collapsed if e == "trough"]
    mean_period = float(np.mean(np.diff(trough_times)))
    bounds = tuple(resp.t0_s + i * resp.dt_s for i, _ in collapsed)
    phases = tuple(IN if e == "trough" else EX for i, e in collapsed[:-1])
    return RespIntervals(phases=phases, base_bounds=bounds, mean_period_s=mean_period)


def shift_intervals(intervals: RespIntervals, delay_s: float) -> RespIntervals:
    """Move every boundary later by delay_s; phases and mean period unchanged."""
    if delay_s < 0:
        raise ValueError(f"delay must be >= 0, got {delay_s}")
    return replace(intervals, delay_s=intervals.delay_s + delay_s)


def label_cycles(cycles: list, intervals: RespIntervals) -> list:
    """Phase label per cycle from midpoint containment.

    A cycle gets the phase of the interval containing its temporal midpoint;
    intervals are half-open [start, end), and midpoints outside the covered
    span are UNLABELED.
    """
    starts = intervals.starts
    span_start, span_end = intervals.span
    labels = []
    for cycle in cycles:
        mid = cycle.boundary.midpoint_s
        if mid < span_start or mid >= span_end:
            labels.append(UNLABELED)
            continue
        idx = int(np.searchsorted(starts, mid, side="right")) - 1
        labels.append(intervals.phases[idx])
    return labels
