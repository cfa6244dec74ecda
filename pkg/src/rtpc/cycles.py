"""Cardiac cycle segmentation of a continuous flow signal.

Boundaries are placed at diastolic minima (min-to-min) on a cubic-spline
upsampled grid; the dominant period from the autocorrelation steers minimum
separation and the validity band. Each cycle carries the parameter triple
(mean flow, stroke volume, cardiac period), with mean flow defined as
60 * SV / period so the identity between the three is exact by construction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.signal import find_peaks

from .errors import DegenerateCycle, NoCyclesFound, TooShort
from .io import SampledSignal

INVALID_PERIOD = "period_outside_validity_band"


@dataclass(frozen=True)
class CycleBoundary:
    start_s: float
    end_s: float

    def __post_init__(self):
        if not self.end_s > self.start_s:
            raise DegenerateCycle(f"cycle boundary [{self.start_s}, {self.end_s}] has no extent")

    @property
    def period_s(self) -> float:
        return self.end_s - self.start_s

    @property
    def midpoint_s(self) -> float:
        return self.start_s + 0.5 * self.period_s


@dataclass(frozen=True)
class CycleParams:
    mean_flow_ml_min: float
    stroke_volume_ml: float
    cardiac_period_s: float


@dataclass(frozen=True, eq=False)
class CCFC:
    """One cardiac-cycle flow curve on the upsampled grid."""

    boundary: CycleBoundary
    samples: np.ndarray
    params: CycleParams
    valid: bool
    invalid_reason: str | None = None

    @property
    def midpoint_s(self) -> float:
        return self.boundary.midpoint_s


def resample(flow: SampledSignal, factor: int) -> SampledSignal:
    """Natural cubic-spline upsampling onto a dt/factor grid.

    Original sample instants reproduce the original values (interpolation).
    factor 1 returns the input unchanged.
    """
    if int(factor) != factor or factor < 1:
        raise ValueError(f"factor must be an integer >= 1, got {factor!r}")
    factor = int(factor)
    if len(flow) < 4:
        raise TooShort(f"resampling needs >= 4 samples, got {len(flow)}")
    if factor == 1:
        return flow
    t = flow.times
    spline = CubicSpline(t, flow.values, bc_type="natural")
    new_dt = flow.dt_s / factor
    n_out = (len(flow) - 1) * factor + 1
    tt = np.minimum(flow.t0_s + np.arange(n_out) * new_dt, t[-1])
    return SampledSignal(t0_s=flow.t0_s, dt_s=new_dt, values=spline(tt), kind=flow.kind)


def _dominant_period(values: np.ndarray, dt_s: float, band: tuple) -> float:
    """Lag of the highest autocorrelation peak within the period band.

    Uses the biased FFT autocorrelation (decays with lag, so the fundamental
    wins over its multiples on equal footing) with parabolic refinement of
    the winning peak.
    """
    x = values - values.mean()
    if not (x != 0).any():
        raise NoCyclesFound("constant signal has no cardiac periodicity")
    n = x.size
    nfft = 1 << int(np.ceil(np.log2(2 * n)))
    spec = np.fft.rfft(x, nfft)
    acorr = np.fft.irfft(spec * np.conj(spec), nfft)[:n] / n
    if acorr[0] <= 0:
        raise NoCyclesFound("degenerate autocorrelation")
    acorr = acorr / acorr[0]
    lo = max(1, int(np.ceil(band[0] / dt_s)))
    hi = min(n - 2, int(np.floor(band[1] / dt_s)))
    if hi <= lo:
        raise NoCyclesFound(f"period band {band} unreachable at dt {dt_s}")
    segment = acorr[lo : hi + 1]
    local_max = (segment >= acorr[lo - 1 : hi]) & (segment >= acorr[lo + 1 : hi + 2])
    peaks = np.flatnonzero(local_max)
    if peaks.size == 0:
        raise NoCyclesFound(f"no autocorrelation peak within {band} s")
    best = peaks[int(np.argmax(segment[peaks]))] + lo  # argmax keeps the earliest tie
    # Parabolic refinement around the winning lag.
    y0, y1, y2 = acorr[best - 1], acorr[best], acorr[best + 1]
    denom = y0 - 2 * y1 + y2
    shift = 0.0 if denom == 0 else 0.5 * (y0 - y2) / denom
    shift = float(np.clip(shift, -0.5, 0.5))
    return float(np.clip((best + shift) * dt_s, band[0], band[1]))


def _select_minima(values: np.ndarray, min_separation: int) -> np.ndarray:
    """Greedy deepest-first minima selection with a separation constraint.

    Ties on depth go to the earliest index, which makes the selection
    deterministic.
    """
    candidates, _ = find_peaks(-values)
    order = sorted(candidates, key=lambda i: (values[i], i))
    accepted: list = []
    for idx in order:
        if all(abs(idx - a) >= min_separation for a in accepted):
            accepted.append(idx)
    return np.asarray(sorted(accepted), dtype=np.intp)


def detect_cycles(
    flow: SampledSignal,
    upsample_factor: int = 8,
    period_band_s: tuple = (0.4, 2.0),
    min_separation_fraction: float = 0.6,
    validity_band: tuple = (0.6, 1.5),
) -> list:
    """Segment a flow signal into cardiac-cycle flow curves.

    Steps: (1) estimate the dominant period T from the autocorrelation within
    period_band_s; (2) on the upsampled signal, keep the deepest local minima
    at least min_separation_fraction * T apart as boundaries; (3) flag cycles
    whose period falls outside validity_band * T. Leading and trailing
    partial cycles are discarded.

    Raises NoCyclesFound when the recording is shorter than three times the
    period band upper bound, shows no periodicity, or yields fewer than three
    boundaries.
    """
    if flow.kind != "flow":
        raise ValueError(f"expected a flow signal, got kind {flow.kind!r}")
    if flow.duration_s < 3.0 * period_band_s[1]:
        raise NoCyclesFound(
            f"recording of {flow.duration_s:.3g} s is shorter than 3 x {period_band_s[1]} s"
        )
    up = resample(flow, upsample_factor)
    # Period estimation runs on the upsampled grid too: at ~12 raw samples per
    # cycle, a half-integer true period aligns worse with itself than with its
    # double, and the raw-grid autocorrelation peaks at the wrong multiple.
    period = _dominant_period(up.values, up.dt_s, period_band_s)
    min_sep = max(1, int(np.ceil(min_separation_fraction * period / up.dt_s)))
    boundaries = _select_minima(up.values, min_sep)
    if boundaries.size < 3:
        raise NoCyclesFound(f"only {boundaries.size} cycle boundaries found")
    lo, hi = validity_band[0] * period, validity_band[1] * period
    cycles = []
    for i0, i1 in zip(boundaries[:-1], boundaries[1:]):
        boundary = CycleBoundary(
            start_s=up.t0_s + i0 * up.dt_s, end_s=up.t0_s + i1 * up.dt_s
        )
        params = cycle_params(up, boundary)
        ok = lo <= params.cardiac_period_s <= hi
        cycles.append(
            CCFC(
                boundary=boundary,
                samples=up.values[i0 : i1 + 1].copy(),
                params=params,
                valid=ok,
                invalid_reason=None if ok else INVALID_PERIOD,
            )
        )
    return cycles


def cycle_params(flow: SampledSignal, boundary: CycleBoundary) -> CycleParams:
    """Parameter triple of one cycle on the given (upsampled) signal grid.

    stroke volume is the trapezoidal integral of Q/60 over the cycle (ml);
    mean flow is 60 * SV / period, which makes mean * period == 60 * SV hold
    exactly.
    """
    i0 = int(round((boundary.start_s - flow.t0_s) / flow.dt_s))
    i1 = int(round((boundary.end_s - flow.t0_s) / flow.dt_s))
    for i, t in ((i0, boundary.start_s), (i1, boundary.end_s)):
        if abs(flow.t0_s + i * flow.dt_s - t) > 1e-6 * flow.dt_s:
            raise ValueError(f"boundary time {t} is not on the signal grid (dt {flow.dt_s})")
    if not (0 <= i0 and i1 < len(flow)):
        raise ValueError(f"boundary [{boundary.start_s}, {boundary.end_s}] outside the signal span")
    if i1 - i0 < 2:
        raise DegenerateCycle(f"cycle spans {i1 - i0} samples, need >= 2")
    period = boundary.period_s
    stroke_volume = float(np.trapezoid(flow.values[i0 : i1 + 1], dx=flow.dt_s)) / 60.0
    return CycleParams(
        mean_flow_ml_min=60.0 * stroke_volume / period,
        stroke_volume_ml=stroke_volume,
        cardiac_period_s=period,
    )
