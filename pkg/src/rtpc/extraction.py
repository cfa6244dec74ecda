"""Velocity-map series to calibrated flow signal.

The chain is: grow a per-frame ROI from a seed (or take externally edited
masks), estimate and subtract the stationary-tissue velocity offset, unwrap
velocities that exceeded the encoding limit, integrate to ml/min, and sum
arteries. A spectral quality gate flags signals without a usable cardiac
component.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage
from scipy.signal import welch

from .errors import (
    EmptySegmentation,
    GridMismatch,
    InsufficientStationaryTissue,
    SeedOutsideVessel,
    TooShort,
)
from .io import QcFlags, RoiMask, SampledSignal, VelocityMapSeries

#: 1 mm^3/s = 0.06 ml/min
ML_MIN_PER_MM3_S = 0.06

_FOUR_CONNECTED = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool)


@dataclass(frozen=True)
class RoiSeries:
    """One ROI mask per frame; all masks share dimensions."""

    masks: tuple

    def __post_init__(self):
        if len(self.masks) < 1:
            raise ValueError("RoiSeries needs at least one mask")
        shape = self.masks[0].membership.shape
        for m in self.masks:
            if m.membership.shape != shape:
                raise ValueError("all masks in a RoiSeries must share dimensions")
        object.__setattr__(self, "masks", tuple(self.masks))

    def __len__(self) -> int:
        return len(self.masks)

    @classmethod
    def from_static(cls, mask: RoiMask, n_frames: int) -> "RoiSeries":
        return cls(masks=(mask,) * n_frames)

    def union(self) -> np.ndarray:
        out = np.zeros(self.masks[0].membership.shape, dtype=bool)
        for m in self.masks:
            out |= m.membership
        return out

    def n_empty_frames(self) -> int:
        return sum(1 for m in self.masks if not m.membership.any())

    def stacked(self) -> np.ndarray:
        return np.stack([m.membership for m in self.masks])


@dataclass(frozen=True)
class BackgroundEstimate:
    """Static velocity offset estimated from quiet tissue around the ROI."""

    offset_mm_s: float
    band: np.ndarray  # bool (height, width), disjoint from the union ROI
    n_band_pixels: int


def segment_roi(
    series: VelocityMapSeries,
    seed: tuple,
    velocity_threshold_fraction: float = 0.5,
    max_radius_px: float = 12.0,
) -> RoiSeries:
    """Grow a per-frame ROI from a seed pixel by velocity thresholding.

    The threshold is velocity_threshold_fraction times the 99th percentile of
    |velocity| within max_radius_px of the seed, pooled over all frames. Per
    frame the ROI is the 4-connected component of above-threshold pixels that
    contains the seed. Frames where the seed falls below threshold inherit
    the previous frame's mask (leading empty frames inherit the first
    non-empty one).

    Parameters
    ----------
    series : VelocityMapSeries
    seed : (x, y) pixel coordinate
    velocity_threshold_fraction : float
        Fraction of the pooled 99th-percentile reference speed.
    max_radius_px : float
        Radius of the reference neighborhood around the seed.
    """
    sx, sy = int(seed[0]), int(seed[1])
    if not (0 <= sx < series.width and 0 <= sy < series.height):
        raise ValueError(f"seed {seed} outside {series.width}x{series.height} image")
    if not (0.0 < velocity_threshold_fraction <= 1.0):
        raise ValueError("velocity_threshold_fraction must be in (0, 1]")
    yy, xx = np.mgrid[0 : series.height, 0 : series.width]
    neighborhood = (xx - sx) ** 2 + (yy - sy) ** 2 <= max_radius_px**2
    speeds = np.abs(series.frames[:, neighborhood])
    reference = float(np.percentile(speeds, 99.0))
    if reference <= 0.0:
        raise EmptySegmentation(f"no velocity signal within {max_radius_px} px of seed {seed}")
    threshold = velocity_threshold_fraction * reference

    per_frame: list = []
    for frame in series.frames:
        above = np.abs(frame) >= threshold
        if not above[sy, sx]:
            per_frame.append(None)
            continue
        labels, _ = ndimage.label(above, structure=_FOUR_CONNECTED)
        per_frame.append(labels == labels[sy, sx])

    if all(m is None for m in per_frame):
        raise SeedOutsideVessel(f"seed {seed} below threshold {threshold:.3g} mm/s in every frame")

    # Sequential fix-up: empty frames fall back to the previous frame's mask.
    first = next(i for i, m in enumerate(per_frame) if m is not None)
    for i in range(first):
        per_frame[i] = per_frame[first]
    for i in range(first + 1, len(per_frame)):
        if per_frame[i] is None:
            per_frame[i] = per_frame[i - 1]
    return RoiSeries(masks=tuple(RoiMask(m) for m in per_frame))


def correct_background(
    series: VelocityMapSeries,
    roi: RoiSeries,
    band_inner_px: float = 2.0,
    band_outer_px: float = 6.0,
    variance_quantile: float = 0.25,
    min_band_pixels: int = 8,
) -> tuple[VelocityMapSeries, BackgroundEstimate]:
    """Subtract the stationary-tissue velocity offset (eddy-current bias).

    Candidate pixels lie at distance [band_inner_px, band_outer_px] from the
    union ROI; of those, the quietest variance_quantile by temporal standard
    deviation form the band. The offset is the median velocity over band
    pixels and frames, treated as static, and is subtracted from every pixel
    of every frame.
    """
    if not (0 < band_inner_px <= band_outer_px):
        raise ValueError("need 0 < band_inner_px <= band_outer_px")
    union = roi.union()
    if not union.any():
        raise ValueError("ROI is empty in every frame")
    distance = ndimage.distance_transform_edt(~union)
    ring = (distance >= band_inner_px) & (distance <= band_outer_px)
    if not ring.any():
        raise InsufficientStationaryTissue("no pixels in the distance band around the ROI")
    ring_values = series.frames[:, ring].astype(np.float64)
    stds = ring_values.std(axis=0)
    keep = stds <= np.quantile(stds, variance_quantile)
    n_band = int(keep.sum())
    if n_band < min_band_pixels:
        raise InsufficientStationaryTissue(f"{n_band} quiet band pixels, need {min_band_pixels}")
    band = np.zeros_like(ring)
    band[tuple(idx[keep] for idx in np.nonzero(ring))] = True
    offset = float(np.median(ring_values[:, keep]))
    corrected = VelocityMapSeries(
        frames=series.frames.astype(np.float64) - offset,
        dt_ms=series.dt_ms,
        venc_mm_s=series.venc_mm_s,
        pixel_area_mm2=series.pixel_area_mm2,
    )
    return corrected, BackgroundEstimate(offset_mm_s=offset, band=band, n_band_pixels=n_band)


def _leave_one_out_medians(values: np.ndarray) -> np.ndarray:
    """Median of the other elements, for each element. len(values) >= 2."""
    n = values.size
    order = np.argsort(values, kind="stable")
    s = values[order]
    rank = np.empty(n, dtype=np.intp)
    rank[order] = np.arange(n)
    c = n - 1
    if c % 2 == 1:
        mi = c // 2
        return np.where(rank <= mi, s[mi + 1], s[mi])
    lo, hi = c // 2 - 1, c // 2
    lo_v = np.where(rank <= lo, s[lo + 1], s[lo])
    hi_v = np.where(rank <= hi, s[hi + 1], s[hi])
    return 0.5 * (lo_v + hi_v)


def unalias(series: VelocityMapSeries, roi: RoiSeries) -> VelocityMapSeries:
    """Unwrap ROI velocities that jumped by multiples of twice the limit.

    Per frame, each ROI pixel is compared with the median of the other ROI
    pixels; if it deviates by more than venc it is shifted by the multiple of
    2*venc that brings it closest to that median. One pass only, non-ROI
    pixels untouched. Pixels wrapped so far that they land within venc of the
    median (true speed beyond median + venc) cannot be recovered this way.
    """
    if len(roi) != series.n_frames:
        raise ValueError(f"ROI has {len(roi)} masks for {series.n_frames} frames")
    venc = series.venc_mm_s
    two_venc = 2.0 * venc
    frames = series.frames.astype(np.float64)
    for t, mask in enumerate(roi.masks):
        member = mask.membership
        if member.sum() < 2:
            continue
        vals = frames[t][member]
        deltas = _leave_one_out_medians(vals) - vals
        wrapped = np.abs(deltas) > venc
        if wrapped.any():
            vals[wrapped] += two_venc * np.round(deltas[wrapped] / two_venc)
            frames[t][member] = vals
    return VelocityMapSeries(
        frames=frames,
        dt_ms=series.dt_ms,
        venc_mm_s=series.venc_mm_s,
        pixel_area_mm2=series.pixel_area_mm2,
    )


def compute_flow(series: VelocityMapSeries, roi: RoiSeries) -> SampledSignal:
    """Integrate ROI velocities to a flow-rate signal in ml/min.

    Q(t) = 0.06 * pixel_area_mm2 * sum of ROI velocities (mm/s). Frames with
    an empty ROI yield Q = 0 (count them via RoiSeries.n_empty_frames for QC).
    """
    if len(roi) != series.n_frames:
        raise ValueError(f"ROI has {len(roi)} masks for {series.n_frames} frames")
    if roi.masks[0].membership.shape != (series.height, series.width):
        raise ValueError("ROI dimensions do not match the series")
    masks = roi.stacked()
    sums = np.where(masks, series.frames.astype(np.float64), 0.0).sum(axis=(1, 2))
    q = ML_MIN_PER_MM3_S * series.pixel_area_mm2 * sums
    return SampledSignal(t0_s=0.0, dt_s=series.dt_s, values=q, kind="flow")


def sum_flows(signals: list) -> SampledSignal:
    """Pointwise sum of flow signals sharing one sampling grid."""
    if not signals:
        raise GridMismatch("no signals to sum")
    first = signals[0]
    if len(signals) == 1:
        if first.kind != "flow":
            raise GridMismatch(f"expected flow signals, got kind {first.kind!r}")
        return first
    total = np.zeros_like(first.values)
    for s in signals:
        if s.kind != "flow":
            raise GridMismatch(f"expected flow signals, got kind {s.kind!r}")
        if len(s) != len(first):
            raise GridMismatch(f"signal lengths differ: {len(s)} vs {len(first)}")
        if abs(s.dt_s - first.dt_s) > 1e-9:
            raise GridMismatch(f"sampling intervals differ: {s.dt_s} vs {first.dt_s}")
        if abs(s.t0_s - first.t0_s) > 1e-9:
            raise GridMismatch(f"start times differ: {s.t0_s} vs {first.t0_s}")
        total += s.values
    return SampledSignal(t0_s=first.t0_s, dt_s=first.dt_s, values=total, kind="flow")


def quality_score(flow: SampledSignal, snr_threshold: float = 5.0) -> QcFlags:
    """Spectral cardiac SNR gate.

    cardiac_snr is the peak Welch-periodogram power in 0.7-2.0 Hz over the
    median power in 2.5-6.0 Hz; signals below snr_threshold are flagged for
    exclusion. The ratio is capped at 1e15 so it stays JSON-representable.
    """
    if len(flow) < 64:
        raise TooShort(f"quality gate needs >= 64 samples, got {len(flow)}")
    fs = 1.0 / flow.dt_s
    freqs, power = welch(flow.values, fs=fs, nperseg=min(256, len(flow)), detrend="constant")
    cardiac = (freqs >= 0.7) & (freqs <= 2.0)
    noise = (freqs >= 2.5) & (freqs <= 6.0)
    if not cardiac.any() or not noise.any():
        raise TooShort(f"sampling rate {fs:.3g} Hz cannot resolve the scoring bands")
    peak = float(power[cardiac].max())
    noise_floor = float(np.median(power[noise]))
    if peak <= 0.0:
        snr = 0.0
    elif noise_floor <= peak * 1e-15:
        snr = 1e15
    else:
        snr = peak / noise_floor
    return QcFlags(cardiac_snr=snr, excluded=snr < snr_threshold)
