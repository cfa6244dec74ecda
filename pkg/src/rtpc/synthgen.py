"""Synthetic pulsatile flow, belt signals, and miniature velocity-map series
with known ground truth.

The cardiac waveform is a gamma pulse (fast systolic upstroke, slow decay)
on a diastolic floor, normalized to unit mean, so each cycle's true mean
flow equals its scale factor by construction. Cardiac phase advances with an
instantaneous period modulated by the breathing phase; the per-cycle flow
scale is modulated the same way, evaluated at the cycle midpoint. Modulation
is one-sided: the parameter is elevated during expiration and at baseline
during inspiration, so a +10% setting yields a true EX/IN ratio of exactly
1.10. The belt records the breathing waveform without delay; a positive
sensor delay shifts only the modulation, i.e. the flow response lags the
belt.

Image series realize the (possibly noisy) flow signal through a parabolic
disk-vessel profile scaled per frame so the discrete velocity integral
reproduces the flow exactly, then add an eddy-current offset everywhere and
wrap a random subset of above-limit pixels by -2*venc. Wrapping happens
after float32 quantization, so unwrapping restores the stored frames
bit for bit.

Everything is deterministic given the config (including its seed).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from typing import NamedTuple

import numpy as np
from scipy.special import gamma as gamma_fn, gammainc

from .errors import InvalidConfig
from .io import RoiMask, SampledSignal, VelocityMapSeries

BELT_WAVEFORMS = ("sine", "rounded-square")
MODULATION_SHAPES = ("square", "sine")

#: Clearance (pixels) required between the vessel edge and the image border,
#: enough for the default background band plus one pixel.
VESSEL_MARGIN_PX = 7


# -- configuration ---------------------------------------------------------------

@dataclass(frozen=True)
class WaveformConfig:
    shape: float = 3.0
    scale: float = 0.18
    floor: float = 0.3


@dataclass(frozen=True)
class CardiacConfig:
    base_period_s: float = 0.94
    base_mean_flow_ml_min: float = 740.0
    waveform: WaveformConfig = field(default_factory=WaveformConfig)


@dataclass(frozen=True)
class RespirationConfig:
    period_s: float = 4.3
    belt_waveform: str = "sine"


@dataclass(frozen=True)
class ModulationConfig:
    mean_flow_pct: float = 0.0
    period_pct: float = 0.0
    shape: str = "square"
    sensor_delay_s: float = 0.0


@dataclass(frozen=True)
class ArtifactConfig:
    eddy_offset_mm_s: float = 0.0
    aliased_pixel_fraction: float = 0.0
    noise_sd: float = 0.0


@dataclass(frozen=True)
class GridConfig:
    width: int = 32
    height: int = 32


@dataclass(frozen=True)
class VesselConfig:
    radius_px: float = 6.0
    grid: GridConfig = field(default_factory=GridConfig)
    peak_velocity_mm_s: float = 760.0  # nominal center velocity at base mean flow
    venc_mm_s: float = 1000.0
    pixel_area_mm2: float = 0.25


@dataclass(frozen=True)
class SimConfig:
    duration_s: float = 60.0
    dt_ms: float = 75.0
    cardiac: CardiacConfig = field(default_factory=CardiacConfig)
    respiration: RespirationConfig = field(default_factory=RespirationConfig)
    modulation: ModulationConfig = field(default_factory=ModulationConfig)
    artifacts: ArtifactConfig = field(default_factory=ArtifactConfig)
    vessel: VesselConfig = field(default_factory=VesselConfig)
    seed: int = 0

    def validate(self):
        if self.dt_ms <= 0:
            raise InvalidConfig(f"dt_ms must be positive, got {self.dt_ms}")
        if self.cardiac.base_period_s <= 0 or self.respiration.period_s <= 0:
            raise InvalidConfig("cardiac and respiratory periods must be positive")
        minimum = max(6.0, 2.0 * self.respiration.period_s)
        if self.duration_s < minimum:
            raise InvalidConfig(
                f"duration {self.duration_s} s too short for analysis minimums ({minimum} s)"
            )
        if self.cardiac.base_mean_flow_ml_min <= 0:
            raise InvalidConfig("base_mean_flow_ml_min must be positive")
        wf = self.cardiac.waveform
        if wf.shape <= 1 or wf.scale <= 0 or wf.floor < 0:
            raise InvalidConfig(f"bad pulse waveform parameters {wf}")
        for name, pct in (("mean_flow_pct", self.modulation.mean_flow_pct),
                          ("period_pct", self.modulation.period_pct)):
            if not -50.0 < pct < 50.0:
                raise InvalidConfig(f"{name} must lie in (-50, 50), got {pct}")
        if self.modulation.shape not in MODULATION_SHAPES:
            raise InvalidConfig(f"modulation shape must be one of {MODULATION_SHAPES}")
        if self.modulation.sensor_delay_s < 0:
            raise InvalidConfig("sensor_delay_s must be >= 0")
        if self.respiration.belt_waveform not in BELT_WAVEFORMS:
            raise InvalidConfig(f"belt_waveform must be one of {BELT_WAVEFORMS}")
        if self.artifacts.noise_sd < 0:
            raise InvalidConfig("noise_sd must be >= 0")
        if not 0.0 <= self.artifacts.aliased_pixel_fraction <= 1.0:
            raise InvalidConfig("aliased_pixel_fraction must lie in [0, 1]")
        if self.vessel.venc_mm_s <= 0 or self.vessel.pixel_area_mm2 <= 0:
            raise InvalidConfig("vessel venc_mm_s and pixel_area_mm2 must be positive")
        if int(self.seed) != self.seed or self.seed < 0:
            raise InvalidConfig(f"seed must be a nonnegative integer, got {self.seed!r}")

    def to_dict(self) -> dict:
        return {
            "duration_s": self.duration_s,
            "dt_ms": self.dt_ms,
            "cardiac": {
                "base_period_s": self.cardiac.base_period_s,
                "base_mean_flow_ml_min": self.cardiac.base_mean_flow_ml_min,
                "waveform": {
                    "shape": self.cardiac.waveform.shape,
                    "scale": self.cardiac.waveform.scale,
                    "floor": self.cardiac.waveform.floor,
                },
            },
            "respiration": {
                "period_s": self.respiration.period_s,
                "belt_waveform": self.respiration.belt_waveform,
            },
            "modulation": {
                "mean_flow_pct": self.modulation.mean_flow_pct,
                "period_pct": self.modulation.period_pct,
                "shape": self.modulation.shape,
                "sensor_delay_s": self.modulation.sensor_delay_s,
            },
            "artifacts": {
                "eddy_offset_mm_s": self.artifacts.eddy_offset_mm_s,
                "aliased_pixel_fraction": self.artifacts.aliased_pixel_fraction,
                "noise_sd": self.artifacts.noise_sd,
            },
            "vessel": {
                "radius_px": self.vessel.radius_px,
                "grid": {"width": self.vessel.grid.width, "height": self.vessel.grid.height},
                "peak_velocity_mm_s": self.vessel.peak_velocity_mm_s,
                "venc_mm_s": self.vessel.venc_mm_s,
                "pixel_area_mm2": self.vessel.pixel_area_mm2,
            },
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SimConfig":
        """Build a config from a (possibly partial) dict merged over defaults."""
        merged = _merge_config(cls().to_dict(), d, path="")
        v = merged["vessel"]
        cfg = cls(
            duration_s=float(merged["duration_s"]),
            dt_ms=float(merged["dt_ms"]),
            cardiac=CardiacConfig(
                base_period_s=float(merged["cardiac"]["base_period_s"]),
                base_mean_flow_ml_min=float(merged["cardiac"]["base_mean_flow_ml_min"]),
                waveform=WaveformConfig(
                    shape=float(merged["cardiac"]["waveform"]["shape"]),
                    scale=float(merged["cardiac"]["waveform"]["scale"]),
                    floor=float(merged["cardiac"]["waveform"]["floor"]),
                ),
            ),
            respiration=RespirationConfig(
                period_s=float(merged["respiration"]["period_s"]),
                belt_waveform=str(merged["respiration"]["belt_waveform"]),
            ),
            modulation=ModulationConfig(
                mean_flow_pct=float(merged["modulation"]["mean_flow_pct"]),
                period_pct=float(merged["modulation"]["period_pct"]),
                shape=str(merged["modulation"]["shape"]),
                sensor_delay_s=float(merged["modulation"]["sensor_delay_s"]),
            ),
            artifacts=ArtifactConfig(
                eddy_offset_mm_s=float(merged["artifacts"]["eddy_offset_mm_s"]),
                aliased_pixel_fraction=float(merged["artifacts"]["aliased_pixel_fraction"]),
                noise_sd=float(merged["artifacts"]["noise_sd"]),
            ),
            vessel=VesselConfig(
                radius_px=float(v["radius_px"]),
                grid=GridConfig(width=int(v["grid"]["width"]), height=int(v["grid"]["height"])),
                peak_velocity_mm_s=float(v["peak_velocity_mm_s"]),
                venc_mm_s=float(v["venc_mm_s"]),
                pixel_area_mm2=float(v["pixel_area_mm2"]),
            ),
            seed=int(merged["seed"]),
        )
        cfg.validate()
        return cfg

    @classmethod
    def from_json(cls, path) -> "SimConfig":
        try:
            d = json.loads(json.dumps(json.loads(open(path, encoding="utf-8").read())))
        except (OSError, json.JSONDecodeError) as exc:
            raise InvalidConfig(f"cannot load config {path}: {exc}") from exc
        if not isinstance(d, dict):
            raise InvalidConfig(f"{path}: config must be a JSON object")
        return cls.from_dict(d)


def _merge_config(defaults: dict, override: dict, path: str) -> dict:
    merged = dict(defaults)
    for key, value in override.items():
        here = f"{path}.{key}" if path else key
        if key not in defaults:
            raise InvalidConfig(f"unknown config key {here!r}")
        if isinstance(defaults[key], dict):
            if not isinstance(value, dict):
                raise InvalidConfig(f"config key {here!r} must be an object")
            merged[key] = _merge_config(defaults[key], value, here)
        else:
            merged[key] = value
    return merged


# -- ground truth -----------------------------------------------------------------

@dataclass(frozen=True)
class TrueCycle:
    start_s: float
    end_s: float
    phase: str  # "EX" | "IN", from the modulation at the cycle midpoint
    mean_flow_ml_min: float
    stroke_volume_ml: float
    cardiac_period_s: float


@dataclass(frozen=True)
class GroundTruth:
    """Per-cycle truth, consistent with the emitted signals by construction."""

    cycles: tuple
    sensor_delay_s: float
    resp_period_s: float
    eddy_offset_mm_s: float = 0.0
    wrapped_pixels: tuple = ()  # (frame, y, x) triples
    nominal_peak_velocity_mm_s: float | None = None

    def boundaries(self) -> np.ndarray:
        if not self.cycles:
            return np.empty(0)
        return np.asarray([c.start_s for c in self.cycles] + [self.cycles[-1].end_s])

    def to_dict(self) -> dict:
        return {
            "sensor_delay_s": self.sensor_delay_s,
            "resp_period_s": self.resp_period_s,
            "eddy_offset_mm_s": self.eddy_offset_mm_s,
            "nominal_peak_velocity_mm_s": self.nominal_peak_velocity_mm_s,
            "wrapped_pixels": [list(p) for p in self.wrapped_pixels],
            "cycles": [
                {
                    "start_s": c.start_s,
                    "end_s": c.end_s,
                    "phase": c.phase,
                    "mean_flow_ml_min": c.mean_flow_ml_min,
                    "stroke_volume_ml": c.stroke_volume_ml,
                    "cardiac_period_s": c.cardiac_period_s,
                }
                for c in self.cycles
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GroundTruth":
        return cls(
            cycles=tuple(TrueCycle(**c) for c in d["cycles"]),
            sensor_delay_s=float(d["sensor_delay_s"]),
            resp_period_s=float(d["resp_period_s"]),
            eddy_offset_mm_s=float(d["eddy_offset_mm_s"]),
            wrapped_pixels=tuple(tuple(p) for p in d["wrapped_pixels"]),
            nominal_peak_velocity_mm_s=d.get("nominal_peak_velocity_mm_s"),
        )


class SignalBundle(NamedTuple):
    flow: SampledSignal
    resp: SampledSignal
    truth: GroundTruth


class ImageBundle(NamedTuple):
    series: VelocityMapSeries
    mask: RoiMask
    truth: GroundTruth


# -- waveforms --------------------------------------------------------------------

_TAPER = 4  # tail taper exponent; closes the pulse to the floor at u = 1


def pulse_waveform(u, shape: float = 3.0, scale: float = 0.18, floor: float = 0.3):
    """Unit-mean cardiac pulse over cycle phase u in [0, 1).

    A gamma pulse (fast upstroke, slow decay), tapered by (1 - u^4) so it
    returns exactly to the diastolic floor at the end of the cycle, riding on
    that floor. The result integrates to 1 over the cycle, so a cycle scaled
    by S has true mean flow S, and the minimum sits at u = 0 (the boundary).
    """
    u = np.asarray(u, dtype=np.float64)
    # integral of u^(shape-1) exp(-u/scale) (1 - u^taper) over [0, 1]
    norm = scale**shape * gamma_fn(shape) * gammainc(shape, 1.0 / scale)
    norm -= scale ** (shape + _TAPER) * gamma_fn(shape + _TAPER) * gammainc(shape + _TAPER, 1.0 / scale)
    g = np.power(u, shape - 1.0, where=u > 0, out=np.zeros_like(u)) * np.exp(-u / scale)
    g = g * (1.0 - u**_TAPER)
    return (g / norm + floor) / (1.0 + floor)


def _resp_fraction(t, period_s: float):
    return np.mod(np.asarray(t, dtype=np.float64) / period_s, 1.0)


def is_expiratory(t, period_s: float):
    """True while the belt falls (peak-to-trough half of the breath)."""
    frac = _resp_fraction(t, period_s)
    return (frac > 0.25) & (frac < 0.75)


def modulation_waveform(t, period_s: float, shape: str):
    """One-sided modulation in [0, 1]: 1 at mid-expiration, 0 at mid-inspiration."""
    if shape == "square":
        return is_expiratory(t, period_s).astype(np.float64)
    if shape == "sine":
        return 0.5 * (1.0 - np.cos(2.0 * np.pi * _resp_fraction(t, period_s)))
    raise InvalidConfig(f"modulation shape must be one of {MODULATION_SHAPES}, got {shape!r}")


def belt_waveform(t, period_s: float, kind: str):
    """Belt amplitude: rising during inhalation, trough at frac 0.75, peak at 0.25."""
    phase = 2.0 * np.pi * _resp_fraction(t, period_s)
    if kind == "sine":
        return np.sin(phase)
    if kind == "rounded-square":
        return np.tanh(4.0 * np.sin(phase)) / math.tanh(4.0)
    raise InvalidConfig(f"belt_waveform must be one of {BELT_WAVEFORMS}, got {kind!r}")


# -- generators -------------------------------------------------------------------

def generate_signals(config: SimConfig) -> SignalBundle:
    """Synthesize flow and belt signals plus per-cycle ground truth.

    Cycles are generated by the recurrence b[k+1] = b[k] + T[k] with both the
    period and the flow scale modulated per cycle,

        T[k]     = base_period * (1 + period_pct/100    * m(t_eval - delay))
        scale[k] = base_mean   * (1 + mean_flow_pct/100 * m(t_eval - delay))

    where t_eval = b[k] + base_period/2 is the projected cycle midpoint (it
    equals the actual midpoint whenever the period is unmodulated). Applying
    the modulation per cycle keeps the per-cycle ground truth exact: a
    breathing-phase average recovers exactly the configured percentage. The
    recording starts half a base period into a cycle, so the first boundary
    is an interior minimum. Gaussian noise of noise_sd (ml/min) is added to
    the flow samples only.
    """
    config.validate()
    dt = config.dt_ms / 1000.0
    n = int(round(config.duration_s / dt))
    if n < 2:
        raise InvalidConfig(f"duration {config.duration_s} s yields {n} samples")
    t_last = (n - 1) * dt

    mod = config.modulation
    resp_period = config.respiration.period_s
    base_period = config.cardiac.base_period_s
    base_mean = config.cardiac.base_mean_flow_ml_min

    def cycle_of(start: float) -> tuple:
        """(period, scale, is_ex) for the cycle starting at start."""
        t_eval = start + 0.5 * base_period
        m = float(modulation_waveform(t_eval - mod.sensor_delay_s, resp_period, mod.shape))
        period = base_period * (1.0 + mod.period_pct / 100.0 * m)
        scale = base_mean * (1.0 + mod.mean_flow_pct / 100.0 * m)
        return period, scale, bool(is_expiratory(t_eval - mod.sensor_delay_s, resp_period))

    starts = [-0.5 * base_period]  # recording starts mid-cycle
    periods = []
    scales = []
    phases = []
    while True:
        period, scale, ex = cycle_of(starts[-1])
        periods.append(period)
        scales.append(scale)
        phases.append("EX" if ex else "IN")
        nxt = starts[-1] + period
        if nxt > t_last:
            break
        starts.append(nxt)
    bounds = np.asarray(starts + [starts[-1] + periods[-1]])

    t_samples = np.arange(n) * dt
    cell = np.clip(np.searchsorted(bounds, t_samples, side="right") - 1, 0, len(periods) - 1)
    u = (t_samples - bounds[cell]) / np.asarray(periods)[cell]
    wf = config.cardiac.waveform
    flow_values = np.asarray(scales)[cell] * pulse_waveform(
        u, shape=wf.shape, scale=wf.scale, floor=wf.floor
    )
    if config.artifacts.noise_sd > 0:
        rng = np.random.default_rng([config.seed, 0])
        flow_values = flow_values + rng.normal(0.0, config.artifacts.noise_sd, n)

    belt = belt_waveform(t_samples, resp_period, config.respiration.belt_waveform)

    cycles = []
    for k in range(1, len(periods)):  # skip the lead-in; keep fully recorded cycles
        if bounds[k + 1] > t_last:
            break
        cycles.append(
            TrueCycle(
                start_s=float(bounds[k]),
                end_s=float(bounds[k + 1]),
                phase=phases[k],
                mean_flow_ml_min=scales[k],
                stroke_volume_ml=scales[k] * periods[k] / 60.0,
                cardiac_period_s=periods[k],
            )
        )
    truth = GroundTruth(
        cycles=tuple(cycles),
        sensor_delay_s=mod.sensor_delay_s,
        resp_period_s=resp_period,
    )
    return SignalBundle(
        flow=SampledSignal(t0_s=0.0, dt_s=dt, values=flow_values, kind="flow"),
        resp=SampledSignal(t0_s=0.0, dt_s=dt, values=belt, kind="respiration"),
        truth=truth,
    )


def generate_velocity_series(config: SimConfig) -> ImageBundle:
    """Render the flow signal as a parabolic disk-vessel velocity series.

    Per frame the profile is scaled so the discrete velocity integral equals
    the flow sample exactly; the eddy offset is added everywhere; a random
    aliased_pixel_fraction of the pixels exceeding venc is wrapped by
    -2*venc after float32 quantization (so unwrapping is bit-exact). The
    truth manifest gains the vessel mask side effects: eddy offset, wrapped
    pixel set, and the derived nominal peak velocity at base mean flow.
    """
    config.validate()
    vessel = config.vessel
    if vessel.radius_px < 2:
        raise InvalidConfig(f"vessel radius must be >= 2 px, got {vessel.radius_px}")
    width, height = vessel.grid.width, vessel.grid.height
    cx, cy = width // 2, height // 2
    reach = vessel.radius_px + VESSEL_MARGIN_PX
    if cx - reach < 0 or cy - reach < 0 or cx + reach > width - 1 or cy + reach > height - 1:
        raise InvalidConfig(
            f"grid {width}x{height} too small for radius {vessel.radius_px} px "
            f"plus {VESSEL_MARGIN_PX} px margin"
        )
    flow, _resp, truth = generate_signals(config)

    yy, xx = np.mgrid[0:height, 0:width]
    dist = np.sqrt((xx - cx) ** 2 + (yy - cy) ** 2)
    member = dist <= vessel.radius_px
    profile = np.zeros((height, width))
    profile[member] = 1.0 - (dist[member] / (vessel.radius_px + 0.5)) ** 2
    profile_sum = float(profile[member].sum())

    # ml/min -> mm^3/s -> required velocity sum (mm/s) over member pixels.
    target_sums = flow.values / (0.06 * vessel.pixel_area_mm2)
    frames = np.zeros((len(flow), height, width))
    frames[:, member] = np.outer(target_sums / profile_sum, profile[member])
    nominal_peak = (
        config.cardiac.base_mean_flow_ml_min / (0.06 * vessel.pixel_area_mm2) / profile_sum
    )
    if config.artifacts.eddy_offset_mm_s != 0.0:
        frames += config.artifacts.eddy_offset_mm_s

    frames32 = frames.astype(np.float32)
    wrapped = []
    fraction = config.artifacts.aliased_pixel_fraction
    if fraction > 0:
        two_venc = np.float32(2.0 * vessel.venc_mm_s)
        member_ys, member_xs = np.nonzero(member)
        for t in range(frames32.shape[0]):
            over = frames32[t, member_ys, member_xs] > vessel.venc_mm_s
            candidates = np.flatnonzero(over)
            n_wrap = int(round(fraction * candidates.size))
            if n_wrap == 0:
                continue
            rng = np.random.default_rng([config.seed, 2, t])
            chosen = rng.choice(candidates, size=n_wrap, replace=False)
            ys, xs = member_ys[chosen], member_xs[chosen]
            frames32[t, ys, xs] -= two_venc
            wrapped.extend((t, int(y), int(x)) for y, x in zip(ys, xs))
    wrapped.sort()

    series = VelocityMapSeries(
        frames=frames32,
        dt_ms=config.dt_ms,
        venc_mm_s=vessel.venc_mm_s,
        pixel_area_mm2=vessel.pixel_area_mm2,
    )
    truth = replace(
        truth,
        eddy_offset_mm_s=config.artifacts.eddy_offset_mm_s,
        wrapped_pixels=tuple(wrapped),
        nominal_peak_velocity_mm_s=float(nominal_peak),
    )
    return ImageBundle(series=series, mask=RoiMask(membership=member), truth=truth)
