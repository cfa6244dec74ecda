"""File formats: velocity-series binary, PGM masks, signal CSVs, report JSON.

Readers are strict: anything that does not match the documented layout raises
instead of guessing. Velocity frames and scalar header fields are kept at
32-bit float precision from construction on, so a series survives write/read
bit for bit.

Velocity series layout (little-endian throughout):

    bytes 0-4    magic "RTPC1"
    u32 x 3      width, height, n_frames
    f32 x 3      dt_ms, venc_mm_s, pixel_area_mm2
    payload      n_frames frames of height x width f32 velocities in mm/s,
                 row-major within a frame, frame-major overall
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    BadMagic,
    DimensionMismatch,
    InvalidHeader,
    IoFailure,
    NonFiniteVelocity,
    NonMonotoneTime,
    NonUniformSampling,
    NotPgm,
    ParseError,
    TooShort,
    TruncatedFile,
)

MAGIC = b"RTPC1"
HEADER_SIZE = len(MAGIC) + 12 + 12  # magic + three u32 + three f32

SIGNAL_KINDS = ("flow", "respiration")
CSV_HEADER = "time_s,value"

#: Canonical cycle parameter names, in report order.
REPORT_PARAMETERS = ("mean_flow", "stroke_volume", "cardiac_period")


# -- domain types ---------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class VelocityMapSeries:
    """Time-ordered per-pixel velocity frames with acquisition metadata.

    frames has shape (n_frames, height, width), float32, mm/s. Scalars are
    quantized through float32 at construction so in-memory values always
    match what the on-disk format can hold.
    """

    frames: np.ndarray
    dt_ms: float
    venc_mm_s: float
    pixel_area_mm2: float

    def __post_init__(self):
        frames = np.ascontiguousarray(np.asarray(self.frames, dtype=np.float32))
        if frames.ndim != 3 or min(frames.shape) < 1:
            raise InvalidHeader(
                f"frames must be a non-empty (n_frames, height, width) array, got shape {frames.shape}"
            )
        if not np.isfinite(frames).all():
            raise NonFiniteVelocity("velocity frames contain non-finite values")
        object.__setattr__(self, "frames", frames)
        for name in ("dt_ms", "venc_mm_s", "pixel_area_mm2"):
            value = float(np.float32(getattr(self, name)))
            if not math.isfinite(value) or value <= 0.0:
                raise InvalidHeader(f"{name} must be positive and finite, got {getattr(self, name)!r}")
            object.__setattr__(self, name, value)

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def height(self) -> int:
        return self.frames.shape[1]

    @property
    def width(self) -> int:
        return self.frames.shape[2]

    @property
    def dt_s(self) -> float:
        return self.dt_ms / 1000.0

    def __eq__(self, other) -> bool:
        if not isinstance(other, VelocityMapSeries):
            return NotImplemented
        return (
            self.frames.shape == other.frames.shape
            and self.dt_ms == other.dt_ms
            and self.venc_mm_s == other.venc_mm_s
            and self.pixel_area_mm2 == other.pixel_area_mm2
            and bool(np.array_equal(self.frames, other.frames))
        )


@dataclass(frozen=True, eq=False)
class RoiMask:
    """Boolean pixel membership, shape (height, width)."""

    membership: np.ndarray

    def __post_init__(self):
        mask = np.ascontiguousarray(np.asarray(self.membership, dtype=bool))
        if mask.ndim != 2 or min(mask.shape) < 1:
            raise DimensionMismatch(f"mask must be a non-empty 2-D array, got shape {mask.shape}")
        object.__setattr__(self, "membership", mask)

    @property
    def height(self) -> int:
        return self.membership.shape[0]

    @property
    def width(self) -> int:
        return self.membership.shape[1]

    @property
    def n_members(self) -> int:
        return int(self.membership.sum())

    def __eq__(self, other) -> bool:
        if not isinstance(other, RoiMask):
            return NotImplemented
        return bool(np.array_equal(self.membership, other.membership))


@dataclass(frozen=True, eq=False)
class SampledSignal:
    """Uniformly sampled time series (flow in ml/min or belt amplitude)."""

    t0_s: float
    dt_s: float
    values: np.ndarray
    kind: str

    def __post_init__(self):
        values = np.ascontiguousarray(np.asarray(self.values, dtype=np.float64))
        if values.ndim != 1:
            raise ParseError(f"signal values must be 1-D, got shape {values.shape}")
        if values.size < 2:
            raise TooShort(f"signal needs at least 2 samples, got {values.size}")
        if not np.isfinite(values).all():
            raise ParseError("signal contains non-finite values")
        if not (math.isfinite(self.dt_s) and self.dt_s > 0):
            raise NonMonotoneTime(f"dt_s must be positive, got {self.dt_s!r}")
        if self.kind not in SIGNAL_KINDS:
            raise ValueError(f"kind must be one of {SIGNAL_KINDS}, got {self.kind!r}")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "t0_s", float(self.t0_s))
        object.__setattr__(self, "dt_s", float(self.dt_s))

    def __len__(self) -> int:
        return self.values.size

    @property
    def times(self) -> np.ndarray:
        return self.t0_s + np.arange(self.values.size) * self.dt_s

    @property
    def duration_s(self) -> float:
        return (self.values.size - 1) * self.dt_s

    def __eq__(self, other) -> bool:
        if not isinstance(other, SampledSignal):
            return NotImplemented
        return (
            self.t0_s == other.t0_s
            and self.dt_s == other.dt_s
            and self.kind == other.kind
            and bool(np.array_equal(self.values, other.values))
        )


# -- report structures ------------------------------------------------------------

@dataclass(frozen=True)
class QcFlags:
    cardiac_snr: float | None
    excluded: bool

    def to_dict(self) -> dict:
        return {"cardiac_snr": self.cardiac_snr, "excluded": self.excluded}

    @classmethod
    def from_dict(cls, d: dict) -> "QcFlags":
        return cls(cardiac_snr=d["cardiac_snr"], excluded=bool(d["excluded"]))


@dataclass(frozen=True)
class DiffRecord:
    """Expiration-vs-inspiration difference summary for one parameter.

    scan_delays_s / scan_diff_pct optionally keep the full delay sweep so a
    report file alone can regenerate the Diff-vs-delay plot. Skipped delays
    are stored as None.
    """

    at_zero_pct: float | None
    max_pct: float
    delay_s: float
    delay_pct: float
    scan_delays_s: tuple[float, ...] | None = None
    scan_diff_pct: tuple[float | None, ...] | None = None

    def to_dict(self) -> dict:
        d = {
            "at_zero_pct": self.at_zero_pct,
            "max_pct": self.max_pct,
            "delay_s": self.delay_s,
            "delay_pct": self.delay_pct,
        }
        if self.scan_delays_s is not None:
            d["scan"] = {
                "delays_s": list(self.scan_delays_s),
                "diff_pct": list(self.scan_diff_pct),
            }
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "DiffRecord":
        scan = d.get("scan")
        return cls(
            at_zero_pct=d["at_zero_pct"],
            max_pct=float(d["max_pct"]),
            delay_s=float(d["delay_s"]),
            delay_pct=float(d["delay_pct"]),
            scan_delays_s=tuple(scan["delays_s"]) if scan else None,
            scan_diff_pct=tuple(scan["diff_pct"]) if scan else None,
        )


@dataclass(frozen=True)
class ArteryRecord:
    name: str
    mean_flow_ml_min: float
    stroke_volume_ml: float
    cardiac_period_s: float
    n_cycles: int
    qc: QcFlags
    diff: dict = field(default_factory=dict)  # parameter name -> DiffRecord

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "mean_flow_ml_min": self.mean_flow_ml_min,
            "stroke_volume_ml": self.stroke_volume_ml,
            "cardiac_period_s": self.cardiac_period_s,
            "n_cycles": self.n_cycles,
            "qc": self.qc.to_dict(),
            "diff": {p: self.diff[p].to_dict() for p in REPORT_PARAMETERS},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ArteryRecord":
        return cls(
            name=str(d["name"]),
            mean_flow_ml_min=float(d["mean_flow_ml_min"]),
            stroke_volume_ml=float(d["stroke_volume_ml"]),
            cardiac_period_s=float(d["cardiac_period_s"]),
            n_cycles=int(d["n_cycles"]),
            qc=QcFlags.from_dict(d["qc"]),
            diff={p: DiffRecord.from_dict(d["diff"][p]) for p in d["diff"]},
        )


@dataclass(frozen=True)
class Report:
    """Per-artery cycle summaries plus the three Diff-vs-delay records each."""

    version: str
    config: dict
    resp_period_s: float
    arteries: tuple[ArteryRecord, ...]
    generated_at: str | None = None

    def validate(self):
        if not (math.isfinite(self.resp_period_s) and self.resp_period_s > 0):
            raise ParseError(f"resp_period_s must be positive, got {self.resp_period_s!r}")
        for artery in self.arteries:
            if set(artery.diff) != set(REPORT_PARAMETERS):
                raise ParseError(
                    f"artery {artery.name!r} must carry exactly one diff record per parameter "
                    f"{REPORT_PARAMETERS}, got {sorted(artery.diff)}"
                )
            for param in REPORT_PARAMETERS:
                rec = artery.diff[param]
                expected_pct = 100.0 * rec.delay_s / self.resp_period_s
                if abs(rec.delay_pct - expected_pct) > 1e-6 * max(1.0, abs(expected_pct)):
                    raise ParseError(
                        f"delay_pct inconsistent for {artery.name!r}/{param}: "
                        f"{rec.delay_pct} vs 100*{rec.delay_s}/{self.resp_period_s}"
                    )
                if rec.scan_delays_s is not None and len(rec.scan_delays_s) != len(rec.scan_diff_pct):
                    raise ParseError(f"scan arrays of {artery.name!r}/{param} differ in length")

    def to_dict(self) -> dict:
        d = {
            "version": self.version,
            "config": self.config,
            "resp_period_s": self.resp_period_s,
            "arteries": [a.to_dict() for a in self.arteries],
        }
        if self.generated_at is not None:
            d["generated_at"] = self.generated_at
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Report":
        try:
            report = cls(
                version=str(d["version"]),
                config=dict(d["config"]),
                resp_period_s=float(d["resp_period_s"]),
                arteries=tuple(ArteryRecord.from_dict(a) for a in d["arteries"]),
                generated_at=d.get("generated_at"),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"malformed report: {exc}") from exc
        return report


# -- velocity series ------------------------------------------------------------

def read_velocity_header(path) -> dict:
    """Read just the fixed-size header. Raises BadMagic/TruncatedFile."""
    try:
        with open(path, "rb") as fh:
            head = fh.read(HEADER_SIZE)
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    if head[: len(MAGIC)] != MAGIC:
        raise BadMagic(f"{path} does not start with {MAGIC!r}")
    if len(head) < HEADER_SIZE:
        raise TruncatedFile(f"{path}: header truncated at {len(head)} bytes")
    width, height, n_frames = struct.unpack_from("<III", head, len(MAGIC))
    dt_ms, venc_mm_s, pixel_area_mm2 = struct.unpack_from("<fff", head, len(MAGIC) + 12)
    return {
        "width": width,
        "height": height,
        "n_frames": n_frames,
        "dt_ms": dt_ms,
        "venc_mm_s": venc_mm_s,
        "pixel_area_mm2": pixel_area_mm2,
    }


def read_velocity_series(path, venc_mm_s: float | None = None) -> VelocityMapSeries:
    """Parse a velocity-series file, bit-exact.

    venc_mm_s, when given, replaces the header value before validation; this
    is how files recorded with an unknown encoding limit (header venc 0) are
    loaded.
    """
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    if data[: len(MAGIC)] != MAGIC:
        raise BadMagic(f"{path} does not start with {MAGIC!r}")
    if len(data) < HEADER_SIZE:
        raise TruncatedFile(f"{path}: header truncated at {len(data)} bytes")
    width, height, n_frames = struct.unpack_from("<III", data, len(MAGIC))
    if min(width, height, n_frames) < 1:
        raise InvalidHeader(f"{path}: zero dimension in header ({width}x{height}, {n_frames} frames)")
    dt_ms, venc, pixel_area_mm2 = struct.unpack_from("<fff", data, len(MAGIC) + 12)
    if venc < 0:
        raise InvalidHeader(f"{path}: negative venc {venc} in header")
    if venc_mm_s is not None:
        venc = venc_mm_s
    expected = HEADER_SIZE + 4 * width * height * n_frames
    if len(data) < expected:
        raise TruncatedFile(f"{path}: {len(data)} bytes, header promises {expected}")
    if len(data) > expected:
        raise TruncatedFile(f"{path}: {len(data)} bytes, {len(data) - expected} trailing beyond header promise")
    frames = np.frombuffer(data, dtype="<f4", offset=HEADER_SIZE).reshape(n_frames, height, width)
    return VelocityMapSeries(frames=frames, dt_ms=dt_ms, venc_mm_s=venc, pixel_area_mm2=pixel_area_mm2)


def write_velocity_series(series: VelocityMapSeries, path) -> None:
    """Write a series so that read_velocity_series reproduces it exactly."""
    header = MAGIC + struct.pack("<III", series.width, series.height, series.n_frames)
    header += struct.pack("<fff", series.dt_ms, series.venc_mm_s, series.pixel_area_mm2)
    payload = np.ascontiguousarray(series.frames, dtype="<f4").tobytes()
    try:
        Path(path).write_bytes(header + payload)
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


# -- signal CSV -------------------------------------------------------------------

def read_signal_csv(path, kind: str) -> SampledSignal:
    """Parse a "time_s,value" CSV into a uniformly sampled signal.

    The time column is validated for strict monotony and uniform spacing
    (relative tolerance 1e-6); dt_s is then fixed to the median spacing.
    """
    if kind not in SIGNAL_KINDS:
        raise ValueError(f"kind must be one of {SIGNAL_KINDS}, got {kind!r}")
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    lines = [ln.strip() for ln in text.split("\n")]
    while lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise TooShort(f"{path}: empty file")
    if lines[0] != CSV_HEADER:
        raise ParseError(f"{path}: expected header {CSV_HEADER!r}, got {lines[0]!r}")
    times = []
    values = []
    for lineno, line in enumerate(lines[1:], start=2):
        if line == "":
            raise ParseError(f"{path}:{lineno}: blank line inside data")
        parts = line.split(",")
        if len(parts) != 2:
            raise ParseError(f"{path}:{lineno}: expected 2 fields, got {len(parts)}")
        try:
            t, v = float(parts[0]), float(parts[1])
        except ValueError as exc:
            raise ParseError(f"{path}:{lineno}: {exc}") from exc
        if not (math.isfinite(t) and math.isfinite(v)):
            raise ParseError(f"{path}:{lineno}: non-finite sample")
        times.append(t)
        values.append(v)
    if len(values) < 2:
        raise TooShort(f"{path}: need at least 2 samples, got {len(values)}")
    times = np.asarray(times)
    diffs = np.diff(times)
    if not (diffs > 0).all():
        raise NonMonotoneTime(f"{path}: time column is not strictly increasing")
    dt = float(np.median(diffs))
    if np.abs(diffs - dt).max() > 1e-6 * dt:
        raise NonUniformSampling(
            f"{path}: spacing varies by {np.abs(diffs - dt).max():.3g} s around median {dt:.9g} s"
        )
    return SampledSignal(t0_s=float(times[0]), dt_s=dt, values=np.asarray(values), kind=kind)


def write_signal_csv(signal: SampledSignal, path) -> None:
    """Write a signal CSV, LF line endings.

    Times use shortest round-trip formatting (so the uniform-spacing check
    survives re-reading exactly); values carry 10 significant digits, which
    keeps the round trip within 1e-9 relative.
    """
    rows = [CSV_HEADER]
    for i, v in enumerate(signal.values):
        t = signal.t0_s + i * signal.dt_s
        rows.append(f"{float(t)!r},{v:.10g}")
    try:
        Path(path).write_text("\n".join(rows) + "\n", encoding="utf-8")
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


# -- PGM masks --------------------------------------------------------------------

def _pgm_tokens(data: bytes):
    """Yield whitespace-separated header tokens, honoring '#' comments."""
    pos = 0
    while True:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            return
        yield data[start:pos].decode("ascii", errors="replace"), pos


def read_mask(path, expected_width: int, expected_height: int) -> RoiMask:
    """Read a binary PGM (P5, maxval <= 255); any nonzero pixel is a member."""
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    tokens = _pgm_tokens(data)
    try:
        (magic, _), (w_tok, _), (h_tok, _), (maxval_tok, end) = (
            next(tokens), next(tokens), next(tokens), next(tokens))
    except StopIteration:
        raise NotPgm(f"{path}: incomplete PGM header") from None
    if magic != "P5":
        raise NotPgm(f"{path}: expected P5, got {magic!r}")
    try:
        width, height, maxval = int(w_tok), int(h_tok), int(maxval_tok)
    except ValueError:
        raise NotPgm(f"{path}: non-numeric PGM header fields") from None
    if width < 1 or height < 1 or not (0 < maxval <= 255):
        raise NotPgm(f"{path}: unsupported PGM geometry {width}x{height} maxval {maxval}")
    if (width, height) != (expected_width, expected_height):
        raise DimensionMismatch(
            f"{path}: mask is {width}x{height}, expected {expected_width}x{expected_height}"
        )
    raster = data[end + 1 : end + 1 + width * height]
    if len(raster) != width * height:
        raise NotPgm(f"{path}: raster has {len(raster)} bytes, expected {width * height}")
    membership = np.frombuffer(raster, dtype=np.uint8).reshape(height, width) > 0
    return RoiMask(membership=membership)


def write_mask(mask: RoiMask, path) -> None:
    """Write a mask as binary PGM: members 255, the rest 0."""
    header = f"P5\n{mask.width} {mask.height}\n255\n".encode("ascii")
    raster = np.where(mask.membership, 255, 0).astype(np.uint8).tobytes()
    try:
        Path(path).write_bytes(header + raster)
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


# -- report JSON ------------------------------------------------------------------

def write_report(report: Report, path) -> None:
    """Validate and emit the report JSON (sorted keys, stable formatting)."""
    report.validate()
    try:
        Path(path).write_text(
            json.dumps(report.to_dict(), indent=2, sort_keys=True, allow_nan=False) + "\n",
            encoding="utf-8",
        )
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc
    except ValueError as exc:
        raise ParseError(f"report contains non-finite values: {exc}") from exc


def read_report(path) -> Report:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: {exc}") from exc
    report = Report.from_dict(d)
    report.validate()
    return report
