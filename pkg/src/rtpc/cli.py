"""Command line surface: extract, analyze, simulate, report.

Exit codes are stable per error family (see errors module): 0 success,
2 usage, 3 file format / I-O, 4 extraction, 5 event detection, 6 phase
analysis, 7 statistics, 8 invalid simulation config. Partially written
outputs are removed when a command fails.
"""

from __future__ import annotations

import argparse
import json
import os
import re
import sys
from concurrent.futures import ThreadPoolExecutor
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .cycles import detect_cycles
from .diff import PARAMETERS, extract_result, finalize_scan, sweep_diffs
from .errors import InsufficientCycles, ParseError, RtpcError, TooShort
from .extraction import (
    RoiSeries,
    compute_flow,
    correct_background,
    quality_score,
    segment_roi,
    sum_flows,
    unalias,
)
from .io import (
    ArteryRecord,
    QcFlags,
    Report,
    SampledSignal,
    read_mask,
    read_report,
    read_signal_csv,
    read_velocity_header,
    read_velocity_series,
    write_mask,
    write_report,
    write_signal_csv,
    write_velocity_series,
)
from .respiration import detect_resp_intervals
from .svgplot import render_line_chart
from .synthgen import SimConfig, generate_signals, generate_velocity_series

USAGE_ERROR = 2


def worker_count() -> int:
    """Parallelism cap from RTPC_THREADS (0 or unset = auto)."""
    raw = os.environ.get("RTPC_THREADS", "0")
    try:
        n = int(raw)
    except ValueError:
        n = 0
    if n <= 0:
        n = os.cpu_count() or 1
    return n


def _seed_type(text: str) -> tuple:
    parts = text.split(",")
    if len(parts) != 2:
        raise argparse.ArgumentTypeError(f"seed must be X,Y got {text!r}")
    try:
        return (int(parts[0]), int(parts[1]))
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from exc


def _safe_name(name: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.-]+", "_", name)


def analyze_flow_signal(
    name: str,
    flow: SampledSignal,
    intervals,
    step_s: float = 0.075,
    min_cycles: int = 3,
    snr_threshold: float = 5.0,
) -> ArteryRecord:
    """Full single-artery analysis: QC, cycles, and the three delay scans."""
    try:
        qc = quality_score(flow, snr_threshold=snr_threshold)
    except TooShort:
        qc = QcFlags(cardiac_snr=None, excluded=False)
    cycles = detect_cycles(flow)
    valid = [c.params for c in cycles if c.valid]
    if not valid:
        raise InsufficientCycles(f"{name}: no valid cardiac cycles")
    delays, diffs = sweep_diffs(cycles, intervals, step_s=step_s, min_cycles=min_cycles)
    diff_records = {
        param: extract_result(finalize_scan(param, delays, diffs[param], intervals.mean_period_s))
        for param in PARAMETERS
    }
    return ArteryRecord(
        name=name,
        mean_flow_ml_min=float(np.mean([p.mean_flow_ml_min for p in valid])),
        stroke_volume_ml=float(np.mean([p.stroke_volume_ml for p in valid])),
        cardiac_period_s=float(np.mean([p.cardiac_period_s for p in valid])),
        n_cycles=len(valid),
        qc=qc,
        diff=diff_records,
    )


def _render_diff_svg(artery_name: str, parameter: str, record, out_path) -> None:
    render_line_chart(
        x=record.scan_delays_s,
        y=record.scan_diff_pct,
        path=out_path,
        title=f"{artery_name}: {parameter} Diff vs delay",
        x_label="delay (s)",
        y_label="Diff Ex-In (%)",
        marker=(record.delay_s, record.max_pct),
    )


# -- commands --------------------------------------------------------------------

def cmd_extract(args, written: list) -> int:
    header = read_velocity_header(args.series)
    if args.venc is not None and args.venc <= 0:
        print("rtpc extract: --venc must be positive", file=sys.stderr)
        return USAGE_ERROR
    if header["venc_mm_s"] == 0.0 and args.venc is None:
        print(
            "rtpc extract: series header has venc 0 (unknown); --venc MM_S is required",
            file=sys.stderr,
        )
        return USAGE_ERROR
    series = read_velocity_series(args.series, venc_mm_s=args.venc)
    if args.mask is not None:
        mask = read_mask(args.mask, series.width, series.height)
        roi = RoiSeries.from_static(mask, series.n_frames)
    else:
        roi = segment_roi(
            series,
            seed=args.seed,
            velocity_threshold_fraction=args.threshold_fraction,
            max_radius_px=args.max_radius_px,
        )

    background_offset = None
    n_band = None
    if not args.no_background_correction:
        series, estimate = correct_background(series, roi)
        background_offset = estimate.offset_mm_s
        n_band = estimate.n_band_pixels
    n_unaliased = None
    if not args.no_unalias:
        before = series.frames
        series = unalias(series, roi)
        n_unaliased = int(np.count_nonzero(series.frames != before))

    flow = compute_flow(series, roi)
    out = Path(args.out)
    written.append(out)
    write_signal_csv(flow, out)

    if args.qc is not None:
        try:
            qc = quality_score(flow, snr_threshold=args.snr_threshold)
            snr, excluded = qc.cardiac_snr, qc.excluded
        except TooShort:
            snr, excluded = None, None
        payload = {
            "cardiac_snr": snr,
            "excluded": excluded,
            "empty_roi_frames": roi.n_empty_frames(),
            "background_offset_mm_s": background_offset,
            "n_band_pixels": n_band,
            "n_unaliased_pixels": n_unaliased,
        }
        qc_path = Path(args.qc)
        written.append(qc_path)
        qc_path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return 0


def cmd_analyze(args, written: list) -> int:
    flow_paths = [p for chunk in args.flow for p in chunk.split(",") if p]
    if not flow_paths:
        print("rtpc analyze: no flow files given", file=sys.stderr)
        return USAGE_ERROR
    flows = [read_signal_csv(p, kind="flow") for p in flow_paths]
    resp = read_signal_csv(args.resp, kind="respiration")
    if args.invert_belt:
        resp = SampledSignal(t0_s=resp.t0_s, dt_s=resp.dt_s, values=-resp.values, kind="respiration")

    step_s = args.delay_step_ms / 1000.0
    config = {
        "diff_definition": "ex-in-over-in",
        "invert_belt": bool(args.invert_belt),
        "delay_step_s": step_s,
        "min_cycles_per_phase": args.min_cycles,
        "cycles": {
            "upsample_factor": 8,
            "period_band_s": [0.4, 2.0],
            "min_separation_fraction": 0.6,
            "validity_band": [0.6, 1.5],
        },
        "respiration": {
            "smooth_window_s": 0.5,
            "min_separation_s": 1.5,
            "prominence_fraction": 0.2,
        },
        "quality": {"snr_threshold": args.snr_threshold},
    }
    intervals = detect_resp_intervals(resp)

    jobs = [(Path(p).stem, f) for p, f in zip(flow_paths, flows)]
    if len(flows) > 1:
        jobs.append((args.name, sum_flows(flows)))

    def run(job):
        name, flow = job
        return analyze_flow_signal(
            name, flow, intervals, step_s=step_s, min_cycles=args.min_cycles,
            snr_threshold=args.snr_threshold,
        )

    workers = min(worker_count(), len(jobs))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(run, jobs))  # merged in input order
    else:
        records = [run(job) for job in jobs]

    report = Report(
        version=__version__,
        config=config,
        resp_period_s=intervals.mean_period_s,
        arteries=tuple(records),
        generated_at=datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ"),
    )
    out = Path(args.out)
    written.append(out)
    write_report(report, out)

    if args.plots is not None:
        plot_dir = Path(args.plots)
        plot_dir.mkdir(parents=True, exist_ok=True)
        for record in report.arteries:
            for param in PARAMETERS:
                path = plot_dir / f"{_safe_name(record.name)}_{param}.svg"
                written.append(path)
                _render_diff_svg(record.name, param, record.diff[param], path)
    return 0


def cmd_simulate(args, written: list) -> int:
    config = SimConfig.from_json(args.config)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    flow, resp, truth = generate_signals(config)
    flow_path, resp_path = out_dir / "flow.csv", out_dir / "resp.csv"
    written.extend([flow_path, resp_path])
    write_signal_csv(flow, flow_path)
    write_signal_csv(resp, resp_path)

    if args.with_images:
        series, mask, truth = generate_velocity_series(config)
        series_path, mask_path = out_dir / "series.rtpc", out_dir / "mask.pgm"
        written.extend([series_path, mask_path])
        write_velocity_series(series, series_path)
        write_mask(mask, mask_path)

    manifest = {"config": config.to_dict(), **truth.to_dict()}
    truth_path = out_dir / "truth.json"
    written.append(truth_path)
    truth_path.write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    return 0


def cmd_report(args, written: list) -> int:
    report = read_report(args.in_path)
    plot_dir = Path(args.plots)
    plot_dir.mkdir(parents=True, exist_ok=True)
    for record in report.arteries:
        for param in PARAMETERS:
            diff_record = record.diff[param]
            if diff_record.scan_delays_s is None:
                raise ParseError(
                    f"report has no scan data for {record.name!r}/{param}; "
                    "regenerate it with `rtpc analyze`"
                )
            path = plot_dir / f"{_safe_name(record.name)}_{param}.svg"
            written.append(path)
            _render_diff_svg(record.name, param, diff_record, path)
    return 0


# -- parser ----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rtpc",
        description="Quantify how breathing modulates pulsatile flow signals.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    pe = sub.add_parser("extract", help="velocity series + ROI -> flow CSV")
    pe.add_argument("--series", required=True, help="velocity series file (RTPC1)")
    roi = pe.add_mutually_exclusive_group(required=True)
    roi.add_argument("--mask", help="static ROI mask (binary PGM)")
    roi.add_argument("--seed", type=_seed_type, metavar="X,Y", help="segmentation seed pixel")
    pe.add_argument("--venc", type=float, metavar="MM_S",
                    help="encoding limit override (required when the header venc is 0)")
    pe.add_argument("--no-background-correction", action="store_true")
    pe.add_argument("--no-unalias", action="store_true")
    pe.add_argument("--threshold-fraction", type=float, default=0.5,
                    help="segmentation threshold as a fraction of the local p99 speed")
    pe.add_argument("--max-radius-px", type=float, default=12.0,
                    help="reference neighborhood radius around the seed")
    pe.add_argument("--snr-threshold", type=float, default=5.0,
                    help="cardiac SNR below this flags the signal for exclusion")
    pe.add_argument("--out", required=True, help="output flow CSV")
    pe.add_argument("--qc", help="optional QC sidecar JSON")
    pe.set_defaults(func=cmd_extract)

    pa = sub.add_parser("analyze", help="flow + belt CSVs -> report JSON (+ SVG plots)")
    pa.add_argument("--flow", action="append", required=True,
                    help="flow CSV path(s), comma-separated or repeated")
    pa.add_argument("--resp", required=True, help="respiration belt CSV")
    pa.add_argument("--delay-step-ms", type=float, default=75.0)
    pa.add_argument("--invert-belt", action="store_true",
                    help="belt amplitude falls on inhalation")
    pa.add_argument("--min-cycles", type=int, default=3)
    pa.add_argument("--name", default="CABF_extra",
                    help="record name for the summed signal (several --flow inputs)")
    pa.add_argument("--snr-threshold", type=float, default=5.0,
                    help="cardiac SNR below this flags a record for exclusion")
    pa.add_argument("--out", required=True, help="output report JSON")
    pa.add_argument("--plots", help="directory for Diff-vs-delay SVGs")
    pa.set_defaults(func=cmd_analyze)

    ps = sub.add_parser("simulate", help="synthesize a dataset with ground truth")
    ps.add_argument("--config", required=True, help="SimConfig JSON (partial configs allowed)")
    ps.add_argument("--out-dir", required=True)
    ps.add_argument("--with-images", action="store_true",
                    help="also write a velocity series and vessel mask")
    ps.set_defaults(func=cmd_simulate)

    pr = sub.add_parser("report", help="re-render SVG plots from a report JSON")
    pr.add_argument("--in", dest="in_path", required=True, help="report JSON")
    pr.add_argument("--plots", required=True, help="output directory")
    pr.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    written: list = []
    try:
        return args.func(args, written)
    except (RtpcError, OSError) as exc:
        for path in written:
            Path(path).unlink(missing_ok=True)
        print(f"rtpc {args.command}: error: {exc}", file=sys.stderr)
        return exc.exit_code if isinstance(exc, RtpcError) else 3


if __name__ == "__main__":
    sys.exit(main())
