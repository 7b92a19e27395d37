"""Command-line interface: the analysis pipeline as subcommands.

Every run writes a manifest JSON next to its primary output with the
resolved parameters, input/output paths, tool version, and wall time,
so any result can be traced back to the exact invocation.  Outputs are
deterministic given the same inputs; the manifest is the only file that
differs between identical reruns.

Exit codes: 0 success, 1 usage error, 2 malformed or insufficient data,
3 degraded result (outputs still written, e.g. calibration with gaps).
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
import time

import numpy as np

from . import __version__
from .coincidence import (DEFAULT_WINDOW_PS, DeltaHistogram, build_histogram,
                          normalize_histogram)
from .crosstalk import DEFAULT_D_MAX, DEFAULT_N_HOT, ct_scan
from .errors import CalibrationError, DataError, FitError, StreamFormatError
from .offsets import DelayVector, apply_delays, measure_offsets, solve_delays
from .peakfit import fit_gaussian, fit_two_peaks
from .rates import DEFAULT_HOT_THRESHOLD_CPS, compute_rates
from .simulator import SimConfig, simulate
from .svg import ct_curve_svg, histogram_svg
from .tdc import TdcLut, apply_lut
from .timestream import PhotonStream

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_DEGRADED = 3

_ERRORS = (DataError, StreamFormatError, CalibrationError, FitError)


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on usage problems; the contract here is 1.
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


@dataclasses.dataclass(frozen=True)
class RunManifest:
    """Record of one CLI run, written next to its primary output."""

    subcommand: str
    config: dict
    inputs: tuple[str, ...]
    outputs: tuple[str, ...]
    version: str
    wall_time_s: float
    seed: int | None = None

    def to_json_dict(self) -> dict:
        return {
            "schema_version": 1,
            "kind": "run_manifest",
            "subcommand": self.subcommand,
            "config": self.config,
            "inputs": list(self.inputs),
            "outputs": list(self.outputs),
            "version": self.version,
            "wall_time_s": self.wall_time_s,
            "seed": self.seed,
        }

    def write(self, path: str) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json_dict(), fh, indent=2, sort_keys=True)


def _manifest(args, inputs, outputs, t0, seed=None) -> None:
    skip = {"func", "command", "log_level", "threads"}
    config = {k: v for k, v in vars(args).items() if k not in skip}
    primary = outputs[0]
    path = os.path.join(primary, "manifest.json") if os.path.isdir(primary) \
        else primary + ".manifest.json"
    RunManifest(
        subcommand=args.command, config=config,
        inputs=tuple(inputs), outputs=tuple(outputs),
        version=__version__, wall_time_s=round(time.monotonic() - t0, 3),
        seed=seed,
    ).write(path)


def _pair(text: str) -> tuple[int, int]:
    try:
        a, b = (int(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(
            f"expected 'A,B' pixel pair, got {text!r}") from None
    return a, b


def _load_json(path: str) -> dict:
    with open(path) as fh:
        try:
            return json.load(fh)
        except json.JSONDecodeError as exc:
            raise DataError(f"{path} is not valid JSON: {exc}") from None


def _read_stream(path: str, lut_path: str | None = None) -> PhotonStream:
    stream = PhotonStream.read(path)
    if lut_path is not None:
        stream = apply_lut(stream, TdcLut.load(lut_path, stream.sensor))
    return stream


def _load_delays(path: str | None) -> np.ndarray | None:
    if path is None:
        return None
    return DelayVector.load(path).delays_ps


# ---------------------------------------------------------------------------
# subcommands

def _cmd_simulate(args) -> int:
    t0 = time.monotonic()
    config = SimConfig.from_json_dict(_load_json(args.config))
    if args.seed is not None:
        config = dataclasses.replace(config, seed=args.seed)
    stream, truth = simulate(config)
    stream.write(args.out)
    outputs = [args.out]
    if args.truth is not None:
        with open(args.truth, "w") as fh:
            json.dump(truth.to_json_dict(), fh)
        outputs.append(args.truth)
    _manifest(args, [args.config], outputs, t0, seed=config.seed)
    return EXIT_OK


def _cmd_dcr(args) -> int:
    t0 = time.monotonic()
    stream = _read_stream(getattr(args, "in"))
    report = compute_rates(stream, hot_threshold_cps=args.hot_threshold,
                           n_subsets=args.subsets)
    with open(args.out, "w") as fh:
        json.dump(report.to_json_dict(), fh)
    _manifest(args, [getattr(args, "in")], [args.out], t0)
    return EXIT_OK


def _cmd_coincidence(args) -> int:
    t0 = time.monotonic()
    stream = _read_stream(getattr(args, "in"), args.lut)
    hist = build_histogram(stream, args.pair, args.window, args.bin,
                           delays=_load_delays(args.delays))
    try:
        hist = normalize_histogram(hist)
    except DataError:
        pass  # too sparse to normalize; counts alone are still useful
    hist.save(args.out)
    inputs = [p for p in (getattr(args, "in"), args.delays, args.lut) if p]
    _manifest(args, inputs, [args.out], t0)
    return EXIT_OK


def _cmd_fit(args) -> int:
    t0 = time.monotonic()
    hist = DeltaHistogram.load(getattr(args, "in"))
    if args.two_peaks:
        fit = fit_two_peaks(hist, separation_hint_ps=args.hint)
        kind = "two_peak_fit"
    else:
        fit = fit_gaussian(hist)
        kind = "gaussian_fit"
    doc = {"schema_version": 1, "kind": kind}
    doc.update(fit.to_json_dict())
    with open(args.out, "w") as fh:
        json.dump(doc, fh)
    outputs = [args.out]
    if args.svg is not None:
        with open(args.svg, "w") as fh:
            fh.write(histogram_svg(hist, fit))
        outputs.append(args.svg)
    _manifest(args, [getattr(args, "in")], outputs, t0)
    return EXIT_OK


def _cmd_ct_scan(args) -> int:
    t0 = time.monotonic()
    stream = _read_stream(getattr(args, "in"), args.lut)
    report = compute_rates(stream, hot_threshold_cps=args.hot_threshold)
    curve = ct_scan(stream, report, d_max=args.dmax, n_hot=args.nhot,
                    window_ps=args.window,
                    delays=_load_delays(args.delays))
    curve.save(args.out)
    outputs = [args.out]
    if args.svg is not None:
        with open(args.svg, "w") as fh:
            fh.write(ct_curve_svg(curve))
        outputs.append(args.svg)
    inputs = [p for p in (getattr(args, "in"), args.delays, args.lut) if p]
    _manifest(args, inputs, outputs, t0)
    return EXIT_OK


def _cmd_calibrate(args) -> int:
    t0 = time.monotonic()
    stream = _read_stream(getattr(args, "in"), args.lut)
    measurements = measure_offsets(stream, window_ps=args.window)
    vec = solve_delays(measurements,
                       num_pixels=stream.sensor.num_pixels)
    vec.save(args.out)
    _manifest(args, [getattr(args, "in")], [args.out], t0)
    return EXIT_DEGRADED if vec.degraded else EXIT_OK


def _cmd_report(args) -> int:
    t0 = time.monotonic()
    stream = _read_stream(getattr(args, "in"), args.lut)
    delays = _load_delays(args.delays)
    hist = build_histogram(stream, args.pair, args.window, args.bin,
                           delays=delays)
    try:
        hist = normalize_histogram(hist)
    except DataError:
        pass
    fit = fit_two_peaks(hist, separation_hint_ps=args.hint)

    os.makedirs(args.out, exist_ok=True)
    hist_path = os.path.join(args.out, "histogram.json")
    fit_path = os.path.join(args.out, "fit.json")
    svg_path = os.path.join(args.out, "report.svg")
    hist.save(hist_path)
    doc = {"schema_version": 1, "kind": "two_peak_fit"}
    doc.update(fit.to_json_dict())
    with open(fit_path, "w") as fh:
        json.dump(doc, fh)
    with open(svg_path, "w") as fh:
        fh.write(histogram_svg(
            hist, fit, title=f"pixels {args.pair[0]},{args.pair[1]}"))
    inputs = [p for p in (getattr(args, "in"), args.delays, args.lut) if p]
    _manifest(args, inputs, [args.out, hist_path, fit_path, svg_path], t0)
    return EXIT_OK


# ---------------------------------------------------------------------------
# wiring

def build_parser() -> _Parser:
    parser = _Parser(prog="spadkit",
                     description="SPAD array timestamp analysis toolkit")
    parser.add_argument("--log-level", default="warning",
                        choices=["debug", "info", "warning", "error"])
    parser.add_argument("--threads", type=int, default=1,
                        help="reserved; analysis currently runs single-threaded")
    sub = parser.add_subparsers(dest="command", required=True,
                                parser_class=_Parser)

    p = sub.add_parser("simulate", help="generate a stream from a config")
    p.add_argument("--config", required=True, help="SimConfig JSON")
    p.add_argument("--seed", type=int, default=None,
                   help="override the config's seed")
    p.add_argument("--out", required=True)
    p.add_argument("--truth", default=None,
                   help="also write the ground-truth sidecar JSON")
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("dcr", help="dark count rates and hot pixels")
    p.add_argument("--in", required=True)
    p.add_argument("--subsets", type=int, default=None,
                   help="also report per-subset rates for drift checks")
    p.add_argument("--hot-threshold", type=float,
                   default=DEFAULT_HOT_THRESHOLD_CPS)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_dcr)

    p = sub.add_parser("coincidence", help="two-pixel dt histogram")
    p.add_argument("--in", required=True)
    p.add_argument("--pair", required=True, type=_pair, metavar="A,B")
    p.add_argument("--window", type=float, default=DEFAULT_WINDOW_PS)
    p.add_argument("--bin", type=float, default=None,
                   help="bin width in ps (default: 3 TDC bins)")
    p.add_argument("--delays", default=None, help="delay JSON to correct by")
    p.add_argument("--lut", default=None, help="TDC LUT for raw-code input")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_coincidence)

    p = sub.add_parser("fit", help="Gaussian peak fit on a histogram JSON")
    p.add_argument("--in", required=True)
    p.add_argument("--two-peaks", action="store_true")
    p.add_argument("--hint", type=float, default=5000.0,
                   help="expected peak separation for --two-peaks")
    p.add_argument("--svg", default=None, help="write data+model overlay")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_fit)

    p = sub.add_parser("ct-scan", help="cross-talk probability vs distance")
    p.add_argument("--in", required=True)
    p.add_argument("--dmax", type=int, default=DEFAULT_D_MAX)
    p.add_argument("--nhot", type=int, default=DEFAULT_N_HOT)
    p.add_argument("--hot-threshold", type=float,
                   default=DEFAULT_HOT_THRESHOLD_CPS)
    p.add_argument("--window", type=float, default=DEFAULT_WINDOW_PS)
    p.add_argument("--delays", default=None)
    p.add_argument("--lut", default=None)
    p.add_argument("--svg", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_ct_scan)

    p = sub.add_parser("calibrate",
                       help="per-pixel delays from neighbor cross-talk")
    p.add_argument("--in", required=True)
    p.add_argument("--window", type=float, default=DEFAULT_WINDOW_PS)
    p.add_argument("--lut", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_calibrate)

    p = sub.add_parser("report",
                       help="two-peak fit report (JSON + SVG) for a pair")
    p.add_argument("--in", required=True)
    p.add_argument("--pair", required=True, type=_pair, metavar="A,B")
    p.add_argument("--delays", default=None)
    p.add_argument("--hint", type=float, default=5000.0)
    p.add_argument("--window", type=float, default=DEFAULT_WINDOW_PS)
    p.add_argument("--bin", type=float, default=None)
    p.add_argument("--lut", default=None)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=_cmd_report)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=getattr(logging, args.log_level.upper()))
    try:
        return args.func(args)
    except _ERRORS as exc:
        print(json.dumps({"error": str(exc),
                          "type": type(exc).__name__}), file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(json.dumps({"error": str(exc), "type": "OSError"}),
              file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
