"""Command-line front end.

Subcommands: simulate, correlate, fit, sweep, report. Exit status is 0 on
success, 1 for usage, configuration or input-file errors and 2 when a run or
a fit fails.
"""
from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import __version__
from .config import PRESETS, ConfigError, ExperimentConfig, HistogramConfig, load, to_dict
from .correlate import background_correct, correlate, normalize
from .data import PS_PER_NS, G2Curve, PhotonStream
from .inference import fit_exponential_dip, fit_three_level
from .pipeline import report_json, run_sweep, simulate_segment, summary_report, summary_text
from .streamio import (CORRECTED_COLUMNS, FormatError, atomic_write, curve_csv, read_curve_csv,
                       read_stream, write_stream)

EXIT_OK, EXIT_USAGE, EXIT_FAILURE = 0, 1, 2


class UsageError(Exception):
    pass


class RunFailure(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# --- helpers -----------------------------------------------------------------

def _config(args) -> ExperimentConfig:
    if args.config and args.preset:
        raise UsageError("give either --config or --preset, not both")
    if args.config:
        cfg = load(args.config)
    else:
        cfg = PRESETS[args.preset or "nanocrystal"]()
    changes = {"histogram": _histogram(args, cfg.histogram)}
    if args.seed is not None:
        changes["seed"] = args.seed
    if getattr(args, "time_s", None) is not None:
        changes["acquisition_time_s"] = args.time_s
    if getattr(args, "powers_mw", None):
        changes["powers_mw"] = tuple(args.powers_mw)
    try:
        return cfg.replace(**changes)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _histogram(args, base: HistogramConfig) -> HistogramConfig:
    w = getattr(args, "bin_width_ns", None)
    rng = getattr(args, "range_ns", None)
    mode = getattr(args, "mode", None)
    if rng is not None:
        rng = (-abs(rng[0]), abs(rng[0])) if len(rng) == 1 else tuple(rng)
        if len(rng) != 2:
            raise UsageError("--range-ns takes one (symmetric) or two values")
    try:
        return HistogramConfig(base.bin_width_ns if w is None else w,
                               base.range_ns if rng is None else rng,
                               base.mode if mode is None else mode)
    except ValueError as exc:
        raise UsageError(f"histogram options: {exc}") from None


def _out_dir(path) -> str:
    try:
        os.makedirs(path, exist_ok=True)
    except OSError as exc:
        raise UsageError(f"cannot create output directory {path}: {exc.strerror}") from None
    if not os.access(path, os.W_OK):
        raise UsageError(f"output directory {path} is not writable")
    return path


def _write(path, data):
    try:
        atomic_write(path, data)
    except OSError as exc:
        raise UsageError(f"cannot write {path}: {exc.strerror}") from None


# --- subcommands ---------------------------------------------------------------

def cmd_simulate(args) -> int:
    """One pair of click-stream files per power plus ``metadata.json``.

    Segments of a power are laid end to end on a common time axis.
    """
    cfg = _config(args)
    out = _out_dir(args.out)
    segs = cfg.segments()
    offsets = np.concatenate([[0], np.cumsum([round(s * 1e12) for s in segs])]).astype(np.int64)
    files = []
    for i, power in enumerate(cfg.powers_mw):
        chans = ([], [])
        for k, seg in enumerate(segs):
            for c, s in enumerate(simulate_segment(cfg, i, k, seg)):
                chans[c].append(s.timestamps + offsets[k])
        for c in (0, 1):
            ts = np.concatenate(chans[c])
            stream = PhotonStream(ts, int(offsets[-1]), f"{cfg.name}:P={power!r}mW:ch{c + 1}")
            name = f"p{i:02d}_ch{c + 1}.phot"
            write_stream(os.path.join(out, name), stream)
            files.append({"file": name, "power_index": i, "power_mW": power, "channel": c + 1,
                          "events": len(stream), "duration_ps": stream.duration,
                          "rate_per_s": stream.rate})
    meta = {"version": __version__, "seed": cfg.seed, "config": to_dict(cfg), "files": files}
    _write(os.path.join(out, "metadata.json"), report_json(meta))
    for f in files:
        print(f"{f['file']}: {f['events']} events, {f['rate_per_s']:.1f} s^-1")
    return EXIT_OK


def _load_stream(path) -> PhotonStream:
    try:
        return read_stream(path)
    except FileNotFoundError:
        raise UsageError(f"{path}: no such file") from None
    except FormatError as exc:
        raise UsageError(str(exc)) from None


def cmd_correlate(args) -> int:
    s1 = _load_stream(args.streams[0])
    s2 = _load_stream(args.streams[1]) if len(args.streams) > 1 else s1
    if s1.duration != s2.duration:
        raise UsageError(f"stream durations differ: {s1.duration} ps vs {s2.duration} ps")
    hist_cfg = _histogram(args, HistogramConfig())
    mode = "tac-start-stop" if hist_cfg.mode == "tac" else "all-pairs"
    tac_delay = None if args.tac_delay_ns is None else int(round(args.tac_delay_ns * PS_PER_NS))
    h = correlate(s1, s2, hist_cfg.bin_width_ps, hist_cfg.range_ps, mode, tac_delay)
    try:
        raw = normalize(h)
    except ValueError as exc:
        raise RunFailure(str(exc)) from None
    corrected = None
    if args.rho is not None:
        if not 0 < args.rho <= 1:
            raise UsageError("--rho must lie in (0, 1]")
        corrected = background_correct(raw, args.rho)
    text = curve_csv(h, raw, corrected)
    meta = {"version": __version__, "mode": h.mode, "bin_width_ps": h.bin_width,
            "tau_min_ps": h.tau_min, "tau_max_ps": h.tau_max, "acquisition_time_s": h.acquisition_time,
            "rate_1_per_s": h.rate_1, "rate_2_per_s": h.rate_2, "coincidences": h.total,
            "rho": args.rho, "streams": [os.path.basename(p) for p in args.streams]}
    if args.out:
        _write(args.out, text)
        _write(args.out + ".json", report_json(meta))
    else:
        sys.stdout.write(text)
    cn0, err0 = raw.value_at(0.0) if raw.delays[0] <= 0 <= raw.delays[-1] else (float("nan"),) * 2
    print(f"N1={h.rate_1:.1f} s^-1 N2={h.rate_2:.1f} s^-1 T={h.acquisition_time:g} s "
          f"coincidences={h.total} C_N(0)={cn0:.4g}+-{err0:.2g}", file=sys.stderr)
    return EXIT_OK


def cmd_fit(args) -> int:
    try:
        cols = read_curve_csv(args.curve)
    except FileNotFoundError:
        raise UsageError(f"{args.curve}: no such file") from None
    except FormatError as exc:
        raise UsageError(str(exc)) from None
    tau = cols["tau_ns"]
    width = float(np.median(np.diff(tau))) if tau.size > 1 else None
    if args.rho is not None:
        raw = G2Curve(tau, cols["C_N"], cols["sigma"], "raw-normalized", width)
        curve = background_correct(raw, args.rho)
    elif CORRECTED_COLUMNS[0] in cols:
        curve = G2Curve(tau, cols["g2_corrected"], cols["sigma_corrected"], "background-corrected", width)
    else:
        curve = G2Curve(tau, cols["C_N"], cols["sigma"], "raw-normalized", width)
    if args.window_ns:
        curve = curve.window(args.window_ns)
    try:
        if args.model == "dip":
            res = fit_exponential_dip(curve)
        else:
            fixed = ("baseline",) if args.free_contrast else ("contrast", "baseline")
            res = fit_three_level(curve, fixed=fixed)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    rep = {"version": __version__, "model": args.model, "curve": os.path.basename(args.curve),
           "kind": curve.kind, "fit": res.as_dict()}
    text = report_json(rep)
    if args.out:
        _write(args.out, text)
    else:
        sys.stdout.write(text)
    if not res.converged:
        print(f"fit failed: {res.message}", file=sys.stderr)
        return EXIT_FAILURE
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _config(args)
    if len(cfg.powers_mw) < 3:
        raise UsageError("a sweep needs at least 3 pump powers")
    rep = run_sweep(cfg, workers=args.workers)
    text = report_json(rep)
    if args.out:
        _write(args.out, text)
    else:
        sys.stdout.write(text)
    lt = rep.get("lifetime")
    if lt and lt.get("tau_ns") is not None:
        print(f"tau = {lt['tau_ns']:.3f} +- {lt['tau_err_ns']:.3f} ns, "
              f"slope = {lt['slope_per_ns_per_mW']:.5g} ns^-1/mW", file=sys.stderr)
    for f in rep["failures"]:
        print(f"stage {f['stage']} failed: {f['message']}", file=sys.stderr)
    return EXIT_FAILURE if rep["failures"] else EXIT_OK


_TAU_KEYS = {"tau_ns": 1.0, "tau_s": 1e9, "tau_ps": 1e-3}


def _tau_from_report(path) -> float:
    try:
        with open(path, encoding="utf-8") as fh:
            rep = json.load(fh)
    except FileNotFoundError:
        raise UsageError(f"{path}: no such file") from None
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path}: not JSON ({exc})") from None
    lt = rep.get("lifetime") if isinstance(rep, dict) else None
    if not isinstance(lt, dict):
        raise UsageError(f"{path}: no lifetime section")
    found = [k for k in lt if k.startswith("tau_") and not k.startswith("tau_err")]
    if found != ["tau_ns"]:
        raise UsageError(f"{path}: inconsistent units, expected the lifetime as tau_ns, found {found}")
    if lt["tau_ns"] is None:
        raise RunFailure(f"{path}: the sweep did not produce a lifetime")
    return float(lt["tau_ns"])


def cmd_report(args) -> int:
    cfg = _config(args) if (args.config or args.preset) else None
    tau = args.tau_ns
    if args.sweep:
        if tau is not None:
            raise UsageError("give either --sweep or --tau-ns")
        tau = _tau_from_report(args.sweep)
    if args.g2_zero is not None and not 0 <= args.g2_zero < 1:
        raise UsageError("--g2-zero must lie in [0, 1)")
    if args.cn_zero is not None and args.cn_zero < 0:
        raise UsageError("--cn-zero must be >= 0")
    rep = summary_report(tau, args.g2_zero, args.cn_zero, cfg)
    if args.out:
        _write(args.out, report_json(rep))
    sys.stdout.write(summary_text(rep))
    return EXIT_OK


# --- parser ----------------------------------------------------------------------

def _add_config(p):
    p.add_argument("--config", help="TOML experiment file")
    p.add_argument("--preset", choices=sorted(PRESETS), help="built-in experiment")
    p.add_argument("--seed", type=int, help="master seed, overrides the config")


def _add_hist(p):
    p.add_argument("--bin-width-ns", type=float)
    p.add_argument("--range-ns", type=float, nargs="+", metavar="NS",
                   help="symmetric half range, or min and max")
    p.add_argument("--mode", choices=("all-pairs", "tac"))


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="antibunch", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", help="simulate click streams")
    _add_config(p)
    _add_hist(p)
    p.add_argument("--time-s", type=float, help="acquisition time per power")
    p.add_argument("--powers-mw", type=float, nargs="+")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("correlate", help="coincidence histogram of two stream files")
    p.add_argument("streams", nargs="+", help="start and stop stream files (one for autocorrelation)")
    _add_hist(p)
    p.add_argument("--tac-delay-ns", type=float, help="stop-channel delay in tac mode")
    p.add_argument("--rho", type=float, help="signal fraction S/(S+B) for background correction")
    p.add_argument("--out", help="CSV path (default: stdout)")
    p.set_defaults(func=cmd_correlate)

    p = sub.add_parser("fit", help="fit a correlation CSV")
    p.add_argument("curve")
    p.add_argument("--model", choices=("dip", "three-level"), default="three-level")
    p.add_argument("--rho", type=float)
    p.add_argument("--window-ns", type=float, help="fit only |tau| <= this")
    p.add_argument("--free-contrast", action="store_true")
    p.add_argument("--out")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("sweep", help="power sweep: saturation and zero-power lifetime")
    _add_config(p)
    _add_hist(p)
    p.add_argument("--time-s", type=float, help="acquisition time per power")
    p.add_argument("--powers-mw", type=float, nargs="+")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", help="report JSON path (default: stdout)")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("report", help="lifetime model, emitter count and multiphoton table")
    _add_config(p)
    p.add_argument("--sweep", help="sweep report to take the measured lifetime from")
    p.add_argument("--tau-ns", type=float)
    p.add_argument("--g2-zero", type=float)
    p.add_argument("--cn-zero", type=float, default=0.17)
    p.add_argument("--out", help="JSON path")
    p.set_defaults(func=cmd_report)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "streams", None) is not None and len(args.streams) > 2:
        print("antibunch correlate: error: give one or two stream files", file=sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"antibunch {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except RunFailure as exc:
        print(f"antibunch {args.command}: failed: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
