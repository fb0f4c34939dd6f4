"""End-to-end experiment runs built from a :class:`ExperimentConfig`.

Random substreams are keyed by ``(seed, stage, power index, segment, ...)``,
so every piece of data is a pure function of the config and can be produced
in any order or in parallel.
"""
from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy import integrate

from . import __version__
from . import rng as _rng
from .config import ExperimentConfig, MediumConfig, to_dict
from .correlate import background_correct, correlate, normalize
from .data import PS_PER_S, CoincidenceHistogram, G2Curve, PhotonStream, merge
from .detection import run_hbt
from .fitting import FitResult
from .inference import (PowerSweepPoint, estimate_emitter_count, extrapolate_lifetime,
                        fit_linescan, fit_saturation, fit_three_level, improvement_over_coherent,
                        multiphoton_probability)
from .photophysics import analytic_g2, emission_rate, nanocrystal_lifetime, simulate_emission

# substream stage tags
EMISSION, DETECTION, LINESCAN = 1, 2, 3

P1_TABLE = (0.01, 0.05, 0.1, 0.2)


def _mode(cfg: ExperimentConfig) -> str:
    return "tac-start-stop" if cfg.histogram.mode == "tac" else "all-pairs"


def expected_signal_rate(cfg: ExperimentConfig, power_mw: float) -> float:
    """Collected fluorescence on both detectors (s^-1), before dead time."""
    return (cfg.emitter.count * cfg.detection.collection_efficiency
            * emission_rate(cfg.emitter.scheme(power_mw)))


def expected_background_rate(cfg: ExperimentConfig, power_mw: float) -> float:
    """Background light plus dark counts on both detectors (s^-1)."""
    d = cfg.detection
    return d.background_rate(power_mw) + d.detector_1.dark_rate_per_s + d.detector_2.dark_rate_per_s


def simulate_segment(cfg: ExperimentConfig, power_index: int, segment: int,
                     duration_s: float) -> tuple[PhotonStream, PhotonStream]:
    """Click streams of both detectors for one acquisition segment."""
    power = cfg.powers_mw[power_index]
    scheme = cfg.emitter.scheme(power)
    d = cfg.detection
    label = f"{cfg.name}:P={power!r}mW:seg{segment}"
    emitters = [
        simulate_emission(scheme, duration_s * 1e9,
                          _rng.child(cfg.seed, EMISSION, power_index, segment, j),
                          d.collection_efficiency, label)
        for j in range(cfg.emitter.count)
    ]
    light = emitters[0] if len(emitters) == 1 else merge(*emitters, label=label)
    return run_hbt(light, d.hbt(power), d.detector_1.detector(), d.detector_2.detector(),
                   _rng.child(cfg.seed, DETECTION, power_index, segment))


def correlate_streams(cfg: ExperimentConfig, s1: PhotonStream, s2: PhotonStream) -> CoincidenceHistogram:
    return correlate(s1, s2, cfg.histogram.bin_width_ps, cfg.histogram.range_ps, _mode(cfg),
                     cfg.detection.hbt(0).tac_delay)


def acquire(cfg: ExperimentConfig, power_index: int, workers: int = 1) -> CoincidenceHistogram:
    """Pooled coincidence histogram over all segments of one power.

    Segments are independent substreams, so the pooled result does not
    depend on ``workers``.
    """
    segs = cfg.segments()

    def run(i):
        s1, s2 = simulate_segment(cfg, power_index, i, segs[i])
        return correlate_streams(cfg, s1, s2)

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            parts = list(pool.map(run, range(len(segs))))
    else:
        parts = [run(i) for i in range(len(segs))]
    total = parts[0]
    for h in parts[1:]:
        total = total + h
    return total


def simulate_linescan(cfg: ExperimentConfig, power_mw: float, seed) -> tuple[np.ndarray, np.ndarray]:
    """Counts per pixel across the emitter: Poisson((B + S g(x)) * dwell)."""
    ls = cfg.linescan
    x = np.arange(-ls.half_span_um, ls.half_span_um + 0.5 * ls.step_um, ls.step_um)
    sigma = ls.fwhm_um / (2.0 * math.sqrt(2.0 * math.log(2.0)))
    s = expected_signal_rate(cfg, power_mw)
    b = expected_background_rate(cfg, power_mw)
    mean = (b + s * np.exp(-0.5 * (x / sigma) ** 2)) * ls.dwell_ms * 1e-3
    return x, _rng.generator(seed).poisson(mean).astype(np.int64)


@dataclass
class PointResult:
    power_mw: float
    histogram: CoincidenceHistogram
    raw: G2Curve
    corrected: G2Curve | None
    linescan: FitResult
    dip: FitResult | None
    failures: list
    dwell_s: float

    def summary(self) -> dict:
        h = self.histogram
        out = {
            "power_mW": self.power_mw,
            "rate_1_per_s": h.rate_1,
            "rate_2_per_s": h.rate_2,
            "acquisition_time_s": h.acquisition_time,
            "coincidences": h.total,
        }
        cn, cn_err = self.raw.value_at(0.0)
        out["C_N_zero"], out["C_N_zero_err"] = cn, cn_err
        if self.linescan.converged:
            out["signal_per_s"] = self.linescan["S"] / self.dwell_s
            out["background_per_s"] = self.linescan["B"] / self.dwell_s
            out["rho"] = self.linescan["rho"]
            out["signal_to_background"] = self.linescan["signal_to_background"]
            out["psf_fwhm_um"] = self.linescan["fwhm_um"]
        if self.corrected is not None:
            g, g_err = self.corrected.value_at(0.0)
            out["g2_corrected_zero"], out["g2_corrected_zero_err"] = g, g_err
        if self.dip is not None and self.dip.converged:
            out["dip_width_per_ns"] = self.dip["lam1"]
            out["dip_width_err_per_ns"] = self.dip.error("lam1")
            out["shelf_rate_per_ns"] = self.dip["lam2"]
            out["bunching_amplitude"] = self.dip["a"]
            out["contrast"] = self.dip["contrast"]
            out["g2_fit_zero"] = self.dip["g2_zero"]
            out["g2_fit_zero_err"] = self.dip.error("contrast")
            out["fit_chi2_reduced"] = self.dip.chi2_reduced
        return out


def analyze_point(cfg: ExperimentConfig, power_index: int, workers: int = 1,
                  rho: float | None = None, fixed=("contrast", "baseline")) -> PointResult:
    """Acquire, normalize, measure rho by line scan, correct and fit one power.

    ``rho`` overrides the line-scan value. Failed stages are listed in
    ``failures`` as ``{"stage": ..., "message": ...}``; later stages that
    depend on them are skipped.
    """
    power = cfg.powers_mw[power_index]
    failures = []
    hist = acquire(cfg, power_index, workers)
    raw = normalize(hist)
    x, counts = simulate_linescan(cfg, power, _rng.child(cfg.seed, LINESCAN, power_index))
    scan = fit_linescan(x, counts)
    if not scan.converged:
        failures.append({"stage": "linescan", "message": scan.message})
    if rho is None and scan.converged:
        rho = scan["rho"]
    corrected = dip = None
    if rho is not None:
        corrected = background_correct(raw, rho)
        dip = fit_three_level(corrected, fixed=fixed)
        if not dip.converged:
            failures.append({"stage": "three_level_fit", "message": dip.message})
    return PointResult(power, hist, raw, corrected, scan, dip, failures, cfg.linescan.dwell_ms * 1e-3)


# --- reports -----------------------------------------------------------------

def _clean(v):
    if isinstance(v, dict):
        return {str(k): _clean(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_clean(x) for x in v]
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return v if math.isfinite(v) else None
    if isinstance(v, np.bool_):
        return bool(v)
    return v


def report_json(report: dict) -> str:
    """Canonical JSON text: sorted keys, shortest round-trip floats."""
    return json.dumps(_clean(report), sort_keys=True, indent=2, allow_nan=False) + "\n"


def base_report(cfg: ExperimentConfig, kind: str) -> dict:
    return {"report": kind, "version": __version__, "seed": cfg.seed, "config": to_dict(cfg)}


def run_sweep(cfg: ExperimentConfig, workers: int = 1) -> dict:
    """Saturation and dip-width sweep over ``cfg.powers_mw`` plus the zero-power extrapolation."""
    rep = base_report(cfg, "sweep")
    points, sweep, failures, sat = [], [], [], []
    for i, power in enumerate(cfg.powers_mw):
        try:
            pt = analyze_point(cfg, i, workers)
        except Exception as exc:  # one bad power must not sink the whole sweep
            failures.append({"stage": "acquisition", "power_mW": power, "message": str(exc)})
            continue
        failures += [dict(f, power_mW=power) for f in pt.failures]
        s = pt.summary()
        points.append(s)
        if "dip_width_per_ns" in s and s["dip_width_err_per_ns"] > 0:
            sweep.append(PowerSweepPoint(power, s["dip_width_per_ns"], s["dip_width_err_per_ns"]))
        if "background_per_s" in s:
            t = pt.histogram.acquisition_time
            total = pt.histogram.rate_1 + pt.histogram.rate_2
            signal = total - s["background_per_s"]
            # Poisson error of the total plus the line-scan error of B
            b_err = pt.linescan.error("B") / pt.dwell_s
            sat.append((power, signal, math.sqrt(total / t + b_err ** 2)))
    rep["points"] = points
    if len(sweep) >= 3 and len({p.power for p in sweep}) >= 2:
        ex = extrapolate_lifetime(sweep)
        rep["lifetime"] = {
            "gamma_per_ns": ex["gamma"], "gamma_err_per_ns": ex.error("gamma"),
            "slope_per_ns_per_mW": ex["slope"], "slope_err_per_ns_per_mW": ex.error("slope"),
            "tau_ns": ex.derived.get("tau_ns"), "tau_err_ns": ex.derived.get("tau_err_ns"),
            "chi2_reduced": ex.chi2_reduced, "converged": ex.converged,
        }
        if not ex.converged:
            failures.append({"stage": "extrapolation", "message": ex.message})
    else:
        failures.append({"stage": "extrapolation", "message": "fewer than 3 usable sweep points"})
    if len(sat) >= 4:
        fs = fit_saturation(sat, cfg.emitter.scheme(0.0))
        if fs.converged:
            rep["saturation"] = {
                "pump_calibration_per_s_per_mW": fs["kappa"],
                "pump_calibration_err_per_s_per_mW": fs.error("kappa"),
                "efficiency": fs["efficiency"], "efficiency_err": fs.error("efficiency"),
                "pump_shelving": fs["beta"],
                "peak_power_mW": fs["peak_power"], "peak_rate_per_s": fs["peak_rate"],
                "chi2_reduced": fs.chi2_reduced,
            }
        else:
            failures.append({"stage": "saturation_fit", "message": fs.message})
    rep["failures"] = failures
    return rep


def run_antibunching(cfg: ExperimentConfig, power_index: int = 0, workers: int = 1,
                     rho: float | None = None) -> tuple[dict, PointResult]:
    """Single-power antibunching run with the analytic expectation for C_N(0)."""
    pt = analyze_point(cfg, power_index, workers, rho)
    rep = base_report(cfg, "antibunching")
    s = pt.summary()
    rep["point"] = s
    w = cfg.histogram.bin_width_ns
    scheme = cfg.emitter.scheme(pt.power_mw)
    g0 = bin_average_g2(scheme, w, cfg.emitter.count)
    rep["expected"] = {"g2_zero_bin": g0}
    if "rho" in s:
        r2 = s["rho"] ** 2
        rep["expected"]["C_N_zero"] = 1 - r2 + r2 * g0
    rep["failures"] = pt.failures
    return rep, pt


def bin_average_g2(scheme, bin_width_ns: float, emitters: int = 1, samples: int = 201) -> float:
    """Analytic g2 averaged over the bin centred on zero, for ``emitters`` equal centres."""
    half = 0.5 * bin_width_ns
    tau = np.linspace(0.0, half, samples)
    g = integrate.simpson(analytic_g2(scheme, tau).values, x=tau) / half
    return float((g + (emitters - 1)) / emitters)


def summary_report(measured_tau_ns: float | None = None, g2_zero: float | None = None,
                   cn_zero: float | None = None, cfg: ExperimentConfig | None = None,
                   bulk_cn_zero: float = 0.26) -> dict:
    """Lifetime-model table, emitter count and multiphoton table."""
    medium = (cfg.medium if cfg is not None else MediumConfig()).model()
    rep = {"report": "summary", "version": __version__}
    rep["lifetime_model"] = {
        "bulk_lifetime_ns": medium.bulk_lifetime,
        "bulk_index": medium.bulk_index,
        "substrate_index": medium.substrate_index,
        "local_field_factor": medium.local_field_factor,
        "predicted_nanocrystal_lifetime_ns": nanocrystal_lifetime(medium),
    }
    if measured_tau_ns is not None:
        rep["lifetime_model"]["measured_lifetime_ns"] = measured_tau_ns
        rep["lifetime_model"]["measured_over_bulk"] = measured_tau_ns / medium.bulk_lifetime
    if g2_zero is not None:
        ec = estimate_emitter_count(g2_zero)
        rep["emitter_count"] = {"g2_zero": g2_zero, "p": ec.p, "p_rounded": ec.p_rounded,
                                "ambiguous": ec.ambiguous}
    rows = []
    for label, cn in (("source", cn_zero), ("bulk", bulk_cn_zero), ("coherent", 1.0)):
        if cn is None:
            continue
        for p1 in P1_TABLE:
            rows.append({"source": label, "C_N_zero": cn, "p1": p1,
                         "p2": multiphoton_probability(cn, p1),
                         "improvement_over_coherent": improvement_over_coherent(cn) if cn > 0 else None})
    rep["multiphoton"] = rows
    return rep


def summary_text(rep: dict) -> str:
    lines = []
    lm = rep["lifetime_model"]
    lines.append(f"predicted nanocrystal lifetime: {lm['predicted_nanocrystal_lifetime_ns']:.2f} ns "
                 f"(bulk {lm['bulk_lifetime_ns']} ns, n_d={lm['bulk_index']}, n_s={lm['substrate_index']}, "
                 f"l={lm['local_field_factor']})")
    if "measured_lifetime_ns" in lm:
        lines.append(f"measured lifetime: {lm['measured_lifetime_ns']:.2f} ns")
    if "emitter_count" in rep:
        ec = rep["emitter_count"]
        flag = " (ambiguous)" if ec["ambiguous"] else ""
        lines.append(f"g2(0) = {ec['g2_zero']:.4g} -> p = {ec['p']:.3f}, rounded {ec['p_rounded']}{flag}")
    if rep["multiphoton"]:
        lines.append(f"{'source':>9} {'C_N(0)':>8} {'p1':>6} {'p2':>11} {'gain':>7}")
        for r in rep["multiphoton"]:
            gain = r["improvement_over_coherent"]
            lines.append(f"{r['source']:>9} {r['C_N_zero']:8.3f} {r['p1']:6.2f} {r['p2']:11.3e} "
                         f"{gain if gain is not None else float('nan'):7.2f}")
    return "\n".join(lines) + "\n"


def duration_ticks(seconds: float) -> int:
    return int(round(seconds * PS_PER_S))
