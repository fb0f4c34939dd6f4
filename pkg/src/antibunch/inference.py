"""Model fits and figures of merit built on measured correlation data.

Delays are in ns, dip widths in ns^-1, pump powers in mW, count rates in s^-1.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .data import G2Curve
from .fitting import FitResult, levenberg_marquardt
from .photophysics import LevelScheme

FWHM_PER_SIGMA = 2.0 * np.sqrt(2.0 * np.log(2.0))


@dataclass(frozen=True)
class PowerSweepPoint:
    power: float              # mW
    dip_width: float          # ns^-1
    width_uncertainty: float  # ns^-1

    def __post_init__(self):
        if self.power < 0 or not self.dip_width > 0:
            raise ValueError("need power >= 0 and dip_width > 0")


# --- antibunching dip ------------------------------------------------------

def _dip(x, p):
    k, a, base = p
    return base * (1.0 - a * np.exp(-k * np.abs(x)))


def _dip_jac(x, p):
    k, a, base = p
    ax = np.abs(x)
    e = np.exp(-k * ax)
    return np.column_stack([base * a * ax * e, -base * e, 1.0 - a * e])


def _shelved(x, p):
    lam1, lam2, a, c, base = p
    ax = np.abs(x)
    return base * (1.0 - c * ((1.0 + a) * np.exp(-lam1 * ax) - a * np.exp(-lam2 * ax)))


def _shelved_jac(x, p):
    lam1, lam2, a, c, base = p
    ax = np.abs(x)
    e1, e2 = np.exp(-lam1 * ax), np.exp(-lam2 * ax)
    inner = (1.0 + a) * e1 - a * e2
    return np.column_stack([
        base * c * (1.0 + a) * ax * e1,
        -base * c * a * ax * e2,
        -base * c * (e1 - e2),
        -base * inner,
        1.0 - c * inner,
    ])


def _dip_guess(curve: G2Curve) -> dict:
    x, y = curve.delays, curve.values
    ax = np.abs(x)
    outer = ax >= np.quantile(ax, 0.7)
    base = float(np.median(y[outer])) or 1.0
    inner = ax <= np.quantile(ax, 0.05)
    depth = float(np.clip(1.0 - np.mean(y[inner]) / base, 0.05, 1.5))
    # half-depth crossing from the running level of |tau|-sorted data
    order = np.argsort(ax)
    ys = np.convolve(y[order], np.ones(5) / 5, mode="same")
    half = base * (1.0 - depth / 2)
    above = np.nonzero(ys >= half)[0]
    t_half = ax[order][above[0]] if above.size else ax.max() / 4
    k = np.log(2.0) / max(t_half, 0.5 * np.min(np.diff(np.unique(ax))) if ax.size > 1 else 1.0)
    return {"k": float(k), "contrast": depth, "baseline": base}


def _check_curve(curve: G2Curve, min_bins=10):
    if len(curve) < min_bins:
        raise ValueError(f"need at least {min_bins} bins, got {len(curve)}")
    if curve.kind == "analytic" and np.all(curve.sigma == 0):
        return np.ones_like(curve.values)
    return curve.sigma


def fit_exponential_dip(curve: G2Curve, p0: dict | None = None, fixed=()) -> FitResult:
    """Fit ``baseline * (1 - contrast * exp(-k |tau|))``.

    ``k`` is the dip width r + gamma (ns^-1). Curves with zero sigma (analytic
    curves) are fitted unweighted. Derived: ``g2_zero`` = baseline (1 - contrast).
    """
    sigma = _check_curve(curve)
    start = _dip_guess(curve)
    if p0:
        start.update(p0)
    res = levenberg_marquardt(_dip, curve.delays, curve.values, sigma, start, fixed, _dip_jac)
    if res.converged:
        if not res["k"] > 0:
            res.converged, res.message = False, "fitted dip width is not positive"
        else:
            res.derived["g2_zero"] = res["baseline"] * (1.0 - res["contrast"])
    return res


def fit_three_level(curve: G2Curve, p0: dict | None = None, fixed=("contrast", "baseline"),
                    degenerate_ratio: float = 0.05) -> FitResult:
    """Fit the shelving model ``baseline * (1 - contrast * [(1+a) e^{-lam1|tau|} - a e^{-lam2|tau|}])``.

    With ``contrast = baseline = 1`` (the default: both fixed) this is the
    two-exponential solution of the three-state rate equations,
    ``1 - (1+a) e^{-lam1 |tau|} + a e^{-lam2 |tau|}``. Freeing contrast and
    baseline and fixing ``a = 0`` gives exactly :func:`fit_exponential_dip`.
    ``lam2`` is the slow shelving rate; several starting values are tried
    and the lowest chi-square kept. Near-equal rates are flagged in
    ``derived['degenerate']``.
    """
    sigma = _check_curve(curve)
    dip = fit_exponential_dip(curve)
    lam1 = dip["k"] if dip.converged else _dip_guess(curve)["k"]
    base_guess = {"lam1": lam1, "lam2": lam1 / 20, "a": 0.5, "contrast": 1.0, "baseline": 1.0}
    if dip.converged:
        base_guess["contrast"] = dip["contrast"]
        base_guess["baseline"] = dip["baseline"]
    for name in ("contrast", "baseline"):
        if name in fixed:
            base_guess[name] = 1.0
    if p0:
        base_guess.update(p0)
    if "a" in fixed and base_guess["a"] == 0:
        # lam2 drops out of the model; pin it rather than leave it undetermined
        fixed = tuple(fixed) + ("lam2",)
        starts = [base_guess]
    else:
        ymax = float(np.max(curve.values))
        starts = []
        for frac in (0.02, 0.05, 0.2):
            for a in (0.1, max(ymax - 1.0, 0.05), 1.0):
                g = dict(base_guess)
                if not p0 or "lam2" not in p0:
                    g["lam2"] = lam1 * frac
                if not p0 or "a" not in p0:
                    g["a"] = a
                starts.append(g)
    best = None
    for g in starts:
        # explicit ordering so the parameter vector matches _shelved
        g = {n: g[n] for n in ("lam1", "lam2", "a", "contrast", "baseline")}
        res = levenberg_marquardt(_shelved, curve.delays, curve.values, sigma, g, fixed, _shelved_jac)
        if res.converged and (best is None or res.chi2_reduced < best.chi2_reduced):
            best = res
    if best is None:
        return FitResult.failure(("lam1", "lam2", "a", "contrast", "baseline"),
                                 "no start converged")
    if best["lam1"] < best["lam2"] and "a" not in fixed:
        # same curve with the two rates relabelled; keep lam1 as the fast one
        v, e = best.values, best.errors
        v[0], v[1], v[2] = v[1], v[0], -(1.0 + v[2])
        e[0], e[1] = e[1], e[0]
        best.covariance = None
    best.derived["degenerate"] = bool(abs(best["lam1"] - best["lam2"]) < degenerate_ratio * abs(best["lam1"]))
    best.derived["g2_zero"] = best["baseline"] * (1.0 - best["contrast"])
    return best


def three_level_curve(delays, lam1, lam2, a, contrast=1.0, baseline=1.0) -> np.ndarray:
    return _shelved(np.asarray(delays, dtype=float), (lam1, lam2, a, contrast, baseline))


# --- lifetime from the power dependence of the dip --------------------------

def extrapolate_lifetime(sweep: Sequence[PowerSweepPoint]) -> FitResult:
    """Weighted straight line ``k = gamma + slope * P``; ``tau = 1 / gamma``.

    Returns parameters ``gamma`` (ns^-1) and ``slope`` (ns^-1/mW) with derived
    ``tau_ns`` and ``tau_err_ns``.
    """
    pts = list(sweep)
    if len(pts) < 3:
        raise ValueError("need at least 3 sweep points")
    p = np.array([s.power for s in pts], dtype=float)
    k = np.array([s.dip_width for s in pts], dtype=float)
    sig = np.array([s.width_uncertainty for s in pts], dtype=float)
    if np.ptp(p) == 0:
        raise ValueError("sweep powers must not all be equal")
    if np.any(~(sig > 0)):
        raise ValueError("width uncertainties must be > 0")
    order = np.lexsort((sig, k, p))  # sums in a fixed order, so input order is irrelevant
    p, k, sig = p[order], k[order], sig[order]
    w = 1.0 / sig ** 2
    s, sx, sy = w.sum(), (w * p).sum(), (w * k).sum()
    sxx, sxy = (w * p * p).sum(), (w * p * k).sum()
    delta = s * sxx - sx * sx
    gamma = (sxx * sy - sx * sxy) / delta
    slope = (s * sxy - sx * sy) / delta
    cov = np.array([[sxx, -sx], [-sx, s]]) / delta
    err = np.sqrt(np.diag(cov))
    chi2 = float(np.sum(w * (k - gamma - slope * p) ** 2))
    dof = len(pts) - 2
    res = FitResult(("gamma", "slope"), np.array([gamma, slope]), err,
                    chi2 / dof if dof > 0 else np.nan, True, 1, "closed-form weighted line", cov)
    if gamma > 0:
        res.derived["tau_ns"] = 1.0 / gamma
        res.derived["tau_err_ns"] = err[0] / gamma ** 2
    else:
        res.converged = False
        res.message = "extrapolated decay rate is not positive"
    return res


# --- saturation --------------------------------------------------------------

def _excited_population(r, gamma, k_es, k_sg, beta):
    k = k_es + beta * r
    if k_sg == 0:
        return np.where(k == 0, r / (r + gamma), 0.0)
    return r * k_sg / (k_sg * (r + gamma + k) + r * k)


def saturation_model(powers, kappa, efficiency, beta, template: LevelScheme) -> np.ndarray:
    """Detected rate ``efficiency * gamma * p_e(kappa * P)`` (s^-1)."""
    r = kappa * np.asarray(powers, dtype=float)
    return efficiency * template.radiative_rate * _excited_population(
        r, template.radiative_rate, template.shelve_rate, template.deshelve_rate, beta)


def fit_saturation(points, template: LevelScheme, fit_beta: bool | None = None,
                   p0: dict | None = None) -> FitResult:
    """Fit a saturation curve with the stationary rate model.

    ``points`` holds ``(power_mW, rate)`` or ``(power_mW, rate, sigma)``. The
    intrinsic rates (gamma, k_es, k_sg) come from ``template``; the fit
    returns the pump calibration ``kappa`` (s^-1/mW), the overall detection
    ``efficiency`` and, when ``fit_beta`` (default: template has beta > 0), the
    pump-induced shelving coefficient ``beta``. Derived: ``peak_rate`` (the
    plateau when beta = 0) and ``peak_power``.
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[0] < 4:
        raise ValueError("need at least 4 (power, rate) points")
    power, rate = pts[:, 0], pts[:, 1]
    sigma = pts[:, 2] if pts.shape[1] > 2 else np.ones_like(rate)
    if fit_beta is None:
        fit_beta = template.pump_shelving > 0
    t = LevelScheme(0.0, template.radiative_rate, template.shelve_rate, template.deshelve_rate)
    k, ksg, gam = t.shelve_rate, t.deshelve_rate, t.radiative_rate
    r_inf = gam / (1 + k / ksg) if ksg > 0 else gam
    r_sat = (gam + k) / (1 + k / ksg) if ksg > 0 else gam
    order = np.argsort(power)
    rmax = float(rate.max())
    if rmax <= 0:
        return FitResult.failure(("kappa", "efficiency", "beta"), "no signal in saturation data")
    # half-maximum power as a saturation-power proxy
    reach = power[order][np.nonzero(rate[order] >= 0.5 * rmax)[0][0]]
    kappa0 = r_sat / max(reach, 1e-12)
    start = {"kappa": kappa0, "efficiency": rmax / r_inf * 1.2, "beta": 0.0}
    if p0:
        start.update(p0)
    fixed = () if fit_beta else ("beta",)

    def model(x, p):
        return saturation_model(x, p[0], p[1], p[2], t)

    best = None
    beta_starts = [start["beta"]] if not fit_beta or (p0 and "beta" in p0) else [0.0, 0.01, 0.1]
    for b in beta_starts:
        res = levenberg_marquardt(model, power, rate, sigma, dict(start, beta=b), fixed)
        if res.converged and (best is None or res.chi2_reduced < best.chi2_reduced):
            best = res
    if best is None:
        return FitResult.failure(("kappa", "efficiency", "beta"), "saturation fit did not converge")
    kappa, eff, beta = best.values
    if beta > 0:
        grid = np.linspace(0, max(power.max(), 1e-12) * 4, 4001)
        curve = saturation_model(grid, kappa, eff, beta, t)
        i = int(np.argmax(curve))
        best.derived["peak_power"] = float(grid[i])
        best.derived["peak_rate"] = float(curve[i])
    else:
        best.derived["peak_power"] = float("inf")
        best.derived["peak_rate"] = float(eff * r_inf)
    best.derived["plateau_rate"] = best.derived["peak_rate"]
    return best


# --- confocal line scan ------------------------------------------------------

def _gauss(x, p):
    s, b, x0, w = p
    return b + s * np.exp(-0.5 * ((x - x0) / w) ** 2)


def _gauss_jac(x, p):
    s, b, x0, w = p
    z = (x - x0) / w
    e = np.exp(-0.5 * z * z)
    return np.column_stack([e, np.ones_like(x), s * e * z / w, s * e * z * z / w])


def fit_linescan(positions, counts) -> FitResult:
    """Gaussian on a flat background, ``B + S exp(-(x-x0)^2 / 2 w^2)``.

    Positions in um, counts per pixel. Derived: ``rho`` = S/(S+B),
    ``signal_to_background`` and ``fwhm_um``. A scan without a positive peak
    is a failed fit.
    """
    x = np.asarray(positions, dtype=float)
    y = np.asarray(counts, dtype=float)
    names = ("S", "B", "center", "width")
    if x.size < 6:
        raise ValueError("need at least 6 scan points")
    b0 = float(np.quantile(y, 0.25))
    s0 = float(y.max() - b0)
    if s0 <= 0:
        return FitResult.failure(names, "flat scan: no emitter")
    above = y - b0
    above[above < 0] = 0
    x0 = float(x[np.argmax(y)])
    w0 = float(np.sqrt(np.sum(above * (x - x0) ** 2) / np.sum(above))) or float(np.ptp(x) / 10)
    sigma = np.sqrt(np.maximum(y, 1.0))
    res = levenberg_marquardt(_gauss, x, y, sigma, {"S": s0, "B": b0, "center": x0, "width": w0},
                              jac=_gauss_jac)
    if not res.converged:
        res.message = f"no emitter peak found ({res.message})"
        return res
    s, b = res["S"], res["B"]
    if not x.min() <= res["center"] <= x.max():
        return FitResult.failure(names, "peak outside the scan: no emitter", res.values, res.iterations)
    if not s > 0 or s < 3 * res.error("S"):
        return FitResult.failure(names, "no significant peak: no emitter", res.values, res.iterations)
    res.values[3] = abs(res.values[3])
    res.derived["rho"] = s / (s + b)
    res.derived["signal_to_background"] = s / b if b > 0 else float("inf")
    res.derived["fwhm_um"] = FWHM_PER_SIGMA * res["width"]
    return res


# --- figures of merit --------------------------------------------------------

class EmitterCount(NamedTuple):
    p: float
    p_rounded: int
    ambiguous: bool


def estimate_emitter_count(g2_zero: float) -> EmitterCount:
    """Number of equally bright emitters behind g2(0) = 1 - 1/p."""
    if not 0 <= g2_zero < 1:
        raise ValueError("g2(0) must lie in [0, 1) to indicate antibunching")
    p = 1.0 / (1.0 - g2_zero)
    n = max(1, int(np.floor(p + 0.5)))
    return EmitterCount(p, n, abs(p - n) > 0.25)


def multiphoton_probability(cn_zero: float, p1: float) -> float:
    """Two-or-more photon probability per pulse, ``C_N(0) p1^2 / 2`` (valid for p2 << 1)."""
    if cn_zero < 0 or not 0 <= p1 <= 1:
        raise ValueError("need C_N(0) >= 0 and 0 <= p1 <= 1")
    return cn_zero * p1 * p1 / 2.0


def improvement_over_coherent(cn_zero: float) -> float:
    """Factor by which p2 beats an attenuated coherent pulse of equal p1."""
    if not cn_zero > 0:
        raise ValueError("C_N(0) must be > 0")
    return 1.0 / cn_zero
