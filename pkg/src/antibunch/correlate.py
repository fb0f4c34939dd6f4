"""Coincidence histograms, Poissonian normalization and background correction.

Delays are ``t2 - t1`` in ps. Bin ``i`` holds delays in
``[tau_min + i*w, tau_min + (i+1)*w)``.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor

import numba
import numpy as np

from .data import PS_PER_NS, PS_PER_S, CoincidenceHistogram, G2Curve, PhotonStream

DEFAULT_BIN_WIDTH = 1_000                # ps
DEFAULT_RANGE = (-200_000, 200_000)      # ps


def _check_binning(bin_width, delay_range):
    tau_min, tau_max = (int(x) for x in delay_range)
    w = int(bin_width)
    if w <= 0:
        raise ValueError("bin width must be positive")
    if tau_max <= tau_min:
        raise ValueError("delay range must satisfy tau_min < tau_max")
    if (tau_max - tau_min) % w:
        raise ValueError("delay range must be a whole number of bins")
    return w, tau_min, tau_max, (tau_max - tau_min) // w


def _check_pair(s1: PhotonStream, s2: PhotonStream):
    if s1.duration != s2.duration:
        raise ValueError(f"stream durations differ: {s1.duration} vs {s2.duration} ps")


@numba.njit(cache=True, nogil=True)
def _pair_kernel(t1, t2, tau_min, tau_max, w, nbins, auto, off1, off2):
    counts = np.zeros(nbins, dtype=np.int64)
    n2 = t2.size
    j0 = 0
    for i in range(t1.size):
        lo = t1[i] + tau_min
        hi = t1[i] + tau_max
        while j0 < n2 and t2[j0] < lo:
            j0 += 1
        j = j0
        while j < n2 and t2[j] < hi:
            if not (auto and j + off2 == i + off1):
                counts[(t2[j] - lo) // w] += 1
            j += 1
    return counts


def pair_histogram(s1: PhotonStream, s2: PhotonStream, bin_width: int = DEFAULT_BIN_WIDTH,
                   delay_range=DEFAULT_RANGE, auto: bool | None = None,
                   chunks: int = 1, workers: int = 1) -> CoincidenceHistogram:
    """Count every pair (t1 in s1, t2 in s2) with ``t2 - t1`` in range.

    One merge pass with a sliding window over ``s2``, so the cost is linear in
    the number of events plus pairs. For an autocorrelation (``s1`` is ``s2``,
    or ``auto=True``) an event is never paired with itself.

    ``chunks > 1`` splits ``s1`` at event boundaries; every pair belongs to
    exactly one chunk (the one holding its ``t1``), so the pooled histogram is
    identical to the single-pass one whatever the number of workers.
    """
    _check_pair(s1, s2)
    w, tau_min, tau_max, nbins = _check_binning(bin_width, delay_range)
    if auto is None:
        auto = s1 is s2 or (len(s1) == len(s2) and np.array_equal(s1.timestamps, s2.timestamps))
    t1, t2 = s1.timestamps, s2.timestamps
    bounds = np.linspace(0, t1.size, max(int(chunks), 1) + 1).astype(np.int64)

    def run(c):
        a, b = bounds[c], bounds[c + 1]
        if a == b:
            return np.zeros(nbins, dtype=np.int64)
        j_lo = np.searchsorted(t2, t1[a] + tau_min, side="left")
        j_hi = np.searchsorted(t2, t1[b - 1] + tau_max, side="left")
        return _pair_kernel(t1[a:b], t2[j_lo:j_hi], tau_min, tau_max, w, nbins,
                            bool(auto), a, j_lo)

    idx = range(len(bounds) - 1)
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            parts = list(pool.map(run, idx))
    else:
        parts = [run(c) for c in idx]
    counts = np.sum(parts, axis=0, dtype=np.int64) if parts else np.zeros(nbins, dtype=np.int64)
    T = s1.duration_s
    return CoincidenceHistogram(w, tau_min, tau_max, counts, T, len(s1) / T, len(s2) / T, "all-pairs")


@numba.njit(cache=True, nogil=True)
def _tac_kernel(starts, stops, tac_delay, window, tau_min, tau_max, w, nbins):
    counts = np.zeros(nbins, dtype=np.int64)
    n2 = stops.size
    j = 0
    busy_until = np.iinfo(np.int64).min
    for i in range(starts.size):
        t = starts[i]
        if t < busy_until:
            continue
        while j < n2 and stops[j] + tac_delay < t:
            j += 1
        if j < n2 and stops[j] + tac_delay - t < window:
            stop = stops[j] + tac_delay
            tau = stop - t - tac_delay
            if tau_min <= tau < tau_max:
                counts[(tau - tau_min) // w] += 1
            busy_until = stop
        else:
            busy_until = t + window
    return counts


def tac_histogram(starts: PhotonStream, stops: PhotonStream, bin_width: int = DEFAULT_BIN_WIDTH,
                  tac_delay: int = 50_000, delay_range=DEFAULT_RANGE) -> CoincidenceHistogram:
    """Start-stop time-to-amplitude converter.

    Each accepted start is paired with the first (delayed) stop after it; the
    entry is recorded at ``stop - start - tac_delay``. The converter stays busy
    until that stop or, if none arrives within the conversion window (the
    width of the delay range), until the window closes; starts arriving while
    it is busy are lost.
    """
    _check_pair(starts, stops)
    w, tau_min, tau_max, nbins = _check_binning(bin_width, delay_range)
    if tac_delay < 0:
        raise ValueError("tac_delay must be >= 0")
    counts = _tac_kernel(starts.timestamps, stops.timestamps, np.int64(tac_delay),
                         np.int64(tau_max - tau_min), tau_min, tau_max, w, nbins)
    T = starts.duration_s
    return CoincidenceHistogram(w, tau_min, tau_max, counts, T, len(starts) / T, len(stops) / T,
                                "tac-start-stop")


def correlate(s1: PhotonStream, s2: PhotonStream, bin_width: int = DEFAULT_BIN_WIDTH,
              delay_range=DEFAULT_RANGE, mode: str = "all-pairs", tac_delay: int | None = None):
    if mode == "all-pairs":
        return pair_histogram(s1, s2, bin_width, delay_range)
    if mode in ("tac", "tac-start-stop"):
        delay = -int(delay_range[0]) if tac_delay is None else tac_delay
        return tac_histogram(s1, s2, bin_width, max(delay, 0), delay_range)
    raise ValueError(f"unknown correlation mode {mode!r}")


def normalize(h: CoincidenceHistogram) -> G2Curve:
    """C_N = c / (N1 N2 w T), with Poisson errors.

    Empty bins get the error of a single count so that weighted fits never
    divide by zero.
    """
    if not (h.rate_1 > 0 and h.rate_2 > 0 and h.acquisition_time > 0):
        raise ValueError("cannot normalize: a count rate or the acquisition time is zero")
    norm = h.rate_1 * h.rate_2 * (h.bin_width / PS_PER_S) * h.acquisition_time
    c = h.counts.astype(float)
    return G2Curve(h.centers_ns, c / norm, np.sqrt(np.maximum(c, 1.0)) / norm,
                   "raw-normalized", h.bin_width / PS_PER_NS, h.counts.copy())


def background_correct(curve: G2Curve, rho: float) -> G2Curve:
    """g_c = (C_N - (1 - rho^2)) / rho^2 for signal fraction rho = S/(S+B)."""
    if curve.kind != "raw-normalized":
        raise ValueError(f"expected a raw-normalized curve, got {curve.kind!r}")
    if not 0 < rho <= 1:
        raise ValueError("rho must lie in (0, 1]")
    r2 = rho * rho
    return G2Curve(curve.delays, (curve.values - (1.0 - r2)) / r2, curve.sigma / r2,
                   "background-corrected", curve.bin_width_ns, curve.counts)


def symmetrize(curve: G2Curve) -> G2Curve:
    """Fold negative delays onto positive ones by pooling mirrored bins.

    Needs a grid symmetric about zero; pooled values are inverse-variance
    weighted. Bins straddling zero are kept as they are.
    """
    d = curve.delays
    if not np.allclose(d, -d[::-1]):
        raise ValueError("delay grid is not symmetric about zero")
    half = d.size // 2
    pos = slice(d.size - half, None)
    neg = slice(half - 1, None, -1) if half else slice(0, 0)
    w1 = 1 / curve.sigma[pos] ** 2
    w2 = 1 / curve.sigma[neg] ** 2
    vals = (curve.values[pos] * w1 + curve.values[neg] * w2) / (w1 + w2)
    sig = 1 / np.sqrt(w1 + w2)
    if d.size % 2:
        mid = half
        vals = np.concatenate([[curve.values[mid]], vals])
        sig = np.concatenate([[curve.sigma[mid]], sig])
        delays = np.concatenate([[d[mid]], d[pos]])
    else:
        delays = d[pos]
    return G2Curve(delays, vals, sig, curve.kind, curve.bin_width_ns)
