"""Event streams, coincidence histograms and correlation curves.

Timestamps are integer picosecond ticks counted from the start of the
stream. Everything downstream of the simulation works on these ticks so
that binning is exact and streams can be compared bit for bit.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

PS_PER_NS = 1_000
PS_PER_S = 1_000_000_000_000


@dataclass(frozen=True, eq=False)
class PhotonStream:
    """Sorted click or emission times with the acquisition length.

    Parameters
    ----------
    timestamps : array of int
        Non-decreasing picosecond ticks, each ``< duration``.
    duration : int
        Length of the acquisition in picoseconds.
    label : str
        Free-text provenance.
    """

    timestamps: np.ndarray
    duration: int
    label: str = ""

    def __post_init__(self):
        ts = np.ascontiguousarray(self.timestamps, dtype=np.int64)
        ts.setflags(write=False)
        object.__setattr__(self, "timestamps", ts)
        object.__setattr__(self, "duration", int(self.duration))
        if self.duration <= 0:
            raise ValueError(f"duration must be positive, got {self.duration}")
        if ts.ndim != 1:
            raise ValueError("timestamps must be one-dimensional")
        if ts.size:
            if ts[0] < 0 or ts[-1] >= self.duration:
                raise ValueError("timestamps must lie in [0, duration)")
            if np.any(np.diff(ts) < 0):
                raise ValueError("timestamps must be non-decreasing")

    def __len__(self):
        return self.timestamps.size

    def __eq__(self, other):
        if not isinstance(other, PhotonStream):
            return NotImplemented
        return (self.duration == other.duration and self.label == other.label
                and np.array_equal(self.timestamps, other.timestamps))

    __hash__ = None

    @property
    def duration_s(self) -> float:
        return self.duration / PS_PER_S

    @property
    def rate(self) -> float:
        """Mean event rate in s^-1."""
        return len(self) / self.duration_s

    def relabel(self, label: str) -> "PhotonStream":
        return PhotonStream(self.timestamps, self.duration, label)

    @classmethod
    def empty(cls, duration: int, label: str = "") -> "PhotonStream":
        return cls(np.empty(0, dtype=np.int64), duration, label)


def merge(*streams: PhotonStream, label: str = "merged") -> PhotonStream:
    """Superpose streams of identical duration into one sorted stream."""
    if not streams:
        raise ValueError("need at least one stream")
    durations = {s.duration for s in streams}
    if len(durations) != 1:
        raise ValueError(f"streams have different durations: {sorted(durations)}")
    ts = np.concatenate([s.timestamps for s in streams])
    return PhotonStream(np.sort(ts, kind="stable"), streams[0].duration, label)


MODES = ("tac-start-stop", "all-pairs")


@dataclass(frozen=True, eq=False)
class CoincidenceHistogram:
    """Binned coincidences c(tau) plus what is needed to normalize them.

    Bin ``i`` covers delays ``[tau_min + i*w, tau_min + (i+1)*w)`` in ps.
    ``acquisition_time`` is in seconds, ``rate_1``/``rate_2`` in s^-1.
    """

    bin_width: int
    tau_min: int
    tau_max: int
    counts: np.ndarray
    acquisition_time: float
    rate_1: float
    rate_2: float
    mode: str = "all-pairs"

    def __post_init__(self):
        counts = np.asarray(self.counts, dtype=np.int64)
        object.__setattr__(self, "counts", counts)
        if self.bin_width <= 0:
            raise ValueError("bin width must be positive")
        if self.tau_max <= self.tau_min:
            raise ValueError("tau_max must exceed tau_min")
        if counts.size != (self.tau_max - self.tau_min) // self.bin_width:
            raise ValueError("counts length does not match range / bin width")
        if np.any(counts < 0):
            raise ValueError("counts must be non-negative")
        if not self.acquisition_time > 0:
            raise ValueError("acquisition time must be positive")
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}")

    def __eq__(self, other):
        if not isinstance(other, CoincidenceHistogram):
            return NotImplemented
        return (self.bin_width == other.bin_width and self.tau_min == other.tau_min
                and self.tau_max == other.tau_max
                and np.array_equal(self.counts, other.counts)
                and self.acquisition_time == other.acquisition_time
                and self.rate_1 == other.rate_1 and self.rate_2 == other.rate_2
                and self.mode == other.mode)

    __hash__ = None

    @property
    def edges(self) -> np.ndarray:
        """Bin edges in ps."""
        return self.tau_min + self.bin_width * np.arange(self.counts.size + 1, dtype=np.int64)

    @property
    def centers_ns(self) -> np.ndarray:
        return (self.tau_min + self.bin_width * (np.arange(self.counts.size) + 0.5)) / PS_PER_NS

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def __add__(self, other: "CoincidenceHistogram") -> "CoincidenceHistogram":
        """Pool two acquisitions with the same binning (rates are time-weighted)."""
        if (self.bin_width, self.tau_min, self.tau_max, self.mode) != (
                other.bin_width, other.tau_min, other.tau_max, other.mode):
            raise ValueError("histograms have different binning or mode")
        t = self.acquisition_time + other.acquisition_time
        return CoincidenceHistogram(
            self.bin_width, self.tau_min, self.tau_max, self.counts + other.counts, t,
            (self.rate_1 * self.acquisition_time + other.rate_1 * other.acquisition_time) / t,
            (self.rate_2 * self.acquisition_time + other.rate_2 * other.acquisition_time) / t,
            self.mode)


KINDS = ("raw-normalized", "background-corrected", "analytic")


@dataclass(frozen=True, eq=False)
class G2Curve:
    """Correlation values on a delay grid (ns) with one-sigma errors."""

    delays: np.ndarray
    values: np.ndarray
    sigma: np.ndarray
    kind: str = "raw-normalized"
    bin_width_ns: float | None = None
    counts: np.ndarray | None = field(default=None)

    def __post_init__(self):
        for name in ("delays", "values", "sigma"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        if not (self.delays.shape == self.values.shape == self.sigma.shape):
            raise ValueError("delays, values and sigma must have the same shape")
        if self.kind not in KINDS:
            raise ValueError(f"unknown curve kind {self.kind!r}")
        if np.any(self.sigma < 0):
            raise ValueError("sigma must be non-negative")

    def __len__(self):
        return self.delays.size

    def index_of(self, tau_ns: float) -> int:
        """Index of the bin whose interval contains ``tau_ns``."""
        if self.bin_width_ns is None:
            return int(np.argmin(np.abs(self.delays - tau_ns)))
        lo = self.delays[0] - 0.5 * self.bin_width_ns
        i = int(np.floor((tau_ns - lo) / self.bin_width_ns))
        if not 0 <= i < len(self):
            raise ValueError(f"delay {tau_ns} ns is outside the curve")
        return i

    def value_at(self, tau_ns: float) -> tuple[float, float]:
        """(value, sigma) of the bin containing ``tau_ns``."""
        i = self.index_of(tau_ns)
        return float(self.values[i]), float(self.sigma[i])

    def window(self, max_abs_ns: float) -> "G2Curve":
        """Restrict to ``|tau| <= max_abs_ns``."""
        m = np.abs(self.delays) <= max_abs_ns
        return G2Curve(self.delays[m], self.values[m], self.sigma[m], self.kind,
                       self.bin_width_ns, None if self.counts is None else self.counts[m])
