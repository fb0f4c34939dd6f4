"""Hanbury Brown-Twiss detection chain.

Background light joins the fluorescence before the beamsplitter; each arm
then loses photons to finite efficiency, gains dark counts, optionally gets
Gaussian timing jitter and finally passes a non-paralyzable dead time.
"""
from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np

from . import rng as _rng
from .data import PS_PER_S, PhotonStream


@dataclass(frozen=True)
class DetectorConfig:
    efficiency: float = 1.0
    dead_time: int = 50_000      # ps
    dark_rate: float = 300.0     # s^-1
    jitter_sigma: float = 0.0    # ps, 0 disables

    def __post_init__(self):
        if not 0 <= self.efficiency <= 1:
            raise ValueError("detector efficiency must lie in [0, 1]")
        if self.dead_time < 0 or self.dark_rate < 0 or self.jitter_sigma < 0:
            raise ValueError("dead_time, dark_rate and jitter_sigma must be >= 0")

    @classmethod
    def ideal(cls) -> "DetectorConfig":
        return cls(1.0, 0, 0.0, 0.0)


@dataclass(frozen=True)
class HBTConfig:
    split_ratio: float = 0.5
    background_rate: float = 0.0   # s^-1, before the beamsplitter
    tac_delay: int = 50_000        # ps

    def __post_init__(self):
        if not 0 < self.split_ratio < 1:
            raise ValueError("split_ratio must lie strictly between 0 and 1")
        if self.background_rate < 0 or self.tac_delay < 0:
            raise ValueError("background_rate and tac_delay must be >= 0")


def thin(stream: PhotonStream, keep_probability: float, seed) -> PhotonStream:
    """Keep each event independently with ``keep_probability``."""
    if not 0 <= keep_probability <= 1:
        raise ValueError("keep_probability must lie in [0, 1]")
    if keep_probability == 1:
        return stream
    gen = _rng.generator(seed)
    mask = gen.random(len(stream)) < keep_probability
    return PhotonStream(stream.timestamps[mask], stream.duration, stream.label)


def poisson_events(rate: float, duration: int, seed) -> np.ndarray:
    """Sorted ticks of a homogeneous Poisson process on ``[0, duration)``."""
    if rate < 0:
        raise ValueError("rate must be >= 0")
    gen = _rng.generator(seed)
    n = gen.poisson(rate * duration / PS_PER_S) if rate > 0 else 0
    return np.sort(gen.integers(0, duration, size=n, dtype=np.int64))


def add_poisson_events(stream: PhotonStream, rate: float, seed) -> PhotonStream:
    """Superpose a Poisson process of ``rate`` s^-1 over the stream duration."""
    extra = poisson_events(rate, stream.duration, seed)
    if extra.size == 0:
        return stream
    ts = np.concatenate([stream.timestamps, extra])
    return PhotonStream(np.sort(ts, kind="stable"), stream.duration, stream.label)


def beamsplit(stream: PhotonStream, split_ratio: float, seed) -> tuple[PhotonStream, PhotonStream]:
    """Route each event to output 1 with ``split_ratio``, otherwise to output 2."""
    if not 0 < split_ratio < 1:
        raise ValueError("split_ratio must lie strictly between 0 and 1")
    gen = _rng.generator(seed)
    to_1 = gen.random(len(stream)) < split_ratio
    ts = stream.timestamps
    return (PhotonStream(ts[to_1], stream.duration, stream.label),
            PhotonStream(ts[~to_1], stream.duration, stream.label))


@numba.njit(cache=True, nogil=True)
def _dead_time_mask(ts, dead_time):
    keep = np.zeros(ts.size, dtype=np.bool_)
    last = np.int64(0)
    have = False
    for i in range(ts.size):
        if not have or ts[i] - last >= dead_time:
            keep[i] = True
            last = ts[i]
            have = True
    return keep


def apply_dead_time(stream: PhotonStream, dead_time: int) -> PhotonStream:
    """Non-paralyzable dead time: drop events closer than ``dead_time`` to the last kept one."""
    if dead_time <= 0 or len(stream) < 2:
        return stream
    keep = _dead_time_mask(stream.timestamps, np.int64(dead_time))
    return PhotonStream(stream.timestamps[keep], stream.duration, stream.label)


def apply_detector(stream: PhotonStream, config: DetectorConfig, seed) -> PhotonStream:
    """Efficiency, dark counts, jitter, then dead time, in that order."""
    out = thin(stream, config.efficiency, _rng.child(seed, 0))
    out = add_poisson_events(out, config.dark_rate, _rng.child(seed, 1))
    if config.jitter_sigma > 0 and len(out):
        gen = _rng.generator(seed, 2)
        shifted = out.timestamps + np.rint(gen.normal(0.0, config.jitter_sigma, len(out))).astype(np.int64)
        shifted = np.clip(shifted, 0, out.duration - 1)
        out = PhotonStream(np.sort(shifted, kind="stable"), out.duration, out.label)
    return apply_dead_time(out, config.dead_time)


def run_hbt(emission: PhotonStream, hbt: HBTConfig, det1: DetectorConfig, det2: DetectorConfig,
            seed) -> tuple[PhotonStream, PhotonStream]:
    """Background, beamsplitter and both detectors; returns the two click streams."""
    light = add_poisson_events(emission, hbt.background_rate, _rng.child(seed, 0))
    arm1, arm2 = beamsplit(light, hbt.split_ratio, _rng.child(seed, 1))
    clicks1 = apply_detector(arm1, det1, _rng.child(seed, 2)).relabel(f"{emission.label}:ch1")
    clicks2 = apply_detector(arm2, det2, _rng.child(seed, 3)).relabel(f"{emission.label}:ch2")
    return clicks1, clicks2
