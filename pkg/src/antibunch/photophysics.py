"""Rate-equation model of a single colour centre with a dark shelving level.

States are ground ``g``, excited ``e`` and shelf ``s``.  Pumping drives
g -> e at rate ``r``, e -> g is radiative (one photon per jump) at ``gamma``,
e -> s at ``k_es`` (optionally ``+ beta * r``) and s -> g at ``k_sg``.  The
fast vibronic relaxations of the real four-level system are taken as
instantaneous, so these three states are all we track.

Rates are in s^-1, delays handed to :func:`analytic_g2` in ns, stream times in
integer ps.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numba
import numpy as np
from scipy.linalg import expm

from . import rng as _rng
from .data import PS_PER_NS, PS_PER_S, G2Curve, PhotonStream

G, E, S = 0, 1, 2


@dataclass(frozen=True)
class LevelScheme:
    pump_rate: float
    radiative_rate: float
    shelve_rate: float = 0.0
    deshelve_rate: float = 0.0
    pump_shelving: float = 0.0  # beta: adds beta * pump_rate to e -> s

    def __post_init__(self):
        for name in ("pump_rate", "shelve_rate", "deshelve_rate", "pump_shelving"):
            v = getattr(self, name)
            if not np.isfinite(v) or v < 0:
                raise ValueError(f"{name} must be finite and >= 0, got {v}")
        if not (np.isfinite(self.radiative_rate) and self.radiative_rate > 0):
            raise ValueError(f"radiative_rate must be > 0, got {self.radiative_rate}")

    @property
    def effective_shelve_rate(self) -> float:
        return self.shelve_rate + self.pump_shelving * self.pump_rate

    def with_pump(self, pump_rate: float) -> "LevelScheme":
        return replace(self, pump_rate=float(pump_rate))

    def rate_matrix(self) -> np.ndarray:
        """Generator ``M`` with ``dp/dt = M @ p`` for ``p = (p_g, p_e, p_s)``."""
        r, gam, k, ksg = (self.pump_rate, self.radiative_rate,
                          self.effective_shelve_rate, self.deshelve_rate)
        return np.array([[-r, gam, ksg],
                         [r, -(gam + k), 0.0],
                         [0.0, k, -ksg]])


@dataclass(frozen=True)
class Occupations:
    p_g: float
    p_e: float
    p_s: float

    def as_array(self) -> np.ndarray:
        return np.array([self.p_g, self.p_e, self.p_s])


@dataclass(frozen=True)
class MediumModel:
    """Dielectric surroundings of the emitter (indices are dimensionless, lifetime in ns)."""

    bulk_index: float = 2.4
    substrate_index: float = 1.45
    local_field_factor: float = 1.0
    bulk_lifetime: float = 11.6

    def __post_init__(self):
        if self.bulk_index < 1 or self.substrate_index < 1:
            raise ValueError("refractive indices must be >= 1")
        if self.local_field_factor <= 0 or self.bulk_lifetime <= 0:
            raise ValueError("local field factor and bulk lifetime must be > 0")


def steady_state(scheme: LevelScheme) -> Occupations:
    """Stationary occupations of the three-state model.

    With no pumping everything sits in ``g``. A shelf that cannot be left
    (``k_sg = 0``, ``k_es > 0``) eventually traps all population.
    """
    r, gam = scheme.pump_rate, scheme.radiative_rate
    k, ksg = scheme.effective_shelve_rate, scheme.deshelve_rate
    if r == 0:
        return Occupations(1.0, 0.0, 0.0)
    if k == 0:
        p_e = r / (r + gam)
        return Occupations(gam / (r + gam), p_e, 0.0)
    denom = ksg * (r + gam + k) + r * k
    return Occupations(ksg * (gam + k) / denom, r * ksg / denom, r * k / denom)


def emission_rate(scheme: LevelScheme) -> float:
    """Stationary photon emission rate gamma * p_e in s^-1."""
    return scheme.radiative_rate * steady_state(scheme).p_e


def analytic_g2(scheme: LevelScheme, delays) -> G2Curve:
    """g2(tau) for delays in ns, from the excited-state population after a
    photon has just been emitted (system in ``g``), divided by its stationary
    value.
    """
    tau = np.asarray(delays, dtype=float)
    if np.any(tau < 0):
        raise ValueError("delays must be >= 0; use g2(-tau) = g2(tau)")
    p_ss = steady_state(scheme).p_e
    if p_ss == 0:
        raise ValueError("no stationary emission; g2 is undefined")
    m = scheme.rate_matrix() * 1e-9  # per ns
    props = expm(tau.reshape(-1, 1, 1) * m)
    g2 = props[:, E, G] / p_ss
    g2[tau == 0] = 0.0
    return G2Curve(tau, g2, np.zeros_like(tau), kind="analytic")


def g2_exponents(scheme: LevelScheme) -> tuple[float, float, float]:
    """(lambda_1, lambda_2, a) in ns^-1 such that
    g2 = 1 - (1 + a) exp(-lambda_1 tau) + a exp(-lambda_2 tau).

    lambda_1 is the fast (antibunching) rate, lambda_2 the shelving rate.
    Raises ValueError when the two rates coincide or are complex (strong
    shelving near saturation of a slow emitter); the curve then rings or has a
    tau*exp term and the biexponential form does not apply.
    """
    r, gam = scheme.pump_rate * 1e-9, scheme.radiative_rate * 1e-9
    k, ksg = scheme.effective_shelve_rate * 1e-9, scheme.deshelve_rate * 1e-9
    if r == 0:
        raise ValueError("g2 is undefined without pumping")
    if k == 0:
        return float(r + gam), 0.0, 0.0  # two-level: no shelving component
    trace = r + gam + k + ksg
    det = r * k + r * ksg + gam * ksg + k * ksg
    d2 = trace * trace - 4 * det
    if d2 <= 1e-12 * trace * trace:
        raise ValueError("degenerate or complex g2 exponents")
    disc = np.sqrt(max(d2, 0.0))
    lam1 = 0.5 * (trace + disc)
    lam2 = det / lam1  # stable form of the small root
    p_e = steady_state(scheme).p_e
    slope0 = r / p_e  # d g2 / d tau at 0
    a = (slope0 - lam1) / (lam1 - lam2)
    return float(lam1), float(lam2), float(a)


def lifetime_in_medium(gamma_vacuum: float, n: float, l: float = 1.0) -> float:
    """Spontaneous emission rate in a medium of index ``n`` with local-field
    factor ``l``: ``n * l**2 * gamma_vacuum``.
    """
    if n < 1 or l <= 0 or gamma_vacuum <= 0:
        raise ValueError("need n >= 1, l > 0 and gamma_vacuum > 0")
    return n * l * l * gamma_vacuum


def nanocrystal_lifetime(medium: MediumModel) -> float:
    """Lifetime (ns) of a centre in a sub-wavelength crystal that radiates into
    air over one half-space and into the substrate over the other.

    The vacuum rate follows from the bulk lifetime, then the two half-spaces
    contribute their own ``n * gamma_vacuum``. Local-field factors are
    assumed identical in bulk and crystal and cancel.
    """
    n_d, n_s = medium.bulk_index, medium.substrate_index
    return 2.0 * n_d * medium.bulk_lifetime / (1.0 + n_s)


def emission_rate_vs_power(scheme_template: LevelScheme, kappa: float, powers) -> list[tuple[float, float]]:
    """Stationary emission rate for each pump power (mW), with ``r = kappa * P``."""
    if kappa <= 0:
        raise ValueError("pump calibration kappa must be > 0")
    out = []
    for p in powers:
        if p < 0:
            raise ValueError("pump powers must be >= 0")
        out.append((float(p), emission_rate(scheme_template.with_pump(kappa * p))))
    return out


# --- stochastic trajectories -------------------------------------------------

@numba.njit(cache=True, nogil=True)
def _gillespie(rates, t_end, state, keep, gen, record_jumps):
    # rates per ps: r, gamma, k_es, k_sg. Returns event times (ps, float) and
    # for record_jumps the state entered at each time (else emissions only).
    r, gam, k, ksg = rates[0], rates[1], rates[2], rates[3]
    cap = 1024
    times = np.empty(cap, dtype=np.float64)
    states = np.empty(cap, dtype=np.int8)
    n = 0
    t = 0.0
    while True:
        if state == 0:
            out = r
        elif state == 1:
            out = gam + k
        else:
            out = ksg
        if out == 0.0:
            break
        t += gen.standard_exponential() / out
        if t >= t_end:
            break
        emitted = False
        if state == 0:
            state = 1
        elif state == 1:
            if gen.random() * out < gam:
                state = 0
                emitted = True
            else:
                state = 2
        else:
            state = 0
        if record_jumps:
            store = True
        elif emitted:
            store = keep >= 1.0 or gen.random() < keep
        else:
            store = False
        if store:
            if n == cap:
                cap *= 2
                t2 = np.empty(cap, dtype=np.float64)
                t2[:n] = times[:n]
                times = t2
                s2 = np.empty(cap, dtype=np.int8)
                s2[:n] = states[:n]
                states = s2
            times[n] = t
            states[n] = state
            n += 1
    return times[:n], states[:n]


def _rates_per_ps(scheme: LevelScheme) -> np.ndarray:
    return np.array([scheme.pump_rate, scheme.radiative_rate,
                     scheme.effective_shelve_rate, scheme.deshelve_rate]) / PS_PER_S


def _initial_state(scheme: LevelScheme, gen: np.random.Generator) -> int:
    p = steady_state(scheme).as_array()
    return int(np.searchsorted(np.cumsum(p), gen.random() * p.sum(), side="right").clip(0, 2))


def _duration_ps(duration_ns: float) -> int:
    if not duration_ns > 0:
        raise ValueError("duration must be > 0")
    return int(round(duration_ns * PS_PER_NS))


def simulate_trajectory(scheme: LevelScheme, duration: float, seed) -> tuple[np.ndarray, np.ndarray, int]:
    """Full jump record of one trajectory.

    Returns ``(jump_times_ps, new_states, initial_state)``; times are float ps.
    The initial state is drawn from the stationary occupations.
    """
    t_end = _duration_ps(duration)
    gen = _rng.generator(seed)
    s0 = _initial_state(scheme, gen)
    times, states = _gillespie(_rates_per_ps(scheme), float(t_end), s0, 1.0, gen, True)
    return times, states.astype(np.int64), s0


def simulate_emission(scheme: LevelScheme, duration: float, seed, efficiency: float = 1.0,
                      label: str = "emission") -> PhotonStream:
    """Photon emission times of one emitter over ``duration`` ns.

    Jump times are drawn exactly (exponential holding times, no time step) and
    rounded to ps ticks. ``efficiency < 1`` returns only a random fraction of
    the photons, which is distributed exactly like ``thin(stream, efficiency)``
    but is sampled directly from the renewal structure of the emission
    process, so that very long, weakly collected acquisitions stay cheap.
    """
    t_end = _duration_ps(duration)
    if not 0 <= efficiency <= 1:
        raise ValueError("efficiency must lie in [0, 1]")
    if scheme.pump_rate == 0 or efficiency == 0:
        return PhotonStream.empty(t_end, label)
    if efficiency < 1:
        sampler = RenewalSampler.build(scheme, efficiency)
        if sampler is not None:
            return PhotonStream(sampler.sample(t_end, _rng.generator(seed)), t_end, label)
    gen = _rng.generator(seed)
    s0 = _initial_state(scheme, gen)
    times, _ = _gillespie(_rates_per_ps(scheme), float(t_end), s0, float(efficiency), gen, False)
    return PhotonStream(_to_ticks(times, t_end), t_end, label)


def _to_ticks(times_ps: np.ndarray, t_end: int) -> np.ndarray:
    ticks = np.rint(times_ps).astype(np.int64)
    return np.minimum(ticks, t_end - 1)


class RenewalSampler:
    """Waiting times between collected photons.

    After every emission the centre is back in ``g``, so emissions form a
    renewal process; keeping each photon with probability ``eta`` leaves a
    renewal process whose waiting time is phase-type with sub-generator
    ``T`` (emission with probability ``1 - eta`` just returns to ``g``).  Its
    density is ``sum_i c_i exp(-l_i t)``.  Waiting times are drawn by
    rejection from the mixture of the terms with ``c_i > 0``, which bounds
    the density from above.
    """

    def __init__(self, rates, coef_g, coef_ss):
        self.rates = rates        # decay rates l_i, ns^-1
        self.coef_g = coef_g      # start in g (after a photon)
        self.coef_ss = coef_ss    # stationary start

    @classmethod
    def build(cls, scheme: LevelScheme, eta: float):
        r, gam = scheme.pump_rate * 1e-9, scheme.radiative_rate * 1e-9
        k, ksg = scheme.effective_shelve_rate * 1e-9, scheme.deshelve_rate * 1e-9
        if k > 0 and ksg == 0:
            return None  # absorbing shelf: emission stops for good
        if k == 0:
            t_mat = np.array([[-r, r], [gam * (1 - eta), -gam]])
            exit_ = np.array([0.0, gam * eta])
            occ = steady_state(scheme)
            alpha_ss = np.array([occ.p_g, occ.p_e])
        else:
            t_mat = np.array([[-r, r, 0.0],
                              [gam * (1 - eta), -(gam + k), k],
                              [ksg, 0.0, -ksg]])
            exit_ = np.array([0.0, gam * eta, 0.0])
            alpha_ss = steady_state(scheme).as_array()
        mu, vecs = np.linalg.eig(t_mat)
        if np.linalg.cond(vecs) > 1e8:
            return None  # (near-)defective: fall back to the jump simulation
        if np.any(np.abs(mu.imag) > 1e-12 * np.abs(mu.real)) or np.any(mu.real >= 0):
            return None  # oscillating density: leave it to the jump simulation
        right = np.linalg.solve(vecs, exit_.astype(complex))
        alpha_g = np.zeros(len(mu))
        alpha_g[0] = 1.0
        coef_g = ((alpha_g @ vecs) * right).real
        coef_ss = ((alpha_ss @ vecs) * right).real
        return cls(-mu.real, coef_g, coef_ss)

    def density(self, t_ns, stationary: bool = False) -> np.ndarray:
        coef = self.coef_ss if stationary else self.coef_g
        t = np.asarray(t_ns, dtype=float)
        return np.exp(-np.multiply.outer(t, self.rates)) @ coef

    def sample(self, t_end_ps: int, gen: np.random.Generator) -> np.ndarray:
        """Collected-photon ticks in ``[0, t_end_ps)`` for a stationary start."""
        return _renewal_kernel(self.rates, self.coef_g, self.coef_ss, np.int64(t_end_ps), gen)


@numba.njit(cache=True, nogil=True)
def _mixture_weights(rates, coef):
    w = np.zeros(rates.size)
    for i in range(rates.size):
        if coef[i] > 0:
            w[i] = coef[i] / rates[i]
    return np.cumsum(w)


@numba.njit(cache=True, nogil=True, inline="always")
def _phase_type_draw(rates, coef, cum, gen):
    # proposal: mixture of the positive terms; returns ns
    while True:
        u = gen.random() * cum[-1]
        i = 0
        while cum[i] <= u:
            i += 1
        t = gen.standard_exponential() / rates[i]
        f = 0.0
        env = 0.0
        for j in range(rates.size):
            x = rates[j] * t
            term = coef[j] * np.exp(-x) if x < 700.0 else 0.0  # skip slow underflow
            f += term
            if coef[j] > 0:
                env += term
        if gen.random() * env < f:
            return t


@numba.njit(cache=True, nogil=True)
def _renewal_kernel(rates, coef_g, coef_ss, t_end, gen):
    cum_g = _mixture_weights(rates, coef_g)
    cum_ss = _mixture_weights(rates, coef_ss)
    cap = 1024
    out = np.empty(cap, dtype=np.int64)
    n = 0
    base = np.int64(0)                                     # ps
    frac = _phase_type_draw(rates, coef_ss, cum_ss, gen) * 1000.0
    while True:
        whole = np.floor(frac)
        base += np.int64(whole)
        frac -= whole
        tick = base + np.int64(np.rint(frac))
        if tick >= t_end:
            break
        if n == cap:
            cap *= 2
            grown = np.empty(cap, dtype=np.int64)
            grown[:n] = out[:n]
            out = grown
        out[n] = tick
        n += 1
        frac += _phase_type_draw(rates, coef_g, cum_g, gen) * 1000.0
    return out[:n]
