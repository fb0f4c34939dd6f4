import numpy as np
import pytest
from hypothesis import assume, given, strategies as st
from scipy import integrate, stats

from antibunch.photophysics import (LevelScheme, MediumModel, RenewalSampler, analytic_g2,
                                    emission_rate, emission_rate_vs_power, g2_exponents,
                                    lifetime_in_medium, nanocrystal_lifetime, simulate_emission,
                                    simulate_trajectory, steady_state)

from oracles import (batch_mean_se, g2_by_ode, rate_matrix, steady_state_solve, two_level_g2,
                     two_level_waiting_cdf)

rates = st.floats(1e4, 1e9)
small_rates = st.floats(0.0, 1e8)


@st.composite
def schemes(draw, shelving=True):
    r = draw(rates)
    gam = draw(st.floats(1e6, 1e9))
    if not shelving:
        return LevelScheme(r, gam)
    return LevelScheme(r, gam, draw(small_rates), draw(st.floats(1e3, 1e8)),
                       draw(st.floats(0.0, 0.5)))


# --- LevelScheme ----------------------------------------------------------

@pytest.mark.parametrize("kw", [
    dict(pump_rate=-1.0, radiative_rate=1.0),
    dict(pump_rate=1.0, radiative_rate=0.0),
    dict(pump_rate=1.0, radiative_rate=1.0, shelve_rate=-1.0),
    dict(pump_rate=1.0, radiative_rate=1.0, pump_shelving=float("nan")),
])
def test_level_scheme_rejects_bad_rates(kw):
    with pytest.raises(ValueError):
        LevelScheme(**kw)


def test_rate_matrix_columns_conserve_probability():
    m = LevelScheme(1e7, 4e7, 1e6, 3e5, 0.1).rate_matrix()
    np.testing.assert_allclose(m.sum(axis=0), 0.0, atol=1e-6)


def test_pump_shelving_adds_to_shelve_rate():
    s = LevelScheme(1e7, 4e7, 1e6, 3e5, 0.1)
    assert s.effective_shelve_rate == pytest.approx(1e6 + 0.1 * 1e7)


# --- steady_state ---------------------------------------------------------

def test_steady_state_without_pump_is_ground():
    occ = steady_state(LevelScheme(0.0, 3e7, 1e6, 1e5))
    assert (occ.p_g, occ.p_e, occ.p_s) == (1.0, 0.0, 0.0)


def test_two_level_balance():
    occ = steady_state(LevelScheme(4e7, 4e7))
    assert occ.p_e == pytest.approx(0.5, rel=1e-15)
    assert occ.p_s == 0.0


def test_steady_state_against_linear_solve_example():
    # frozen from the dense 3x3 solve in oracles.steady_state_solve
    occ = steady_state(LevelScheme(1e7, 4e7, 1e6, 3e5))
    assert occ.p_e == pytest.approx(0.11857707509881424, rel=1e-12)
    assert occ.p_g == pytest.approx(0.48616600790513836, rel=1e-12)
    assert occ.p_s == pytest.approx(0.3952569169960475, rel=1e-12)


@given(schemes())
def test_steady_state_is_normalized_fixed_point(s):
    p = steady_state(s).as_array()
    assert np.all((p >= 0) & (p <= 1))
    assert abs(p.sum() - 1.0) < 1e-12
    m = s.rate_matrix()
    scale = np.abs(m).max()
    assert np.abs(m @ p).max() <= 1e-9 * scale


@given(schemes())
def test_steady_state_matches_dense_solve(s):
    ref = steady_state_solve(s.pump_rate, s.radiative_rate, s.effective_shelve_rate, s.deshelve_rate)
    np.testing.assert_allclose(steady_state(s).as_array(), ref, rtol=1e-9, atol=1e-9)  # dense solve conditioning ~ max/min rate * eps


def test_emission_rate_is_gamma_times_pe():
    s = LevelScheme(1e7, 4e7, 1e6, 3e5)
    assert emission_rate(s) == pytest.approx(4e7 * 0.11857707509881424, rel=1e-12)


# --- analytic g2 ----------------------------------------------------------

def test_two_level_g2_matches_closed_form():
    r, gam = 2.3e7, 4e7
    tau = np.linspace(0, 300, 1000)
    g = analytic_g2(LevelScheme(r, gam), tau).values
    ref = two_level_g2(r, gam, tau)
    nz = tau > 0
    np.testing.assert_allclose(g[nz], ref[nz], rtol=1e-9)
    assert g[0] == 0.0


@given(schemes())
def test_g2_starts_at_zero_and_ends_at_one(s):
    m = s.rate_matrix() * 1e-9
    slowest = np.sort(np.abs(np.linalg.eigvals(m).real))[1]
    slow = 60.0 / slowest
    g = analytic_g2(s, [0.0, slow]).values
    assert g[0] == 0.0
    assert abs(g[1] - 1.0) < 1e-6


def test_g2_agrees_with_ode_integration():
    s = LevelScheme(2e7, 4e7, 2e6, 5e5, 0.05)
    tau = np.array([1.0, 10.0, 50.0, 400.0])
    ode = g2_by_ode(s.pump_rate, s.radiative_rate, s.effective_shelve_rate, s.deshelve_rate, tau)
    np.testing.assert_allclose(analytic_g2(s, tau).values, ode, rtol=1e-8)


def test_shelving_produces_bunching():
    s = LevelScheme(3e7, 4e7, 4e5, 1e6)
    g = analytic_g2(s, np.linspace(0, 3000, 3001)).values
    assert g.max() > 1.0


def test_two_level_has_no_bunching():
    g = analytic_g2(LevelScheme(3e7, 4e7), np.linspace(0, 1000, 2001)).values
    assert g.max() <= 1.0 + 1e-12


def test_degenerate_exponents_rejected():
    with pytest.raises(ValueError):
        g2_exponents(LevelScheme(960401.0, 1e6, 962354.0, 1000001.0))


def test_negative_delays_rejected():
    with pytest.raises(ValueError):
        analytic_g2(LevelScheme(1e7, 4e7), [-1.0, 0.0])


@given(schemes())
def test_exponents_reproduce_analytic_g2(s):
    try:
        lam1, lam2, a = g2_exponents(s)
    except ValueError:
        assume(False)
    assert lam1 > lam2 >= 0
    slow = 5 / lam2 if lam2 > 0 else 50 / lam1
    tau = np.concatenate([np.linspace(0, 5 / lam1, 50), np.linspace(5 / lam1, slow, 50)])
    model = 1 - (1 + a) * np.exp(-lam1 * tau) + a * np.exp(-lam2 * tau)
    np.testing.assert_allclose(analytic_g2(s, tau).values[1:], model[1:], atol=1e-8)


# --- medium -----------------------------------------------------------------

def test_lifetime_in_medium_examples():
    assert lifetime_in_medium(3.0, 1.0, 1.0) == 3.0
    assert lifetime_in_medium(1.5, 2.4) == pytest.approx(2.4 * 1.5)
    assert lifetime_in_medium(1.0, 2.0, 1.5) == pytest.approx(4.5)


@given(st.floats(1e3, 1e12), st.floats(1.0, 5.0))
def test_lifetime_in_medium_scales_with_index(gv, n):
    assert lifetime_in_medium(gv, n, 1.0) / gv == pytest.approx(n, rel=1e-15)


def test_lifetime_in_medium_validation():
    for args in [(1.0, 0.5, 1.0), (1.0, 2.0, 0.0), (0.0, 2.0, 1.0)]:
        with pytest.raises(ValueError):
            lifetime_in_medium(*args)


def test_nanocrystal_lifetime_examples():
    assert nanocrystal_lifetime(MediumModel(2.4, 1.45, 1.0, 11.6)) == pytest.approx(22.7, abs=0.05)
    assert nanocrystal_lifetime(MediumModel(1.0, 1.0, 1.0, 11.6)) == pytest.approx(11.6)
    assert nanocrystal_lifetime(MediumModel(2.4, 1.0, 1.0, 11.6)) == pytest.approx(27.84)


@given(st.floats(1.0, 4.0), st.floats(1.0, 4.0), st.floats(1e-3, 1.0))
def test_nanocrystal_lifetime_monotone(nd, ns, d):
    base = nanocrystal_lifetime(MediumModel(nd, ns, 1.0, 11.6))
    assert nanocrystal_lifetime(MediumModel(nd + d, ns, 1.0, 11.6)) > base
    assert nanocrystal_lifetime(MediumModel(nd, ns + d, 1.0, 11.6)) < base


def test_medium_validation():
    with pytest.raises(ValueError):
        MediumModel(0.9, 1.45)
    with pytest.raises(ValueError):
        MediumModel(2.4, 1.45, 0.0)


# --- saturation -------------------------------------------------------------

def test_rate_vs_power_zero_power():
    assert emission_rate_vs_power(LevelScheme(0, 4e7, 1e5, 1e6), 2e7, [0.0]) == [(0.0, 0.0)]


def test_rate_vs_power_monotone_plateau_without_beta():
    tmpl = LevelScheme(0, 4e7, 4e5, 1e6)
    pts = emission_rate_vs_power(tmpl, 2e7, np.linspace(0, 50, 60))
    r = np.array([p[1] for p in pts])
    assert np.all(np.diff(r) > 0)
    plateau = emission_rate(tmpl.with_pump(1e6 * 4e7))
    assert r[-1] < plateau
    assert plateau == pytest.approx(4e7 * 1e6 / (1e6 + 4e5), rel=1e-5)


def test_rate_vs_power_declines_with_beta():
    pts = emission_rate_vs_power(LevelScheme(0, 4e7, 1e5, 1e6, 0.0138), 2e7, np.linspace(0.1, 8, 80))
    r = np.array([p[1] for p in pts])
    i = int(np.argmax(r))
    assert 0 < i < r.size - 1
    assert r[-1] < r[i]


def test_rate_vs_power_validation():
    with pytest.raises(ValueError):
        emission_rate_vs_power(LevelScheme(0, 4e7), 0.0, [1.0])
    with pytest.raises(ValueError):
        emission_rate_vs_power(LevelScheme(0, 4e7), 1.0, [-1.0])


# --- trajectories -------------------------------------------------------------

def test_no_pump_no_photons():
    s = simulate_emission(LevelScheme(0.0, 4e7), 1e6, 1)
    assert len(s) == 0 and s.duration == 1_000_000_000


def test_emission_is_deterministic():
    sch = LevelScheme(2e7, 4e7, 1e6, 3e5)
    a = simulate_emission(sch, 1e6, 42)
    b = simulate_emission(sch, 1e6, 42)
    assert a == b and len(a) > 0
    assert a.timestamps.tobytes() == b.timestamps.tobytes()
    assert simulate_emission(sch, 1e6, 43) != a


def test_emission_rate_matches_steady_state():
    sch = LevelScheme(2e7, 4e7, 1e6, 3e5)
    n_batches, each = 40, 2e6  # ns
    rates = [len(simulate_emission(sch, each, (7, i))) / (each * 1e-9) for i in range(n_batches)]
    mean, se = batch_mean_se(rates)
    assert abs(mean - emission_rate(sch)) < 4 * se


def test_occupancies_match_steady_state():
    sch = LevelScheme(2e7, 4e7, 2e6, 1e6)
    fractions = []
    for i in range(30):
        times, states, s0 = simulate_trajectory(sch, 2e5, (11, i))
        t_end = 2e5 * 1e3
        edges = np.concatenate([[0.0], times, [t_end]])
        occupied = np.concatenate([[s0], states])
        fractions.append(np.bincount(occupied, weights=np.diff(edges), minlength=3) / t_end)
    fractions = np.array(fractions)
    ref = steady_state(sch).as_array()
    for j in range(3):
        mean, se = batch_mean_se(fractions[:, j])
        assert abs(mean - ref[j]) < 4 * se


def test_two_level_waiting_times():
    r, gam = 1.5e7, 4e7
    s = simulate_emission(LevelScheme(r, gam), 5e6, 5)
    waits = np.diff(s.timestamps) / 1e3  # ns
    mean_ref = 1e9 / (gam * steady_state(LevelScheme(r, gam)).p_e)
    se = waits.std(ddof=1) / np.sqrt(waits.size)
    assert abs(waits.mean() - mean_ref) < 3 * se
    # shape: Kolmogorov-Smirnov against the hypoexponential CDF (ticks add 1 ps rounding)
    ks = stats.kstest(waits, lambda t: two_level_waiting_cdf(r, gam, t))
    assert ks.pvalue > 1e-3


def test_emission_with_efficiency_matches_thinning_rate():
    sch = LevelScheme(2e7, 4e7, 1e6, 3e5, 0.02)
    eta = 0.01
    rates = [len(simulate_emission(sch, 2e8, (3, i), efficiency=eta)) / 0.2 for i in range(20)]
    mean, se = batch_mean_se(rates)
    assert abs(mean - eta * emission_rate(sch)) < 4 * se


def test_renewal_sampler_density_is_normalized_with_correct_mean():
    sch = LevelScheme(2e7, 4e7, 1e6, 3e5)
    eta = 0.05
    smp = RenewalSampler.build(sch, eta)
    assert smp is not None
    total, _ = integrate.quad(lambda t: smp.density(t), 0, np.inf, limit=400)
    assert total == pytest.approx(1.0, rel=1e-8)
    mean, _ = integrate.quad(lambda t: t * smp.density(t), 0, np.inf, limit=400)
    assert mean == pytest.approx(1e9 / (eta * emission_rate(sch)), rel=1e-8)


def test_renewal_sampler_matches_jump_simulation_with_thinning():
    # same process, two independent algorithms: waiting-time laws must agree
    sch = LevelScheme(3e7, 4e7, 2e6, 1e6)
    eta = 0.2
    direct = simulate_emission(sch, 2e7, 1, efficiency=eta)
    from antibunch.photophysics import _gillespie, _rates_per_ps
    from antibunch import rng
    times, _ = _gillespie(_rates_per_ps(sch), 2e10, 0, eta, rng.generator(2), False)
    w1 = np.diff(direct.timestamps)
    w2 = np.diff(np.rint(times))
    assert stats.ks_2samp(w1, w2).pvalue > 1e-3


def test_sampler_falls_back_for_absorbing_shelf():
    sch = LevelScheme(3e7, 4e7, 1e6, 0.0)
    assert RenewalSampler.build(sch, 0.5) is None
    s = simulate_emission(sch, 1e5, 1, efficiency=0.5)
    assert len(s) < 1000  # trapped after ~1 us on average


def test_efficiency_bounds():
    with pytest.raises(ValueError):
        simulate_emission(LevelScheme(1e7, 4e7), 1e3, 1, efficiency=1.5)
    with pytest.raises(ValueError):
        simulate_emission(LevelScheme(1e7, 4e7), 0.0, 1)


def test_sampler_rate_matrix_consistency():
    # the stationary start of the sampler is the steady state of the full model
    sch = LevelScheme(2e7, 4e7, 1e6, 3e5)
    p = steady_state(sch).as_array()
    m = rate_matrix(sch.pump_rate, sch.radiative_rate, sch.effective_shelve_rate, sch.deshelve_rate)
    assert np.abs(m @ p).max() < 1e-6
