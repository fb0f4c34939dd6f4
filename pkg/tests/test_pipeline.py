import json

import numpy as np
import pytest
from scipy import integrate

from antibunch import config as C
from antibunch.data import PS_PER_S
from antibunch.photophysics import LevelScheme, analytic_g2
from antibunch.pipeline import (acquire, analyze_point, base_report, bin_average_g2,
                                expected_background_rate, expected_signal_rate, report_json,
                                run_antibunching, simulate_linescan, simulate_segment,
                                summary_report, summary_text)


@pytest.fixture(scope="module")
def small():
    return C.nanocrystal().replace(powers_mw=(2.7,), acquisition_time_s=3.0, segment_time_s=1.0,
                                   histogram=C.HistogramConfig(1.0, (-100.5, 100.5)))


def test_segment_is_deterministic_and_keyed(small):
    a = simulate_segment(small, 0, 0, 1.0)
    b = simulate_segment(small, 0, 0, 1.0)
    c = simulate_segment(small, 0, 1, 1.0)
    assert a[0] == b[0] and a[1] == b[1]
    assert not np.array_equal(a[0].timestamps[:50], c[0].timestamps[:50])
    assert a[0].duration == PS_PER_S


def test_segment_rates_match_expectation(small):
    s1, s2 = simulate_segment(small, 0, 0, 1.0)
    total = expected_signal_rate(small, 2.7) + expected_background_rate(small, 2.7)
    # dead time losses at 50 ns are ~0.1 %
    assert len(s1) + len(s2) == pytest.approx(total, rel=0.03)
    assert len(s1) / (len(s1) + len(s2)) == pytest.approx(small.detection.split_ratio, abs=0.01)


def test_acquire_independent_of_workers(small):
    assert acquire(small, 0, workers=1) == acquire(small, 0, workers=3)


def test_acquire_pools_segments(small):
    h = acquire(small, 0)
    assert h.acquisition_time == pytest.approx(3.0)
    first = acquire(small.replace(acquisition_time_s=1.0), 0)
    assert np.all(h.counts >= first.counts) and h.total > first.total


def test_multiple_emitters_add_signal(small):
    two = small.replace(emitter=C.EmitterConfig(**{**C.to_dict(small.emitter), "count": 2}))
    assert expected_signal_rate(two, 2.7) == pytest.approx(2 * expected_signal_rate(small, 2.7))
    s1, _ = simulate_segment(two, 0, 0, 0.5)
    one, _ = simulate_segment(small, 0, 0, 0.5)
    assert len(s1) > 1.6 * len(one)


def test_linescan_rho(small):
    x, counts = simulate_linescan(small, 2.7, (small.seed, 3, 0))
    assert x[0] == pytest.approx(-3.0) and x[-1] == pytest.approx(3.0)
    pt = analyze_point(small, 0)
    s = expected_signal_rate(small, 2.7)
    b = expected_background_rate(small, 2.7)
    assert pt.linescan.converged
    assert pt.linescan["rho"] == pytest.approx(s / (s + b), abs=0.02)


def test_analyze_point_summary_keys(small):
    pt = analyze_point(small, 0, rho=20 / 21)
    s = pt.summary()
    for key in ("power_mW", "rate_1_per_s", "rate_2_per_s", "C_N_zero", "C_N_zero_err",
                "g2_corrected_zero", "rho"):
        assert key in s
    assert s["C_N_zero"] < 0.6


def test_antibunching_report_is_canonical_json(small):
    rep, _ = run_antibunching(small, rho=20 / 21)
    text = report_json(rep)
    assert json.loads(text)["config"] == C.to_dict(small)
    assert text == report_json(json.loads(text))
    assert 0 < rep["expected"]["C_N_zero"] < 0.2


def test_report_json_maps_nonfinite_to_null():
    text = report_json({"a": float("nan"), "b": [np.float64("inf"), np.int64(3)], "c": np.bool_(True)})
    assert json.loads(text) == {"a": None, "b": [None, 3], "c": True}


def test_base_report_echo_round_trips():
    cfg = C.bulk()
    rep = json.loads(report_json(base_report(cfg, "x")))
    assert C.from_dict(rep["config"]) == cfg


def test_bin_average_g2():
    sch = LevelScheme(2e7, 4e7, 1e5, 1e6)
    ref = integrate.quad(lambda t: analytic_g2(sch, [t]).values[0], 0, 0.5)[0] / 0.5
    assert bin_average_g2(sch, 1.0) == pytest.approx(ref, rel=1e-8)
    assert bin_average_g2(sch, 1.0, 3) == pytest.approx((ref + 2) / 3, rel=1e-8)


def test_summary_report_contents():
    rep = summary_report(25.0, 0.5, 0.17)
    assert rep["lifetime_model"]["predicted_nanocrystal_lifetime_ns"] == pytest.approx(22.7, abs=0.05)
    assert rep["emitter_count"]["p_rounded"] == 2
    src = [r for r in rep["multiphoton"] if r["source"] == "source"]
    coh = [r for r in rep["multiphoton"] if r["source"] == "coherent"]
    assert [r["p2"] / c["p2"] for r, c in zip(src, coh)] == pytest.approx([0.17] * 4)
    text = summary_text(rep)
    assert "22.73 ns" in text and "rounded 2" in text
