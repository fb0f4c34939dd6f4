import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.optimize import curve_fit

from antibunch.fitting import FitResult, levenberg_marquardt


def line(x, p):
    return p[0] + p[1] * x


def expo(x, p):
    return p[0] * np.exp(-p[1] * x) + p[2]


@given(st.floats(-10, 10), st.floats(-10, 10), st.integers(0, 2 ** 31))
def test_linear_fit_matches_weighted_lstsq(a, b, seed):
    gen = np.random.default_rng(seed)
    x = np.linspace(0, 5, 30)
    sigma = gen.uniform(0.5, 2.0, x.size)
    y = a + b * x + gen.normal(0, sigma)
    res = levenberg_marquardt(line, x, y, sigma, {"a": 0.0, "b": 0.0})
    assert res.converged
    A = np.column_stack([np.ones_like(x), x]) / sigma[:, None]
    ref, *_ = np.linalg.lstsq(A, y / sigma, rcond=None)
    cov = np.linalg.inv(A.T @ A)
    err = np.sqrt(np.diag(cov))
    # chi-square is flat to double precision within ~1e-7 sigma of the optimum
    assert np.all(np.abs(res.values - ref) < 1e-5 * err)
    np.testing.assert_allclose(res.errors, err, rtol=1e-5)


def test_noise_free_recovery():
    x = np.linspace(0, 10, 50)
    y = expo(x, [2.0, 0.7, 0.3])
    res = levenberg_marquardt(expo, x, y, np.ones_like(x), {"A": 1.0, "k": 0.3, "c": 0.0})
    assert res.converged
    np.testing.assert_allclose(res.values, [2.0, 0.7, 0.3], rtol=1e-8)
    assert res.chi2_reduced < 1e-15


def test_nonlinear_agrees_with_scipy():
    gen = np.random.default_rng(4)
    x = np.linspace(0, 10, 80)
    sigma = np.full_like(x, 0.05)
    y = expo(x, [2.0, 0.7, 0.3]) + gen.normal(0, 0.05, x.size)
    res = levenberg_marquardt(expo, x, y, sigma, {"A": 1.0, "k": 0.3, "c": 0.0})
    popt, pcov = curve_fit(lambda t, *p: expo(t, p), x, y, p0=[1, 0.3, 0],
                           sigma=sigma, absolute_sigma=True)
    np.testing.assert_allclose(res.values, popt, rtol=1e-6)
    np.testing.assert_allclose(res.errors, np.sqrt(np.diag(pcov)), rtol=1e-3)


def test_fixed_parameters_are_untouched():
    x = np.linspace(0, 10, 50)
    y = expo(x, [2.0, 0.7, 0.3])
    res = levenberg_marquardt(expo, x, y, np.ones_like(x), {"A": 1.0, "k": 0.3, "c": 0.3},
                              fixed=("c",))
    assert res["c"] == 0.3 and res.error("c") == 0.0
    assert res["k"] == pytest.approx(0.7, rel=1e-8)


def test_iteration_cap_is_failure():
    x = np.linspace(0, 10, 50)
    y = expo(x, [2.0, 0.7, 0.3])
    res = levenberg_marquardt(expo, x, y, np.ones_like(x), {"A": 1.0, "k": 0.3, "c": 0.0},
                              max_iter=2)
    assert not res.converged
    assert "iterations" in res.message
    assert np.all(np.isnan(res.errors))


def test_underdetermined_and_bad_sigma():
    x = np.array([0.0, 1.0])
    res = levenberg_marquardt(expo, x, x, np.ones(2), {"A": 1.0, "k": 1.0, "c": 0.0})
    assert not res.converged
    with pytest.raises(ValueError):
        levenberg_marquardt(line, x, x, np.array([1.0, 0.0]), {"a": 0.0, "b": 0.0})


def test_non_finite_start():
    x = np.linspace(0, 1, 10)
    res = levenberg_marquardt(lambda x, p: p[0] / x, x, x, np.ones_like(x), {"a": 1.0})
    assert not res.converged


def test_fd_jacobian_matches_analytic():
    x = np.linspace(0, 10, 60)
    y = expo(x, [1.5, 0.4, 0.1]) + 0.01 * np.sin(7 * x)

    def jac(x, p):
        e = np.exp(-p[1] * x)
        return np.column_stack([e, -p[0] * x * e, np.ones_like(x)])

    p0 = {"A": 1.0, "k": 0.3, "c": 0.0}
    a = levenberg_marquardt(expo, x, y, np.ones_like(x), p0)
    b = levenberg_marquardt(expo, x, y, np.ones_like(x), p0, jac=jac)
    np.testing.assert_allclose(a.values, b.values, rtol=1e-6)


def test_result_accessors():
    r = FitResult(("a", "b"), np.array([1.0, 2.0]), np.array([0.1, 0.2]), 1.0, True, 3,
                  derived={"c": 5.0})
    assert r["b"] == 2.0 and r["c"] == 5.0 and r.error("a") == 0.1
    d = r.as_dict()
    assert d["parameters"] == {"a": 1.0, "b": 2.0} and d["derived"] == {"c": 5.0}
    f = FitResult.failure(("a",), "boom")
    assert not f.converged and np.isnan(f["a"])
