"""Weighted nonlinear least squares (Levenberg-Marquardt) and its result type."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

MAX_ITER = 200
XTOL = 1e-10
FD_STEP = 1e-6


@dataclass
class FitResult:
    names: tuple
    values: np.ndarray
    errors: np.ndarray
    chi2_reduced: float
    converged: bool
    iterations: int
    message: str = ""
    covariance: np.ndarray | None = None
    derived: dict = field(default_factory=dict)

    def __getitem__(self, name: str) -> float:
        if name in self.names:
            return float(self.values[self.names.index(name)])
        return self.derived[name]

    def error(self, name: str) -> float:
        return float(self.errors[self.names.index(name)])

    def as_dict(self) -> dict:
        return {
            "parameters": {n: float(v) for n, v in zip(self.names, self.values)},
            "errors": {n: float(e) for n, e in zip(self.names, self.errors)},
            "derived": {k: float(v) if np.isscalar(v) else v for k, v in self.derived.items()},
            "chi2_reduced": float(self.chi2_reduced),
            "converged": bool(self.converged),
            "iterations": int(self.iterations),
            "message": self.message,
        }

    @classmethod
    def failure(cls, names, message, values=None, iterations=0) -> "FitResult":
        n = len(names)
        vals = np.full(n, np.nan) if values is None else np.asarray(values, dtype=float)
        return cls(tuple(names), vals, np.full(n, np.nan), np.nan, False, iterations, message)


class FitError(RuntimeError):
    """Raised by callers that cannot continue without a converged fit."""


def _fd_jacobian(model, x, p, f0):
    jac = np.empty((f0.size, p.size))
    for i in range(p.size):
        h = FD_STEP * abs(p[i]) if p[i] != 0 else FD_STEP  # absolute step at zero
        q = p.copy()
        q[i] += h
        jac[:, i] = (model(x, q) - f0) / h
    return jac


def levenberg_marquardt(model: Callable, x, y, sigma, p0: Mapping[str, float],
                        fixed: Sequence[str] = (), jac: Callable | None = None,
                        max_iter: int = MAX_ITER, xtol: float = XTOL) -> FitResult:
    """Minimize ``sum(((y - model(x, p)) / sigma)**2)``.

    ``model(x, p)`` takes the full parameter vector in the order of ``p0``;
    ``jac(x, p)`` (optional) returns d model / d p for all of them. Names in
    ``fixed`` keep their starting value. The fit has converged once a step
    changes every free parameter by less than ``xtol`` relative; reaching
    ``max_iter`` is reported as a failure.
    """
    # trial steps may overflow; those are rejected as non-finite below
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        return _lm(model, x, y, sigma, p0, fixed, jac, max_iter, xtol)


def _lm(model, x, y, sigma, p0, fixed, jac, max_iter, xtol) -> FitResult:
    names = tuple(p0)
    p = np.array([p0[n] for n in names], dtype=float)
    # absolute floor so that parameters sitting at zero can still converge
    floor = 1e-3 * np.maximum(np.abs(p), 1.0)
    free = np.array([n not in fixed for n in names])
    y = np.asarray(y, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    if np.any(~(sigma > 0)):
        raise ValueError("all sigma must be > 0")
    nfree = int(free.sum())
    dof = y.size - nfree
    if dof < 0:
        return FitResult.failure(names, "more free parameters than data points", p)

    def jacobian(q, f0):
        j = jac(x, q) if jac is not None else _fd_jacobian(model, x, q, f0)
        return j[:, free] / sigma[:, None]

    f = model(x, p)
    res = (y - f) / sigma
    chi2 = float(res @ res)
    if not np.isfinite(chi2):
        return FitResult.failure(names, "model is not finite at the starting point", p)
    lam = 1e-3
    converged = False
    it = 0
    while it < max_iter:
        it += 1
        jw = jacobian(p, f)
        a = jw.T @ jw
        g = jw.T @ res
        diag = np.diag(a).copy()
        diag[diag == 0] = 1.0
        while True:
            try:
                step = np.linalg.solve(a + lam * np.diag(diag), g)
            except np.linalg.LinAlgError:
                step = np.linalg.lstsq(a + lam * np.diag(diag), g, rcond=None)[0]
            q = p.copy()
            q[free] += step
            rel = np.max(np.abs(step) / (np.abs(p[free]) + floor[free])) if nfree else 0.0
            fq = model(x, q)
            rq = (y - fq) / sigma
            chi2q = float(rq @ rq)
            if np.isfinite(chi2q) and chi2q <= chi2:
                p, f, res, chi2 = q, fq, rq, chi2q
                lam = max(lam / 10, 1e-12)
                break
            lam *= 10
            if lam > 1e16 or rel < xtol:
                break
        if rel < xtol:
            converged = True
            break
    if not converged:
        return FitResult.failure(names, f"no convergence after {it} iterations", p, it)
    jw = jacobian(p, f)
    try:
        cov_free = np.linalg.inv(jw.T @ jw)
    except np.linalg.LinAlgError:
        return FitResult.failure(names, "singular curvature matrix at the solution", p, it)
    cov = np.zeros((p.size, p.size))
    cov[np.ix_(free, free)] = cov_free
    errors = np.sqrt(np.clip(np.diag(cov), 0, None))
    chi2_red = chi2 / dof if dof > 0 else np.nan
    return FitResult(names, p, errors, chi2_red, True, it, "converged", cov)
