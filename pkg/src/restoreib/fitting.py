"""Curve fits for loss traces and sweep curves.

``fit_double_exponential`` fits ``a*exp(-b x) + c*exp(-d x) + e``: for each
start on a grid of rate pairs the amplitudes are solved linearly, then all
five parameters are polished with Levenberg-Marquardt (scipy's MINPACK
wrapper). ``fit_log_saturation`` is ordinary least squares in ``ln(x + 1)``.
"""

from __future__ import annotations

import itertools
from dataclasses import asdict, dataclass

import numpy as np
from scipy.optimize import least_squares

__all__ = [
    "FitResult",
    "FitError",
    "double_exponential",
    "single_exponential",
    "fit_double_exponential",
    "fit_single_exponential",
    "fit_log_saturation",
    "RATE_GRID",
]

# half-decade steps from 1e-3 to 1
RATE_GRID = tuple(float(v) for v in 10.0 ** np.arange(-3.0, 0.01, 0.5))


class FitError(ValueError):
    """Input data cannot support the requested fit."""


@dataclass
class FitResult:
    model: str
    params: dict[str, float]
    rss: float
    r2: float
    iterations: int
    converged: bool
    n_points: int = 0
    starts: int = 1

    def predict(self, xs) -> np.ndarray:
        xs = np.asarray(xs, dtype=np.float64)
        p = self.params
        if self.model == "double_exponential":
            return double_exponential(xs, p["a"], p["b"], p["c"], p["d"], p["e"])
        if self.model == "single_exponential":
            return single_exponential(xs, p["a"], p["b"], p["e"])
        return p["alpha"] * np.log(xs + 1.0) + p["gamma"]

    def to_dict(self) -> dict:
        return asdict(self)


def double_exponential(x, a, b, c, d, e):
    return a * np.exp(-b * x) + c * np.exp(-d * x) + e


def single_exponential(x, a, b, e):
    return a * np.exp(-b * x) + e


def _prepare(xs, ys, min_points):
    xs = np.asarray(xs, dtype=np.float64).ravel()
    ys = np.asarray(ys, dtype=np.float64).ravel()
    if xs.shape != ys.shape:
        raise FitError(f"xs and ys differ in length: {xs.size} vs {ys.size}")
    if xs.size < min_points:
        raise FitError(f"need at least {min_points} points, got {xs.size}")
    if not (np.isfinite(xs).all() and np.isfinite(ys).all()):
        raise FitError("non-finite data")
    return xs, ys


def _r2(ys, rss):
    tss = float(((ys - ys.mean()) ** 2).sum())
    return 1.0 - rss / tss if tss > 0 else (1.0 if rss == 0 else 0.0)


def _linear_amplitudes(basis, ys):
    coef, *_ = np.linalg.lstsq(basis, ys, rcond=None)
    return coef


def _polish(fun, jac, p0):
    try:
        with np.errstate(over="ignore", invalid="ignore"):
            sol = least_squares(fun, p0, jac=jac, method="lm", xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=20000)
    except (ValueError, np.linalg.LinAlgError):
        return None
    if not np.isfinite(sol.x).all():
        return None
    return sol


def fit_double_exponential(xs, ys, rate_grid=RATE_GRID) -> FitResult:
    """Best multistart fit of ``a e^{-bx} + c e^{-dx} + e`` with ``b >= d`` on return."""
    xs, ys = _prepare(xs, ys, 5)
    scale = max(float(np.abs(ys).max()), 1e-300)

    def fun(p):
        return (double_exponential(xs, *p) - ys) / scale

    def jac(p):
        a, b, c, d, _ = p
        eb, ed = np.exp(-b * xs), np.exp(-d * xs)
        return np.stack([eb, -a * xs * eb, ed, -c * xs * ed, np.ones_like(xs)], axis=1) / scale

    best = None
    starts = 0
    for b0, d0 in itertools.combinations(sorted(rate_grid, reverse=True), 2):
        starts += 1
        basis = np.stack([np.exp(-b0 * xs), np.exp(-d0 * xs), np.ones_like(xs)], axis=1)
        a0, c0, e0 = _linear_amplitudes(basis, ys)
        sol = _polish(fun, jac, np.array([a0, b0, c0, d0, e0]))
        if sol is None:
            continue
        rss = float(((double_exponential(xs, *sol.x) - ys) ** 2).sum())
        if best is None or rss < best[0]:
            best = (rss, sol)
    if best is None:
        raise FitError("every start failed to produce a finite fit")
    rss, sol = best
    a, b, c, d, e = (float(v) for v in sol.x)
    if d > b:
        a, b, c, d = c, d, a, b
    return FitResult(
        "double_exponential",
        {"a": a, "b": b, "c": c, "d": d, "e": e},
        rss,
        _r2(ys, rss),
        int(sol.nfev),
        bool(sol.status > 0),
        int(xs.size),
        starts,
    )


def fit_single_exponential(xs, ys, rate_grid=RATE_GRID) -> FitResult:
    """Best multistart fit of ``a e^{-bx} + e``."""
    xs, ys = _prepare(xs, ys, 3)
    scale = max(float(np.abs(ys).max()), 1e-300)

    def fun(p):
        return (single_exponential(xs, *p) - ys) / scale

    def jac(p):
        a, b, _ = p
        eb = np.exp(-b * xs)
        return np.stack([eb, -a * xs * eb, np.ones_like(xs)], axis=1) / scale

    best = None
    for b0 in rate_grid:
        basis = np.stack([np.exp(-b0 * xs), np.ones_like(xs)], axis=1)
        a0, e0 = _linear_amplitudes(basis, ys)
        sol = _polish(fun, jac, np.array([a0, b0, e0]))
        if sol is None:
            continue
        rss = float(((single_exponential(xs, *sol.x) - ys) ** 2).sum())
        if best is None or rss < best[0]:
            best = (rss, sol)
    if best is None:
        raise FitError("every start failed to produce a finite fit")
    rss, sol = best
    a, b, e = (float(v) for v in sol.x)
    return FitResult(
        "single_exponential", {"a": a, "b": b, "e": e}, rss, _r2(ys, rss), int(sol.nfev), bool(sol.status > 0),
        int(xs.size), len(rate_grid),
    )


def fit_log_saturation(xs, ys) -> FitResult:
    """Closed-form least squares for ``alpha * ln(x + 1) + gamma``."""
    xs, ys = _prepare(xs, ys, 2)
    if (xs <= -1).any():
        raise FitError("log-saturation needs x > -1")
    basis = np.stack([np.log(xs + 1.0), np.ones_like(xs)], axis=1)
    if np.ptp(basis[:, 0]) == 0:
        raise FitError("log-saturation needs at least two distinct x values")
    (alpha, gamma), *_ = np.linalg.lstsq(basis, ys, rcond=None)
    rss = float(((basis @ np.array([alpha, gamma]) - ys) ** 2).sum())
    return FitResult("log_saturation", {"alpha": float(alpha), "gamma": float(gamma)}, rss, _r2(ys, rss), 1, True, int(xs.size))
