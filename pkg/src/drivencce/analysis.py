"""
Stretched-exponential fits ``L = exp(-(t/T2)^p)``, ``T2 ∝ 1/ρ`` scaling and
bootstrap error bars over configuration ensembles.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize, stats

log = logging.getLogger(__name__)

METHODS = ("exponential", "power", "linear")


@dataclass(frozen=True)
class FitResult:
    T2: float
    p: float
    method: str
    fit_fraction: float
    points_used: int
    residual: float
    masked: tuple = ()

    def __post_init__(self):
        if not (self.T2 > 0 and self.p > 0):
            raise ValueError(f"fit produced non-physical parameters T2={self.T2}, p={self.p}")


@dataclass(frozen=True)
class ScalingFit:
    A: float
    uncertainty: float


@dataclass(frozen=True)
class PowerLawFit:
    """``T2 = B ρ^(-x)``."""

    B: float
    x: float
    x_uncertainty: float


@dataclass
class BootstrapReport:
    sample_sizes: list
    T2: dict  # N -> array of fitted T2
    p: dict
    sigma_T2_pct: dict = field(default_factory=dict)
    sigma_p_pct: dict = field(default_factory=dict)
    failures: dict = field(default_factory=dict)


def _window(times, values, fit_fraction):
    t = np.asarray(times, dtype=float)
    v = np.asarray(values, dtype=float)
    if not 0 < fit_fraction <= 1:
        raise ValueError("fit_fraction must lie in (0, 1]")
    n = int(math.ceil(fit_fraction * len(t)))
    return t[:n], v[:n]


def outlier_mask(t: np.ndarray, y: np.ndarray, k: float = 4.0) -> np.ndarray:
    """True for points far from a Theil–Sen line through ``(log t, y)``.

    A point is an outlier if its residual differs from the median residual by
    more than ``k`` median absolute deviations.
    """
    x = np.log(t)
    slope, intercept, _, _ = stats.theilslopes(y, x)
    r = y - (slope * x + intercept)
    dev = np.abs(r - np.median(r))
    mad = np.median(dev)
    return dev > max(k * mad, 1e-9)


def _usable(times, values, fit_fraction):
    t, v = _window(times, values, fit_fraction)
    ok = (v > 0) & (v < 1) & (t > 0)
    t, v = t[ok], v[ok]
    if len(t) < 5:
        raise ValueError(f"only {len(t)} usable points in the fit window (need 5)")
    y = np.log(-np.log(v))
    bad = outlier_mask(t, y) if len(t) >= 7 else np.zeros(len(t), dtype=bool)
    masked = tuple(float(x) for x in t[bad])
    if masked:
        log.info("masked %d outliers at t=%s", len(masked), masked)
    t, v = t[~bad], v[~bad]
    if len(t) < 5:
        raise ValueError("fewer than 5 points remain after outlier masking")
    return t, v, masked


def _curve_arrays(curve):
    if hasattr(curve, "times"):
        return curve.times, curve.values
    t, v = curve
    return t, v


def fit_stretched(curve, method: str = "linear", fit_fraction: float = 0.6) -> FitResult:
    """Fit ``exp(-(t/T2)^p)`` to the leading ``fit_fraction`` of a coherence curve.

    ``linear`` regresses ``log(-log L)`` on ``log t``; ``power`` fits
    ``-log L = (t/T2)^p`` by nonlinear least squares; ``exponential`` fits
    ``L`` itself, starting from the ``1/e`` crossing and ``p = 1``.
    """
    if method not in METHODS:
        raise ValueError(f"unknown fit method {method!r}")
    times, values = _curve_arrays(curve)
    t, v, masked = _usable(times, values, fit_fraction)
    x, y = np.log(t), np.log(-np.log(v))
    slope, icpt = np.polyfit(x, y, 1)
    if not slope > 0 or abs(icpt / slope) > 700:
        raise ValueError(f"curve does not decay as a stretched exponential (log-log slope {slope:.3g})")
    p_lin, t2_lin = float(slope), math.exp(-icpt / slope)
    if method == "linear":
        resid = float(np.sqrt(np.mean((y - (slope * x + icpt)) ** 2)))
        return FitResult(t2_lin, p_lin, method, fit_fraction, len(t), resid, masked)

    if method == "power":
        g = -np.log(v)

        def res(q):
            return (t / np.exp(q[0])) ** q[1] - g

        x0 = [math.log(t2_lin), p_lin]
    else:
        below = np.flatnonzero(v <= math.exp(-1))
        # 1/e crossing, or its p = 1 extrapolation from the last point
        t0 = t[below[0]] if below.size else t[-1] / -math.log(v[-1])

        def res(q):
            return np.exp(-((t / np.exp(q[0])) ** q[1])) - v

        x0 = [math.log(t0), 1.0]
    try:
        with np.errstate(over="ignore", invalid="ignore", divide="ignore", under="ignore"):
            sol = optimize.least_squares(res, x0, method="lm", xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=20000)
    except (OverflowError, ValueError) as exc:
        raise ValueError(f"{method} fit diverged: {exc}") from None
    if not np.all(np.isfinite(sol.x)) or abs(sol.x[0]) > 700 or not sol.x[1] > 0:
        raise ValueError(f"{method} fit diverged")
    resid = float(np.sqrt(np.mean(sol.fun**2)))
    return FitResult(math.exp(sol.x[0]), float(sol.x[1]), method, fit_fraction, len(t), resid, masked)


def fit_scaling(points) -> ScalingFit:
    """Least-squares ``T2 = A/ρ`` through ``(ρ, T2)`` pairs."""
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    rho, t2 = pts[:, 0], pts[:, 1]
    if len(np.unique(rho)) < 2 or np.any(rho <= 0):
        raise ValueError("need at least two distinct positive concentrations")
    u = 1 / rho
    A = float(np.sum(u * t2) / np.sum(u * u))
    resid = t2 - A * u
    dof = len(t2) - 1
    var = float(np.sum(resid**2) / dof / np.sum(u * u)) if dof > 0 else 0.0
    return ScalingFit(A, math.sqrt(var))


def fit_power_law(points) -> PowerLawFit:
    """Log-log regression of ``T2 = B ρ^(-x)``."""
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    if len(np.unique(pts[:, 0])) < 2:
        raise ValueError("need at least two distinct concentrations")
    res = stats.linregress(np.log(pts[:, 0]), np.log(pts[:, 1]))
    return PowerLawFit(math.exp(res.intercept), float(-res.slope), float(res.stderr))


def bootstrap_errors(curves, sample_sizes, n_resamples: int, seed: int, times=None,
                     method: str = "linear", fit_fraction: float = 0.6) -> BootstrapReport:
    """Resample ``N`` curves with replacement, average, fit; repeat ``n_resamples`` times per ``N``.

    ``curves`` is a list of :class:`CoherenceCurve` or a 2-D array of values
    (then ``times`` is required).
    """
    if len(curves) == 0:
        raise ValueError("empty dataset")
    if hasattr(curves[0], "values"):
        times = curves[0].times
        data = np.array([c.values for c in curves])
    else:
        data = np.asarray(curves, dtype=float)
        if times is None:
            raise ValueError("times are required for raw arrays")
    if max(sample_sizes) > len(data):
        raise ValueError("sample size exceeds dataset size")
    rng = np.random.default_rng(seed)
    report = BootstrapReport(list(sample_sizes), {}, {})
    for n in sample_sizes:
        t2s, ps, fails = [], [], 0
        for _ in range(n_resamples):
            idx = rng.integers(0, len(data), size=n)
            try:
                f = fit_stretched((times, data[idx].mean(axis=0)), method, fit_fraction)
            except ValueError:
                fails += 1
                continue
            t2s.append(f.T2)
            ps.append(f.p)
        t2s, ps = np.array(t2s), np.array(ps)
        report.T2[n], report.p[n] = t2s, ps
        report.failures[n] = fails
        report.sigma_T2_pct[n] = float(100 * t2s.std() / t2s.mean()) if t2s.size else float("nan")
        report.sigma_p_pct[n] = float(100 * ps.std() / ps.mean()) if ps.size else float("nan")
    return report
