"""Observables computed from a finished (or halted) run.

Rates inside a :class:`~mark0.core.TimeSeries` are per step.  Everything
returned here that carries an ``_annual`` suffix is in %/year.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from mark0.core import TimeSeries


def annualize(rate_per_step: float, steps_per_year: int = 2) -> float:
    """Per-step fraction to %/year, e.g. 0.02 at 2 steps/year -> 4.0."""
    return rate_per_step * steps_per_year * 100.0


def deannualize(rate_annual: float, steps_per_year: int = 2) -> float:
    """Inverse of :func:`annualize`."""
    return rate_annual / 100.0 / steps_per_year


class PhaseLabel(str, enum.Enum):
    HIHO = "HIHO"
    LILO = "LILO"
    HYPER_INFLATION = "HyperInflation"
    HYPER_DEFLATION = "HyperDeflation"
    FULL_COLLAPSE = "FullCollapse"
    INDETERMINATE = "Indeterminate"

    def __str__(self):
        return self.value


@dataclass(frozen=True)
class PhaseThresholds:
    hiho_max_u: float = 0.10
    hiho_min_pi_annual: float = 0.5
    lilo_min_u: float = 0.20
    hyper_pi_annual: float = 50.0


@dataclass(frozen=True)
class Dashboard:
    mean_u: float
    mean_pi_annual: float
    p_neg: float
    mean_real_deposit_annual: float
    n_window: int
    halt: str | None = None

    @property
    def empty(self) -> bool:
        return self.n_window == 0


def _window(ts: TimeSeries, T_eq: int) -> np.ndarray:
    rec = ts.records
    return rec[rec["t"] > T_eq]


def dashboard(ts: TimeSeries, T_eq: int | None = None) -> Dashboard:
    """Means over steps ``t > T_eq``.

    A run that halted before ``T_eq`` yields an empty window: all means are
    NaN and :func:`classify_phase` falls back to the halt reason.
    """
    if T_eq is None:
        T_eq = ts.params.T_eq
    spy = ts.params.steps_per_year
    w = _window(ts, T_eq)
    if w.size == 0:
        nan = math.nan
        return Dashboard(nan, nan, nan, nan, 0, ts.halt_reason)
    return Dashboard(
        mean_u=float(np.mean(w["u"])),
        mean_pi_annual=annualize(float(np.mean(w["pi"])), spy),
        p_neg=float(np.count_nonzero(w["rho0"] < 0.0)) / w.size,
        mean_real_deposit_annual=annualize(float(np.mean(w["rho_d"] - w["pi"])), spy),
        n_window=int(w.size),
        halt=ts.halt_reason,
    )


def classify_phase(ts: TimeSeries, thresholds: PhaseThresholds | None = None,
                   T_eq: int | None = None) -> PhaseLabel:
    """One label per run.

    Price runaways come first: the first post-``T_eq`` excursion of the
    annualized ``pi_ema`` beyond the hyper threshold, else an overflow or
    underflow halt.  Collapse halts come next, then the u/pi dashboard rules.
    """
    th = thresholds or PhaseThresholds()
    if T_eq is None:
        T_eq = ts.params.T_eq
    w = _window(ts, T_eq)

    # a runaway can oscillate; the first excursion past the threshold decides
    pi_ema_annual = annualize(w["pi_ema"], ts.params.steps_per_year)
    beyond = np.flatnonzero(np.abs(pi_ema_annual) > th.hyper_pi_annual)
    if beyond.size:
        if pi_ema_annual[beyond[0]] > 0:
            return PhaseLabel.HYPER_INFLATION
        return PhaseLabel.HYPER_DEFLATION
    if ts.halt_reason == "HyperInflation":
        return PhaseLabel.HYPER_INFLATION
    if ts.halt_reason == "HyperDeflation":
        return PhaseLabel.HYPER_DEFLATION
    if ts.halt_reason in ("FullCollapse", "CollapseDetected"):
        return PhaseLabel.FULL_COLLAPSE
    if w.size == 0:
        return PhaseLabel.INDETERMINATE

    d = dashboard(ts, T_eq)
    if d.mean_u < th.hiho_max_u and d.mean_pi_annual > th.hiho_min_pi_annual:
        return PhaseLabel.HIHO
    if d.mean_u > th.lilo_min_u:
        return PhaseLabel.LILO
    return PhaseLabel.INDETERMINATE


@dataclass(frozen=True)
class OLSFit:
    slope: float
    intercept: float
    slope_stderr: float
    n: int


def ols(x, y) -> OLSFit:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    n = x.size
    if n == 0:
        return OLSFit(math.nan, math.nan, math.nan, 0)
    xm = x.mean()
    ym = y.mean()
    dx = x - xm
    sxx = float(dx @ dx)
    if sxx == 0.0:
        # no spread in x: flat line through the mean
        return OLSFit(0.0, float(ym), math.nan, n)
    slope = float(dx @ (y - ym)) / sxx
    intercept = float(ym - slope * xm)
    if n > 2:
        resid = y - (intercept + slope * x)
        stderr = math.sqrt(float(resid @ resid) / (n - 2) / sxx)
    else:
        stderr = math.nan
    return OLSFit(slope, intercept, stderr, n)


@dataclass(frozen=True)
class PhillipsData:
    u: np.ndarray
    pi_annual: np.ndarray
    fit: OLSFit


def phillips_points(ts: TimeSeries, T_eq: int | None = None, stride: int = 1) -> PhillipsData:
    """Subsampled ``(u, annualized pi)`` scatter and its OLS line.

    The fit uses every step of the window, not only the subsampled points.
    """
    if T_eq is None:
        T_eq = ts.params.T_eq
    if stride < 1:
        raise ValueError("stride must be >= 1")
    w = _window(ts, T_eq)
    u = w["u"]
    pi = annualize(w["pi"], ts.params.steps_per_year)
    return PhillipsData(u[::stride].copy(), pi[::stride].copy(), ols(u, pi))
