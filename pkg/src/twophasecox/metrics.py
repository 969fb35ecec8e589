"""Discrimination, calibration, overall-accuracy and selection metrics."""

from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass
from typing import Callable

import numpy as np
from scipy.integrate import trapezoid

from .cox import FitConfig, fit_cox
from .survival import Dataset, censoring_km, require_events

SurvivalFn = Callable[[np.ndarray], np.ndarray]
"""Maps an array of times to survival probabilities of shape (n_subjects, n_times)."""


class HorizonWarning(RuntimeWarning):
    pass


@dataclass
class MetricReport:
    c_index: float = math.nan
    calibration_slope: float = math.nan
    ibs: float = math.nan
    mcc: float = math.nan

    def as_dict(self) -> dict:
        return asdict(self)


def c_index(test: Dataset, risk_scores) -> float:
    """Harrell's concordance.

    A pair is usable when the shorter time is an event; a censored time
    equal to an event time counts as surviving longer. Pairs of tied event
    times are skipped and tied risks score 1/2.
    """
    risk = np.asarray(risk_scores, dtype=float).reshape(-1)
    if risk.size != test.n:
        raise ValueError("one risk score per subject is required")
    t, e = test.time, test.event
    earlier = (t[:, None] < t[None, :]) | ((t[:, None] == t[None, :]) & ~e[None, :])
    usable = earlier & e[:, None]
    np.fill_diagonal(usable, False)
    n_pairs = usable.sum()
    if n_pairs == 0:
        raise ValueError("no comparable pairs")
    diff = risk[:, None] - risk[None, :]
    score = np.where(diff > 0, 1.0, np.where(diff == 0, 0.5, 0.0))
    return float((score * usable).sum() / n_pairs)


def calibration_slope(test: Dataset, linear_predictors, config: FitConfig = FitConfig()) -> float:
    """Coefficient of the predicted linear predictor refitted on ``test``."""
    lp = np.asarray(linear_predictors, dtype=float).reshape(-1)
    require_events(test)
    if lp.size != test.n:
        raise ValueError("one linear predictor per subject is required")
    if np.ptp(lp) <= 1e-12 * (1.0 + np.abs(lp).max()):
        raise ValueError("constant linear predictor: calibration slope undefined")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        fit = fit_cox(test.with_x(lp.reshape(-1, 1)), config)
    return float(fit.coefficients[0])


def _censoring_weights(test: Dataset):
    g = censoring_km(test)
    return g, g.left_limit(test.time)


def brier_score(test: Dataset, survival_fn: SurvivalFn, t: float) -> float:
    """Inverse-probability-of-censoring weighted Brier score at time ``t``."""
    g, g_at_event = _censoring_weights(test)
    g_t = float(g(t))
    if g_t <= 0:
        raise ValueError(f"censoring survival is zero at t={t}")
    s = np.asarray(survival_fn(np.array([t])), dtype=float)[:, 0]
    died = (test.time <= t) & test.event
    alive = test.time > t
    with np.errstate(divide="ignore", invalid="ignore"):
        contrib = np.where(died, s**2 / g_at_event, 0.0) + np.where(alive, (1.0 - s) ** 2 / g_t, 0.0)
    return float(contrib.mean())


def integrated_brier_score(test: Dataset, survival_fn: SurvivalFn, tau: float | None = None) -> float:
    """Trapezoidal time-average of the Brier score over [0, tau].

    Evaluation times are 0, the distinct test event times up to ``tau`` and
    ``tau``. The default ``tau`` is the largest event time at which the
    censoring survival is still positive.
    """
    event_times = np.unique(test.time[test.event])
    if event_times.size == 0:
        raise ValueError("no event times in the test data")
    g, g_at_event = _censoring_weights(test)
    positive = event_times[g(event_times) > 0]
    if tau is None:
        if positive.size == 0:
            raise ValueError("censoring survival is zero at every event time")
        tau = float(positive[-1])
    elif g(tau) <= 0:
        truncated = positive[positive <= tau]
        if truncated.size == 0:
            raise ValueError("censoring survival is zero before tau")
        warnings.warn(f"horizon truncated from {tau} to {truncated[-1]}", HorizonWarning, stacklevel=2)
        tau = float(truncated[-1])
    grid = np.unique(np.concatenate(([0.0], event_times[event_times <= tau], [tau])))
    s = np.asarray(survival_fn(grid), dtype=float)
    g_grid = g(grid)
    died = (test.time[:, None] <= grid[None, :]) & test.event[:, None]
    alive = test.time[:, None] > grid[None, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        contrib = (np.where(died, s**2 / g_at_event[:, None], 0.0)
                   + np.where(alive, (1.0 - s) ** 2 / g_grid[None, :], 0.0))
    bs = contrib.mean(axis=0)
    if tau <= 0:
        return float(bs[0])
    return float(trapezoid(bs, grid) / tau)


def mcc(selected, truth) -> float:
    """Matthews correlation between a selection mask and the true support."""
    s = np.asarray(selected, dtype=bool).reshape(-1)
    t = np.asarray(truth, dtype=bool).reshape(-1)
    if s.size != t.size:
        raise ValueError("masks must have equal length")
    tp = float(np.sum(s & t))
    tn = float(np.sum(~s & ~t))
    fp = float(np.sum(s & ~t))
    fn = float(np.sum(~s & t))
    denom = (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn)
    if denom == 0:
        return 0.0
    return (tp * tn - fp * fn) / math.sqrt(denom)


RISK_LABELS = {2: ("low", "high"), 3: ("low", "medium", "high")}


def risk_stratify(lp, n_groups: int = 3) -> np.ndarray:
    """Integer risk groups 0..n_groups-1 cut at empirical quantiles; ties go low."""
    lp = np.asarray(lp, dtype=float).reshape(-1)
    if n_groups < 2:
        raise ValueError("n_groups must be at least 2")
    if lp.size < n_groups:
        raise ValueError("fewer subjects than groups")
    if np.ptp(lp) == 0:
        raise ValueError("all linear predictors are equal")
    cuts = np.quantile(lp, np.arange(1, n_groups) / n_groups)
    return np.searchsorted(cuts, lp, side="left")
