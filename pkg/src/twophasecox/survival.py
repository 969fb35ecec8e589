"""Survival data containers and nonparametric estimators.

Kaplan-Meier (with Greenwood variance), the censoring distribution used
for IPCW weights, the Breslow cumulative baseline hazard and the
k-sample log-rank test.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np
from scipy import stats

from . import _kernels

MISSING_TOKENS = {"", "NA", "na", "NaN", "nan"}


@dataclass(frozen=True)
class SurvivalRecord:
    time: float
    event: bool
    covariates: tuple[float, ...]

    def __post_init__(self):
        if not self.time > 0:
            raise ValueError(f"time must be positive, got {self.time}")


@dataclass(frozen=True, eq=False)
class Dataset:
    """Right-censored survival data ``(T, delta, X)``.

    Parameters
    ----------
    time : array_like, shape (n,)
        Follow-up times, strictly positive.
    event : array_like, shape (n,)
        True where the event was observed, False where censored.
    x : array_like, shape (n, J)
        Covariate matrix. May be ``(n, 0)``.
    columns : sequence of str, optional
        Column labels, defaults to ``x1..xJ``.
    """

    time: np.ndarray
    event: np.ndarray
    x: np.ndarray
    columns: tuple[str, ...] = field(default=())

    def __post_init__(self):
        time = np.asarray(self.time, dtype=float).reshape(-1)
        event = np.asarray(self.event).astype(bool).reshape(-1)
        x = np.asarray(self.x, dtype=float)
        if x.ndim == 1:
            x = x.reshape(-1, 1)
        if x.ndim != 2 or x.shape[0] != time.size or event.size != time.size:
            raise ValueError("time, event and x must describe the same number of records")
        if time.size and not np.all(time > 0):
            raise ValueError("all times must be positive")
        columns = tuple(self.columns) or tuple(f"x{j + 1}" for j in range(x.shape[1]))
        if len(columns) != x.shape[1]:
            raise ValueError("columns must match the covariate dimension")
        object.__setattr__(self, "time", time)
        object.__setattr__(self, "event", event)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "columns", columns)

    @classmethod
    def from_records(cls, records: Sequence[SurvivalRecord], columns: Sequence[str] = ()):
        dims = {len(r.covariates) for r in records}
        if len(dims) > 1:
            raise ValueError("records have differing covariate dimensions")
        j = dims.pop() if dims else 0
        x = np.array([r.covariates for r in records], dtype=float).reshape(len(records), j)
        return cls(np.array([r.time for r in records]), np.array([r.event for r in records]), x, tuple(columns))

    def records(self) -> list[SurvivalRecord]:
        return [SurvivalRecord(float(t), bool(e), tuple(map(float, row)))
                for t, e, row in zip(self.time, self.event, self.x)]

    def __len__(self):
        return self.time.size

    @property
    def n(self) -> int:
        return self.time.size

    @property
    def dim(self) -> int:
        return self.x.shape[1]

    @property
    def n_events(self) -> int:
        return int(self.event.sum())

    def subset(self, rows) -> "Dataset":
        rows = np.asarray(rows)
        return Dataset(self.time[rows], self.event[rows], self.x[rows], self.columns)

    def with_x(self, x, columns: Sequence[str] = ()) -> "Dataset":
        return Dataset(self.time, self.event, x, tuple(columns))

    @cached_property
    def order(self) -> np.ndarray:
        """Stable ascending-time ordering with events before censorings at ties."""
        return np.lexsort((~self.event, self.time))

    @cached_property
    def sorted(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        o = self.order
        return (np.ascontiguousarray(self.time[o]), np.ascontiguousarray(self.event[o]),
                np.ascontiguousarray(self.x[o]))


def require_events(data: Dataset) -> None:
    if data.n == 0:
        raise ValueError("dataset is empty")
    if data.n_events == 0:
        raise ValueError("dataset has no events")


# ---------------------------------------------------------------------------
# Kaplan-Meier
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class KaplanMeierCurve:
    times: np.ndarray
    survival: np.ndarray
    at_risk: np.ndarray
    n_events: np.ndarray
    variance: np.ndarray  # Greenwood

    def __call__(self, t) -> np.ndarray:
        """Right-continuous S(t); 1 before the first step, last value after the last."""
        idx = np.searchsorted(self.times, np.asarray(t, dtype=float), side="right")
        return np.concatenate(([1.0], self.survival))[idx]

    def left_limit(self, t) -> np.ndarray:
        """S(t-), the value just before ``t``."""
        idx = np.searchsorted(self.times, np.asarray(t, dtype=float), side="left")
        return np.concatenate(([1.0], self.survival))[idx]

    def confidence_interval(self, t, level: float = 0.95) -> tuple[np.ndarray, np.ndarray]:
        """Pointwise log(-log) interval at ``t``."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        idx = np.searchsorted(self.times, t, side="right")
        s = np.concatenate(([1.0], self.survival))[idx]
        var = np.concatenate(([0.0], self.variance))[idx]
        z = stats.norm.ppf(0.5 + level / 2)
        lo = s.copy()
        hi = s.copy()
        ok = (s > 0) & (s < 1) & (var > 0)
        with np.errstate(divide="ignore", invalid="ignore"):
            se = np.sqrt(var[ok]) / (s[ok] * np.abs(np.log(s[ok])))
            ls = np.log(-np.log(s[ok]))
            lo[ok] = np.exp(-np.exp(ls + z * se))
            hi[ok] = np.exp(-np.exp(ls - z * se))
        return lo, hi


def kaplan_meier(data: Dataset) -> KaplanMeierCurve:
    if data.n == 0:
        raise ValueError("dataset is empty")
    event_times = np.unique(data.time[data.event])
    at_risk = (data.time[None, :] >= event_times[:, None]).sum(axis=1)
    d = np.array([np.count_nonzero(data.event & (data.time == t)) for t in event_times])
    surv = np.cumprod(1.0 - d / at_risk)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(at_risk > d, d / (at_risk * (at_risk - d)), 0.0)
    var = surv**2 * np.cumsum(terms)
    return KaplanMeierCurve(event_times, surv, at_risk, d, var)


def censoring_km(data: Dataset) -> KaplanMeierCurve:
    """Kaplan-Meier estimate of the censoring survival function G(t)."""
    return kaplan_meier(Dataset(data.time, ~data.event, np.empty((data.n, 0))))


# ---------------------------------------------------------------------------
# Breslow baseline
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class BreslowBaseline:
    times: np.ndarray
    cumulative_hazard: np.ndarray

    def cumhaz(self, t) -> np.ndarray:
        idx = np.searchsorted(self.times, np.asarray(t, dtype=float), side="right")
        return np.concatenate(([0.0], self.cumulative_hazard))[idx]

    def survival(self, t, lp) -> np.ndarray:
        """S(t | lp) as an array of shape (len(lp), len(t))."""
        h = self.cumhaz(np.atleast_1d(t))
        return np.exp(-np.outer(np.exp(np.asarray(lp, dtype=float)), h))


def breslow_baseline(data: Dataset, linear_predictors) -> BreslowBaseline:
    lp = np.asarray(linear_predictors, dtype=float).reshape(-1)
    if lp.size != data.n:
        raise ValueError("linear_predictors must have one entry per record")
    require_events(data)
    t, e, _ = data.sorted
    times, inc = _kernels.breslow_increments(t, e, np.ascontiguousarray(lp[data.order]))
    return BreslowBaseline(times, np.cumsum(inc))


def average_baselines(baselines: Sequence[BreslowBaseline]) -> BreslowBaseline:
    """Pointwise mean of step functions on the union of their jump times."""
    grid = np.unique(np.concatenate([b.times for b in baselines]))
    return BreslowBaseline(grid, np.mean([b.cumhaz(grid) for b in baselines], axis=0))


# ---------------------------------------------------------------------------
# Log-rank
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LogRankResult:
    statistic: float
    p_value: float
    df: int


def log_rank_test(groups: Sequence[Dataset]) -> LogRankResult:
    """K-sample log-rank test (chi-square with K-1 degrees of freedom)."""
    if len(groups) < 2:
        raise ValueError("log-rank test needs at least two groups")
    if any(g.n == 0 for g in groups):
        raise ValueError("groups must be non-empty")
    time = np.concatenate([g.time for g in groups])
    event = np.concatenate([g.event for g in groups])
    label = np.concatenate([np.full(g.n, k) for k, g in enumerate(groups)])
    if not event.any():
        raise ValueError("log-rank test needs at least one event")
    k = len(groups)
    o_minus_e = np.zeros(k)
    cov = np.zeros((k, k))
    for t in np.unique(time[event]):
        risk = time >= t
        n_j = np.bincount(label[risk], minlength=k).astype(float)
        d_j = np.bincount(label[event & (time == t)], minlength=k).astype(float)
        n_tot, d_tot = n_j.sum(), d_j.sum()
        o_minus_e += d_j - d_tot * n_j / n_tot
        if n_tot > 1:
            f = d_tot * (n_tot - d_tot) / (n_tot**2 * (n_tot - 1))
            cov += f * (np.diag(n_j) * n_tot - np.outer(n_j, n_j))
    u = o_minus_e[:-1]
    v = cov[:-1, :-1]
    stat = float(u @ np.linalg.pinv(v) @ u) if np.any(v) else 0.0
    stat = max(stat, 0.0)
    return LogRankResult(stat, float(stats.chi2.sf(stat, k - 1)), k - 1)


def holm_adjust(p_values: Iterable[float]) -> np.ndarray:
    p = np.asarray(list(p_values), dtype=float)
    m = p.size
    order = np.argsort(p)
    adj = np.empty(m)
    running = 0.0
    for rank, i in enumerate(order):
        running = max(running, (m - rank) * p[i])
        adj[i] = min(running, 1.0)
    return adj


def pairwise_log_rank(groups: Sequence[Dataset], adjust: bool = True) -> dict[tuple[int, int], tuple[float, float]]:
    """Pairwise log-rank tests; returns {(a, b): (raw p, Holm-adjusted p)}."""
    pairs = [(a, b) for a in range(len(groups)) for b in range(a + 1, len(groups))]
    raw = [log_rank_test([groups[a], groups[b]]).p_value for a, b in pairs]
    adj = holm_adjust(raw) if adjust else np.asarray(raw)
    return {pr: (r, float(q)) for pr, r, q in zip(pairs, raw, adj)}


# ---------------------------------------------------------------------------
# CSV
# ---------------------------------------------------------------------------

def _cell(value: str) -> float:
    value = value.strip()
    return math.nan if value in MISSING_TOKENS else float(value)


def read_survival_csv(path) -> Dataset:
    """Read ``time``, ``event`` and covariate columns; missing cells become NaN."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ValueError(f"{path}: empty file") from None
        if "time" not in header or "event" not in header:
            raise ValueError(f"{path}: header must contain 'time' and 'event'")
        it, ie = header.index("time"), header.index("event")
        cov_idx = [j for j in range(len(header)) if j not in (it, ie)]
        times, events, rows = [], [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise ValueError(f"{path}:{lineno}: expected {len(header)} fields")
            times.append(float(row[it]))
            ev = row[ie].strip()
            if ev not in ("0", "1"):
                raise ValueError(f"{path}:{lineno}: event must be 0 or 1")
            events.append(ev == "1")
            rows.append([_cell(row[j]) for j in cov_idx])
    x = np.array(rows, dtype=float).reshape(len(rows), len(cov_idx))
    return Dataset(np.array(times), np.array(events), x, tuple(header[j] for j in cov_idx))


def write_survival_csv(path, data: Dataset) -> None:
    """Write with round-trip float precision; NaN covariates are written as NA."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["time", "event", *data.columns])
        for t, e, row in zip(data.time, data.event, data.x):
            w.writerow([repr(float(t)), int(e), *("NA" if np.isnan(v) else repr(float(v)) for v in row)])
