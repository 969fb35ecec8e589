"""Estimators for two-phase survival data.

``fit_expert_guided`` is the two-stage procedure: an adaptive-lasso Cox
model on the always-observed covariates U (with expert-chosen columns left
unpenalized), followed by an unpenalized Cox model on the phase-two rows
using the stage-one prognostic index and the expensive covariates V. The
four comparison estimators (complete cases, naive imputation and two
multiple-imputation schemes) fit adaptive-lasso Cox models on (U, V).
"""

from __future__ import annotations

import math
import warnings
import zlib
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .cox import CoxFit, FitConfig, fit_adaptive_lasso, fit_cox
from .imputation import RejectionStats, impute_chained, impute_smc
from .survival import BreslowBaseline, Dataset, average_baselines, breslow_baseline

BINARY, CONTINUOUS = "binary", "continuous"
METHODS = ("CCA", "NI", "MI-Wood", "MI-Bartlett", "EG")


class FitError(ValueError):
    """A method's preconditions are not met by the data."""


@dataclass(frozen=True, eq=False)
class TwoPhaseDataset:
    """U observed on every row; V observed on a subset of rows (NaN elsewhere)."""

    time: np.ndarray
    event: np.ndarray
    u: np.ndarray
    v: np.ndarray
    v_kinds: tuple[str, ...] = ()
    u_names: tuple[str, ...] = ()
    v_names: tuple[str, ...] = ()

    def __post_init__(self):
        time = np.asarray(self.time, dtype=float).reshape(-1)
        event = np.asarray(self.event).astype(bool).reshape(-1)
        u = np.asarray(self.u, dtype=float).reshape(time.size, -1)
        v = np.asarray(self.v, dtype=float).reshape(time.size, -1)
        if np.any(~np.isfinite(u)):
            raise ValueError("U must be fully observed")
        miss = np.isnan(v)
        if v.shape[1] and np.any(miss.any(axis=1) != miss.all(axis=1)):
            raise ValueError("a row's V entries must be all observed or all missing")
        kinds = tuple(self.v_kinds) or tuple(
            BINARY if np.all(np.isin(v[~miss[:, j], j], (0.0, 1.0))) else CONTINUOUS
            for j in range(v.shape[1]))
        if len(kinds) != v.shape[1] or not set(kinds) <= {BINARY, CONTINUOUS}:
            raise ValueError("v_kinds must give binary/continuous for each V column")
        object.__setattr__(self, "time", time)
        object.__setattr__(self, "event", event)
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "v", v)
        object.__setattr__(self, "v_kinds", kinds)
        object.__setattr__(self, "u_names", tuple(self.u_names) or tuple(f"U{j + 1}" for j in range(u.shape[1])))
        object.__setattr__(self, "v_names", tuple(self.v_names) or tuple(f"V{j + 1}" for j in range(v.shape[1])))
        if self.n_prime < 1:
            raise ValueError("at least one row must have V observed")

    @classmethod
    def from_dataset(cls, data: Dataset, v_cols: Sequence[str], v_kinds: Sequence[str] = ()):
        unknown = [c for c in v_cols if c not in data.columns]
        if unknown:
            raise KeyError(f"unknown V columns: {', '.join(unknown)}")
        vi = [data.columns.index(c) for c in v_cols]
        ui = [j for j in range(data.dim) if j not in vi]
        return cls(data.time, data.event, data.x[:, ui], data.x[:, vi], tuple(v_kinds),
                   tuple(data.columns[j] for j in ui), tuple(v_cols))

    @property
    def observed(self) -> np.ndarray:
        if self.d == 0:
            return np.ones(self.n, dtype=bool)
        return ~np.isnan(self.v[:, 0])

    @property
    def n(self) -> int:
        return self.time.size

    @property
    def n_prime(self) -> int:
        return int(self.observed.sum())

    @property
    def p(self) -> int:
        return self.u.shape[1]

    @property
    def d(self) -> int:
        return self.v.shape[1]

    @property
    def names(self) -> tuple[str, ...]:
        return self.u_names + self.v_names

    def joint(self, v=None, rows=None) -> Dataset:
        v = self.v if v is None else v
        rows = slice(None) if rows is None else rows
        return Dataset(self.time[rows], self.event[rows], np.column_stack([self.u, v])[rows], self.names)

    def target(self) -> "TwoPhaseDataset":
        obs = self.observed
        return TwoPhaseDataset(self.time[obs], self.event[obs], self.u[obs], self.v[obs],
                               self.v_kinds, self.u_names, self.v_names)

    def subset(self, rows) -> "TwoPhaseDataset":
        return TwoPhaseDataset(self.time[rows], self.event[rows], self.u[rows], self.v[rows],
                               self.v_kinds, self.u_names, self.v_names)

    def to_dataset(self) -> Dataset:
        return self.joint()


@dataclass(frozen=True)
class DomainKnowledge:
    """Expert input.

    ``retained_u`` are U columns kept unpenalized in stage one. ``force_v``
    (bool or one flag per V column) selects the V columns entering stage
    two; ``pi_only`` keeps only the prognostic index there. With
    ``select_v`` the V columns are penalized in stage two while the index
    stays unpenalized. ``apply_to_comparisons`` leaves the retained U and
    forced V columns unpenalized in the comparison methods as well.
    """

    retained_u: tuple[int, ...] = ()
    force_v: bool | tuple[bool, ...] = True
    pi_only: bool = False
    select_v: bool = False
    apply_to_comparisons: bool = False

    def v_flags(self, d: int) -> np.ndarray:
        if self.pi_only:
            return np.zeros(d, dtype=bool)
        if isinstance(self.force_v, (bool, np.bool_)):
            return np.full(d, bool(self.force_v))
        flags = np.asarray(self.force_v, dtype=bool)
        if flags.size != d:
            raise ValueError("force_v needs one flag per V column")
        return flags


@dataclass(frozen=True)
class MethodConfig:
    fit: FitConfig = FitConfig()
    delta_grid: tuple[float, ...] = (0.5, 1.0, 2.0)
    n_lambda: int = 50
    folds: int = 5
    min_target_rows: int = 20
    min_target_events: int = 5
    imputations: int = 5
    bartlett_sweeps: int = 5
    mice_cycles: int = 5
    max_rejection_attempts: int = 1000
    pooling: str = "selected"  # or "all"


@dataclass(eq=False)
class FittedMethod:
    """A fitted risk model in the original (U, V) coordinates.

    The linear predictor is ``u @ beta_u + v @ beta_v - offset`` and the
    survival prediction ``exp(-H0(t) exp(lp))`` with ``baseline`` as H0.
    """

    method: str
    beta_u: np.ndarray
    beta_v: np.ndarray
    baseline: BreslowBaseline
    offset: float = 0.0
    theta0: float = math.nan
    theta1: np.ndarray | None = None
    stage1: CoxFit | None = None
    stage1_center: float = 0.0
    fits: list[CoxFit] = field(default_factory=list)
    diagnostics: dict = field(default_factory=dict)

    @property
    def coefficients(self) -> np.ndarray:
        return np.concatenate([self.beta_u, self.beta_v])

    @property
    def selected_mask(self) -> np.ndarray:
        return select_variables(self)

    def linear_predictor(self, u, v) -> np.ndarray:
        u = np.asarray(u, dtype=float).reshape(-1, self.beta_u.size)
        v = np.asarray(v, dtype=float).reshape(u.shape[0], self.beta_v.size)
        return u @ self.beta_u + v @ self.beta_v - self.offset

    def survival_fn(self, u, v):
        lp = self.linear_predictor(u, v)
        return lambda times: self.baseline.survival(times, lp)


def _rng(seed, tag: str, k: int = 0) -> np.random.Generator:
    return np.random.default_rng([int(seed), zlib.crc32(tag.encode()), k])


def _check_target(data: TwoPhaseDataset, config: MethodConfig):
    obs = data.observed
    n_ev = int(data.event[obs].sum())
    if obs.sum() < config.min_target_rows or n_ev < config.min_target_events:
        raise FitError(f"phase-two sample too small: {int(obs.sum())} rows, {n_ev} events "
                       f"(need {config.min_target_rows} rows and {config.min_target_events} events)")


def _alasso(ds: Dataset, factors, config: MethodConfig, seed) -> CoxFit:
    return fit_adaptive_lasso(ds, factors, config.fit, seed, config.delta_grid,
                              config.n_lambda, config.folds)


def _joint_factors(data: TwoPhaseDataset, dk: DomainKnowledge | None) -> np.ndarray:
    f = np.ones(data.p + data.d)
    if dk is not None and dk.apply_to_comparisons:
        f[list(dk.retained_u)] = 0.0
        f[data.p:][dk.v_flags(data.d)] = 0.0
    return f


# ---------------------------------------------------------------------------
# Expert-guided two-stage procedure
# ---------------------------------------------------------------------------

def prognostic_index(stage1: CoxFit, u_rows, center: float | None = None) -> np.ndarray:
    """Stage-one linear predictor, centered (by default on the rows given)."""
    u_rows = np.asarray(u_rows, dtype=float)
    if u_rows.ndim != 2 or u_rows.shape[1] != stage1.coefficients.size:
        raise ValueError("U rows do not match the stage-one coefficient dimension")
    raw = u_rows @ stage1.coefficients
    return raw - (raw.mean() if center is None else center)


def fit_expert_guided(data: TwoPhaseDataset, dk: DomainKnowledge = DomainKnowledge(),
                      config: MethodConfig = MethodConfig(), seed=0) -> FittedMethod:
    _check_target(data, config)
    retained = list(dk.retained_u)
    if any(not 0 <= j < data.p for j in retained):
        raise ValueError("retained_u indices out of range")
    factors = np.ones(data.p)
    factors[retained] = 0.0
    stage1 = _alasso(Dataset(data.time, data.event, data.u, data.u_names), factors, config, seed)
    center = float(np.mean(data.u @ stage1.coefficients))

    obs = data.observed
    zeta = prognostic_index(stage1, data.u[obs], center)
    keep = dk.v_flags(data.d) if not dk.select_v else np.ones(data.d, dtype=bool)
    if dk.pi_only:
        keep = np.zeros(data.d, dtype=bool)
    x2 = np.column_stack([zeta, data.v[obs][:, keep]])
    target = Dataset(data.time[obs], data.event[obs], x2, ("PI",) + tuple(np.array(data.v_names)[keep]))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        if dk.select_v and keep.any():
            stage2 = _alasso(target, np.r_[0.0, np.ones(keep.sum())], config, seed)
        else:
            stage2 = fit_cox(target, config.fit)
    theta0 = float(stage2.coefficients[0])
    theta1 = np.zeros(data.d)
    theta1[keep] = stage2.coefficients[1:]
    return FittedMethod(
        "EG", theta0 * stage1.coefficients, theta1, stage2.baseline, offset=theta0 * center,
        theta0=theta0, theta1=theta1, stage1=stage1, stage1_center=center, fits=[stage1, stage2],
        diagnostics={"stage2_converged": stage2.converged})


# ---------------------------------------------------------------------------
# Comparison methods
# ---------------------------------------------------------------------------

def _from_joint(tag: str, fit: CoxFit, p: int, **diag) -> FittedMethod:
    return FittedMethod(tag, fit.coefficients[:p].copy(), fit.coefficients[p:].copy(),
                        fit.baseline, fits=[fit], diagnostics=diag)


def fit_complete_case(data: TwoPhaseDataset, config: MethodConfig = MethodConfig(), seed=0,
                      dk: DomainKnowledge | None = None) -> FittedMethod:
    _check_target(data, config)
    fit = _alasso(data.joint(rows=data.observed), _joint_factors(data, dk), config, seed)
    return _from_joint("CCA", fit, data.p)


def naive_fill(data: TwoPhaseDataset) -> np.ndarray:
    """Mode (binary, ties to 0) or mean (continuous) of the observed V values."""
    v = data.v.copy()
    miss = ~data.observed
    for j, kind in enumerate(data.v_kinds):
        obs = data.v[~miss, j]
        if obs.size == 0:
            raise FitError(f"V column {data.v_names[j]} is never observed")
        if kind == BINARY:
            fill = 1.0 if np.sum(obs == 1.0) > np.sum(obs == 0.0) else 0.0
        else:
            fill = float(obs.mean())
        v[miss, j] = fill
    return v


def fit_naive_imputation(data: TwoPhaseDataset, config: MethodConfig = MethodConfig(), seed=0,
                         dk: DomainKnowledge | None = None) -> FittedMethod:
    fit = _alasso(data.joint(naive_fill(data)), _joint_factors(data, dk), config, seed)
    return _from_joint("NI", fit, data.p)


def pool_fits(fits: Sequence[CoxFit], datasets: Sequence[Dataset], pooling: str = "selected"):
    """Consensus selection (nonzero in at least half the fits) and pooled coefficients."""
    k = len(fits)
    coefs = np.array([f.coefficients for f in fits])
    counts = np.count_nonzero(coefs, axis=0)
    selected = counts >= math.ceil(k / 2)
    if pooling == "selected":
        pooled = np.where(selected, coefs.sum(axis=0) / np.maximum(counts, 1), 0.0)
    elif pooling == "all":
        pooled = np.where(selected, coefs.mean(axis=0), 0.0)
    else:
        raise ValueError(f"unknown pooling rule {pooling!r}")
    baseline = average_baselines([breslow_baseline(ds, ds.x @ pooled) for ds in datasets])
    return pooled, selected, baseline


def _fit_multiple(tag, data, completed, config, seed, dk, diag):
    factors = _joint_factors(data, dk)
    datasets = [data.joint(v) for v in completed]
    fits = [_alasso(ds, factors, config, seed) for ds in datasets]
    pooled, selected, baseline = pool_fits(fits, datasets, config.pooling)
    diag["selection_counts"] = np.count_nonzero([f.coefficients for f in fits], axis=0)
    return FittedMethod(tag, pooled[: data.p], pooled[data.p:], baseline, fits=fits, diagnostics=diag)


def _check_mi(data: TwoPhaseDataset, k: int):
    if k < 1:
        raise ValueError("need at least one imputation")
    if data.d and data.n_prime == 0:
        raise FitError("V is never observed")


def fit_mi_wood(data: TwoPhaseDataset, K: int = 5, config: MethodConfig = MethodConfig(), seed=0,
                dk: DomainKnowledge | None = None) -> FittedMethod:
    """Chained-equation imputations, per-imputation adaptive lasso, consensus pooling."""
    _check_mi(data, K)
    miss = ~data.observed
    completed = []
    for k in range(K):
        try:
            completed.append(impute_chained(data.time, data.event, data.u, data.v, miss,
                                            data.v_kinds, _rng(seed, "MI-Wood", k), config.mice_cycles))
        except np.linalg.LinAlgError as exc:
            raise FitError(f"imputation model failed: {exc}") from exc
    return _fit_multiple("MI-Wood", data, completed, config, seed, dk, {})


def fit_mi_bartlett(data: TwoPhaseDataset, K: int = 5, config: MethodConfig = MethodConfig(), seed=0,
                    dk: DomainKnowledge | None = None) -> FittedMethod:
    """Substantive-model-compatible imputations by rejection sampling, then as MI-Wood."""
    _check_mi(data, K)
    miss = ~data.observed
    stats = RejectionStats()
    completed = []
    for k in range(K):
        try:
            completed.append(impute_smc(data.time, data.event, data.u, data.v, miss, data.v_kinds,
                                        _rng(seed, "MI-Bartlett", k), config.bartlett_sweeps,
                                        config.fit, config.max_rejection_attempts, stats))
        except np.linalg.LinAlgError as exc:
            raise FitError(f"imputation model failed: {exc}") from exc
    diag = {"proposals": stats.proposals, "accepted": stats.accepted, "fallbacks": stats.fallbacks}
    return _fit_multiple("MI-Bartlett", data, completed, config, seed, dk, diag)


def select_variables(fit: FittedMethod) -> np.ndarray:
    """Nonzero mask over (U, V); for the two-stage fit the U block is the stage-one selection."""
    if fit.stage1 is not None:
        u_mask = fit.stage1.coefficients != 0
        v_mask = (fit.theta1 if fit.theta1 is not None else fit.beta_v) != 0
        return np.concatenate([u_mask, v_mask])
    return fit.coefficients != 0


def fit_method(method: str, data: TwoPhaseDataset, dk: DomainKnowledge = DomainKnowledge(),
               config: MethodConfig = MethodConfig(), seed=0) -> FittedMethod:
    key = method.upper().replace("_", "-")
    if key == "EG":
        return fit_expert_guided(data, dk, config, seed)
    if key == "CCA":
        return fit_complete_case(data, config, seed, dk)
    if key == "NI":
        return fit_naive_imputation(data, config, seed, dk)
    if key == "MI-WOOD":
        return fit_mi_wood(data, config.imputations, config, seed, dk)
    if key == "MI-BARTLETT":
        return fit_mi_bartlett(data, config.imputations, config, seed, dk)
    raise ValueError(f"unknown method {method!r}; expected one of {', '.join(METHODS)}")
