"""Cox partial likelihood, unpenalized and penalized fitting, tuning.

The penalized objective is the glmnet one,

    -l(beta) / n + lam * sum_j f_j * [alpha |beta_j| + (1 - alpha) beta_j^2 / 2],

where ``f_j`` is the product of a penalty factor (0 = unpenalized) and an
optional adaptive-lasso weight. Penalized columns are standardized to unit
variance internally; coefficients are always reported on the input scale.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import _kernels
from .survival import BreslowBaseline, Dataset, breslow_baseline, require_events


class SeparationWarning(RuntimeWarning):
    pass


@dataclass(frozen=True)
class FitConfig:
    max_outer_iterations: int = 100
    max_cd_passes: int = 1000
    convergence_tol: float = 1e-9
    standardize: bool = True
    coef_cap: float = 20.0

    def __post_init__(self):
        if self.convergence_tol <= 0:
            raise ValueError("convergence_tol must be positive")
        if self.max_outer_iterations < 1 or self.max_cd_passes < 1:
            raise ValueError("iteration limits must be positive")


@dataclass(frozen=True, eq=False)
class PenaltySpec:
    """Tuning of the penalized objective.

    ``lam`` is the overall strength, ``alpha`` the elastic-net mix
    (1 = lasso), ``penalty_factors`` the per-coefficient multipliers
    (0 leaves a coordinate unpenalized) and ``adaptive_weights`` the
    optional adaptive-lasso weights multiplied into the factors.
    """

    lam: float
    alpha: float = 1.0
    penalty_factors: np.ndarray | None = None
    adaptive_weights: np.ndarray | None = None

    def __post_init__(self):
        if not (np.isfinite(self.lam) and self.lam >= 0):
            raise ValueError("lam must be a finite non-negative number")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        for name in ("penalty_factors", "adaptive_weights"):
            v = getattr(self, name)
            if v is not None:
                v = np.asarray(v, dtype=float)
                if np.any(~np.isfinite(v)) or np.any(v < 0):
                    raise ValueError(f"{name} must be finite and non-negative")
                object.__setattr__(self, name, v)

    def factors(self, dim: int) -> np.ndarray:
        f = np.ones(dim) if self.penalty_factors is None else self.penalty_factors.copy()
        if self.adaptive_weights is not None:
            f = f * self.adaptive_weights
        if f.shape != (dim,):
            raise ValueError(f"penalty vectors must have length {dim}")
        return f


@dataclass(frozen=True, eq=False)
class CvResult:
    grid: list[tuple[float, float]]
    cv_mean: np.ndarray
    cv_se: np.ndarray
    selected: tuple[float, float]
    selected_index: int
    weights: dict[float, np.ndarray] = field(default_factory=dict)
    path_coefficients: dict[float, np.ndarray] = field(default_factory=dict)
    pilot: np.ndarray | None = None


@dataclass(frozen=True, eq=False)
class CoxFit:
    coefficients: np.ndarray
    log_partial_likelihood: float
    baseline: BreslowBaseline
    converged: bool
    n_iterations: int
    objective_trace: np.ndarray | None = None
    penalty: PenaltySpec | None = None
    cv: CvResult | None = None

    def linear_predictor(self, x) -> np.ndarray:
        return np.asarray(x, dtype=float) @ self.coefficients


# ---------------------------------------------------------------------------
# Partial likelihood and derivatives
# ---------------------------------------------------------------------------

def _check(data: Dataset, beta) -> np.ndarray:
    require_events(data)
    beta = np.asarray(beta, dtype=float).reshape(-1)
    if beta.size != data.dim:
        raise ValueError(f"beta has length {beta.size}, expected {data.dim}")
    if not np.all(np.isfinite(beta)):
        raise ValueError("beta must be finite")
    return beta


def partial_loglik(data: Dataset, beta) -> float:
    beta = _check(data, beta)
    t, e, x = data.sorted
    return float(_kernels.cox_loglik(t, e, x @ beta))


def partial_loglik_gradient(data: Dataset, beta) -> np.ndarray:
    beta = _check(data, beta)
    t, e, x = data.sorted
    return _kernels.cox_derivatives(t, e, x, x @ beta)[1]


def partial_loglik_hessian(data: Dataset, beta) -> np.ndarray:
    beta = _check(data, beta)
    t, e, x = data.sorted
    return _kernels.cox_derivatives(t, e, x, x @ beta)[2]


# ---------------------------------------------------------------------------
# Unpenalized Newton-Raphson
# ---------------------------------------------------------------------------

def _finite_design(data: Dataset):
    if not np.all(np.isfinite(data.x)):
        raise ValueError("covariates contain missing or non-finite values")


def fit_cox(data: Dataset, config: FitConfig = FitConfig(), init=None) -> CoxFit:
    """Maximise the Breslow partial likelihood by Newton-Raphson with step-halving.

    A diverging coefficient (monotone likelihood) is capped at
    ``config.coef_cap`` and the fit is returned with ``converged=False``.
    """
    require_events(data)
    _finite_design(data)
    p = data.dim
    if p >= data.n_events:
        warnings.warn(f"{p} covariates for {data.n_events} events", RuntimeWarning, stacklevel=2)
    t, e, x = data.sorted
    center = x.mean(axis=0) if data.n else np.zeros(p)
    xc = np.ascontiguousarray(x - center)
    beta = np.zeros(p) if init is None else np.asarray(init, dtype=float).copy()
    ll, g, h = _kernels.cox_derivatives(t, e, xc, xc @ beta)
    cap = config.coef_cap
    converged = capped = False
    it = 0
    for it in range(1, config.max_outer_iterations + 1):
        info = -h
        try:
            step = np.linalg.solve(info, g)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(info, g, rcond=None)[0]
        s = 1.0
        while True:
            new = np.clip(beta + s * step, -cap, cap)
            ll_new = _kernels.cox_loglik(t, e, xc @ new)
            if ll_new >= ll - 1e-12 * (1.0 + abs(ll)) or s < 1e-8:
                break
            s *= 0.5
        change = np.max(np.abs(new - beta)) if p else 0.0
        beta = new
        ll, g, h = _kernels.cox_derivatives(t, e, xc, xc @ beta)
        if np.any(np.abs(beta) >= cap):
            capped = True
            break
        if change < config.convergence_tol:
            converged = True
            break
    if capped:
        warnings.warn("monotone likelihood: coefficients capped", SeparationWarning, stacklevel=2)
    return CoxFit(beta, float(ll), breslow_baseline(data, data.x @ beta),
                  converged and not capped, it)


# ---------------------------------------------------------------------------
# Penalized fitting
# ---------------------------------------------------------------------------

class _Design:
    """Sorted, standardized design for repeated penalized solves."""

    def __init__(self, t, e, x, factors, standardize):
        self.t, self.e = t, e
        self.n, self.p = x.shape
        self.center = x.mean(axis=0) if self.n else np.zeros(self.p)
        self.scale = np.ones(self.p)
        if standardize:
            pen = factors > 0
            sd = x[:, pen].std(axis=0)
            sd[sd <= 1e-12] = 1.0
            self.scale[pen] = sd
        self.xs = np.ascontiguousarray((x - self.center) / self.scale)

    def to_std(self, beta):
        return beta * self.scale

    def to_orig(self, beta_std):
        return beta_std / self.scale


def _solve(design: _Design, lam, alpha, factors, config, init_std):
    return _kernels.penalized_solve(
        design.t, design.e, design.xs, np.ascontiguousarray(init_std, dtype=float),
        float(lam), float(alpha), np.ascontiguousarray(factors, dtype=float),
        config.max_outer_iterations, config.max_cd_passes, config.convergence_tol,
        config.coef_cap)


def fit_penalized_cox(data: Dataset, penalty: PenaltySpec, config: FitConfig = FitConfig(),
                      init=None) -> CoxFit:
    """Penalized Cox fit by outer Newton steps and inner coordinate descent."""
    require_events(data)
    _finite_design(data)
    factors = penalty.factors(data.dim)
    t, e, x = data.sorted
    design = _Design(t, e, x, factors, config.standardize)
    init_std = np.zeros(data.dim) if init is None else design.to_std(np.asarray(init, dtype=float))
    beta_s, trace, it, conv, capped = _solve(design, penalty.lam, penalty.alpha, factors, config, init_std)
    if capped:
        warnings.warn("monotone likelihood: coefficients capped", SeparationWarning, stacklevel=2)
    beta = design.to_orig(beta_s)
    return CoxFit(beta, partial_loglik(data, beta), breslow_baseline(data, data.x @ beta),
                  bool(conv), int(it), trace, penalty)


def _lambda_max(design: _Design, factors, alpha, config) -> float:
    pen = factors > 0
    if not pen.any():
        return 0.0
    beta = np.zeros(design.p)
    if (~pen).any():
        sub = _Design.__new__(_Design)
        sub.t, sub.e, sub.n, sub.p = design.t, design.e, design.n, int((~pen).sum())
        sub.xs = np.ascontiguousarray(design.xs[:, ~pen])
        b, *_ = _kernels.penalized_solve(sub.t, sub.e, sub.xs, np.zeros(sub.p), 0.0, 1.0,
                                         np.zeros(sub.p), config.max_outer_iterations,
                                         config.max_cd_passes, config.convergence_tol,
                                         config.coef_cap)
        beta[~pen] = b
    g = _kernels.cox_derivatives(design.t, design.e, design.xs, design.xs @ beta)[1] / design.n
    a = max(alpha, 1e-3)
    lmax = float(np.max(np.abs(g[pen]) / (a * factors[pen])))
    return lmax if lmax > 0 else 1e-6


def lambda_max(data: Dataset, penalty_factors, alpha: float = 1.0,
               config: FitConfig = FitConfig()) -> float:
    """Smallest lambda at which every penalized coefficient is zero."""
    factors = np.asarray(penalty_factors, dtype=float)
    t, e, x = data.sorted
    return _lambda_max(_Design(t, e, x, factors, config.standardize), factors, alpha, config)


def lambda_path(lmax: float, size: int = 50, ratio: float = 0.01) -> np.ndarray:
    if size == 1:
        return np.array([lmax])
    return lmax * np.logspace(0.0, np.log10(ratio), size)


def _path(design: _Design, factors, lambdas, alpha, config) -> np.ndarray:
    coefs = np.empty((len(lambdas), design.p))
    b = np.zeros(design.p)
    for i, lam in enumerate(lambdas):
        b = _solve(design, lam, alpha, factors, config, b)[0]
        coefs[i] = design.to_orig(b)
    return coefs


def fit_path(data: Dataset, penalty_factors, lambdas, alpha: float = 1.0,
             config: FitConfig = FitConfig()) -> np.ndarray:
    """Warm-started coefficients (original scale) along a decreasing lambda path."""
    factors = np.asarray(penalty_factors, dtype=float)
    t, e, x = data.sorted
    return _path(_Design(t, e, x, factors, config.standardize), factors, lambdas, alpha, config)


# ---------------------------------------------------------------------------
# Cross-validation
# ---------------------------------------------------------------------------

def make_folds(event, folds: int, rng: np.random.Generator, stratify: bool = False) -> np.ndarray:
    event = np.asarray(event, dtype=bool)
    n = event.size
    foldid = np.empty(n, dtype=int)
    if not stratify:
        foldid[rng.permutation(n)] = np.arange(n) % folds
        return foldid
    offset = 0
    for grp in (np.flatnonzero(event), np.flatnonzero(~event)):
        perm = rng.permutation(grp)
        foldid[perm] = (np.arange(grp.size) + offset) % folds
        offset += grp.size
    return foldid


def _fold_ids(data: Dataset, folds: int, seed) -> np.ndarray:
    if folds < 2:
        raise ValueError("folds must be at least 2")
    rng = np.random.default_rng(seed)
    for stratify in (False, True):
        foldid = make_folds(data.event, folds, rng, stratify)
        if all(data.event[foldid != k].any() for k in range(folds)):
            return foldid
    raise ValueError("cannot form folds whose training parts all contain events")


def _cv_deviance(data: Dataset, factors, lambdas, alpha, foldid, config) -> np.ndarray:
    """Cross-validated partial-likelihood deviance, shape (folds, len(lambdas))."""
    t, e, x = data.sorted
    fid = foldid[data.order]
    k_max = fid.max() + 1
    out = np.empty((k_max, len(lambdas)))
    for k in range(k_max):
        tr = fid != k
        design = _Design(t[tr], e[tr], np.ascontiguousarray(x[tr]), factors, config.standardize)
        coefs = _path(design, factors, lambdas, alpha, config)
        xt = np.ascontiguousarray(x[tr])
        for i, b in enumerate(coefs):
            l_full = _kernels.cox_loglik(t, e, x @ b)
            l_train = _kernels.cox_loglik(t[tr], e[tr], xt @ b)
            out[k, i] = -2.0 * (l_full - l_train)
    return out


def _select(mean: np.ndarray, lambdas_flat: np.ndarray) -> int:
    best = mean.min()
    ties = np.flatnonzero(mean <= best + 1e-12 * (1.0 + abs(best)))
    return int(ties[np.argmin(lambdas_flat[ties])])


def pilot_estimate(data: Dataset, penalized, config: FitConfig = FitConfig(), seed=0,
                   folds: int = 5, n_lambda: int = 50, alpha: float = 0.5) -> np.ndarray:
    """Elastic-net pilot coefficients with lambda chosen by CV deviance."""
    factors = np.asarray(penalized, dtype=bool).astype(float)
    t, e, x = data.sorted
    design = _Design(t, e, x, factors, config.standardize)
    if not factors.any():
        return _path(design, factors, [0.0], alpha, config)[0]
    lambdas = lambda_path(_lambda_max(design, factors, alpha, config), n_lambda)
    dev = _cv_deviance(data, factors, lambdas, alpha, _fold_ids(data, folds, seed), config)
    i = _select(dev.mean(axis=0), lambdas)
    return _path(design, factors, lambdas[: i + 1], alpha, config)[-1]


def weights_from_pilot(pilot, penalized, n: int, delta: float) -> np.ndarray:
    """Adaptive weights (|pilot| + 1/n)^(-delta) on penalized coordinates, 0 elsewhere."""
    pilot = np.asarray(pilot, dtype=float)
    penalized = np.asarray(penalized, dtype=bool)
    w = np.zeros(pilot.size)
    w[penalized] = (np.abs(pilot[penalized]) + 1.0 / n) ** (-delta)
    return w


def adaptive_weights(data: Dataset, penalized, delta: float = 1.0,
                     config: FitConfig = FitConfig(), seed=0, pilot=None) -> np.ndarray:
    if pilot is None:
        pilot = pilot_estimate(data, penalized, config, seed)
    return weights_from_pilot(pilot, penalized, data.n, delta)


def cross_validate(data: Dataset, delta_grid: Sequence[float] = (0.5, 1.0, 2.0),
                   lambda_grid_size: int = 50, folds: int = 5, penalty_factors=None,
                   seed=0, config: FitConfig = FitConfig(), lambdas=None) -> CvResult:
    """Joint choice of the adaptive-weight exponent and lambda by CV deviance.

    ``lambdas`` overrides the generated path (used for degenerate grids).
    """
    require_events(data)
    _finite_design(data)
    base = np.ones(data.dim) if penalty_factors is None else np.asarray(penalty_factors, dtype=float)
    penalized = base > 0
    foldid = _fold_ids(data, folds, seed)
    pilot = pilot_estimate(data, penalized, config, seed, folds) if penalized.any() else np.zeros(data.dim)
    t, e, x = data.sorted
    grid, means, ses = [], [], []
    weights, paths = {}, {}
    for delta in delta_grid:
        w = weights_from_pilot(pilot, penalized, data.n, delta)
        factors = base * np.where(penalized, w, 1.0)
        design = _Design(t, e, x, factors, config.standardize)
        lam = (np.asarray(lambdas, dtype=float) if lambdas is not None
               else lambda_path(_lambda_max(design, factors, 1.0, config), lambda_grid_size))
        if not penalized.any():
            lam = np.array([0.0])
        dev = _cv_deviance(data, factors, lam, 1.0, foldid, config)
        weights[float(delta)] = w
        paths[float(delta)] = _path(design, factors, lam, 1.0, config)
        grid.extend((float(delta), float(l)) for l in lam)
        means.append(dev.mean(axis=0))
        ses.append(dev.std(axis=0, ddof=1) / np.sqrt(dev.shape[0]))
    means = np.concatenate(means)
    ses = np.concatenate(ses)
    idx = _select(means, np.array([g[1] for g in grid]))
    return CvResult(grid, means, ses, grid[idx], idx, weights, paths, pilot)


def fit_adaptive_lasso(data: Dataset, penalty_factors=None, config: FitConfig = FitConfig(),
                       seed=0, delta_grid: Sequence[float] = (0.5, 1.0, 2.0),
                       n_lambda: int = 50, folds: int = 5) -> CoxFit:
    """Cross-validated adaptive-lasso Cox fit; coordinates with factor 0 stay unpenalized."""
    cv = cross_validate(data, delta_grid, n_lambda, folds, penalty_factors, seed, config)
    delta, lam = cv.selected
    row = sum(1 for g in cv.grid[: cv.selected_index] if g[0] == delta)
    beta = cv.path_coefficients[delta][row]
    base = np.ones(data.dim) if penalty_factors is None else np.asarray(penalty_factors, dtype=float)
    penalty = PenaltySpec(lam, 1.0, base, np.where(base > 0, cv.weights[delta], 1.0))
    return CoxFit(beta, partial_loglik(data, beta), breslow_baseline(data, data.x @ beta),
                  True, 0, None, penalty, cv)
