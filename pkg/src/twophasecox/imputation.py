"""Imputation models for partially observed covariates.

Two flavours are provided: chained-equation draws whose imputation model
carries the outcome through the event indicator and the Nelson-Aalen
cumulative hazard, and substantive-model-compatible draws that propose
from a covariate model and accept according to the Cox likelihood.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .cox import FitConfig, fit_cox
from .survival import Dataset, breslow_baseline

RIDGE = 1e-5


def nelson_aalen_at_times(time, event) -> np.ndarray:
    """Nelson-Aalen cumulative hazard evaluated at each subject's own time."""
    ds = Dataset(time, event, np.empty((len(time), 0)))
    return breslow_baseline(ds, np.zeros(ds.n)).cumhaz(ds.time)


def _design(*blocks) -> np.ndarray:
    cols = [np.ones(len(blocks[0]))] + [np.asarray(b, dtype=float).reshape(len(blocks[0]), -1) for b in blocks]
    return np.column_stack(cols)


def fit_logistic(x, y, max_iter: int = 50, tol: float = 1e-10):
    """Ridge-stabilised logistic MLE; returns (coef, covariance)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    beta = np.zeros(x.shape[1])
    ridge = RIDGE * np.eye(x.shape[1])
    info = ridge
    for _ in range(max_iter):
        mu = expit(x @ beta)
        w = mu * (1.0 - mu)
        info = (x * w[:, None]).T @ x + ridge
        step = np.linalg.solve(info, x.T @ (y - mu) - ridge @ beta)
        beta = beta + step
        if np.max(np.abs(step)) < tol:
            break
    mu = expit(x @ beta)
    info = (x * (mu * (1.0 - mu))[:, None]).T @ x + ridge
    return beta, np.linalg.inv(info)


def fit_linear(x, y):
    """OLS with a small ridge; returns (coef, (X'X)^-1, residual sum of squares, df)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    xtx_inv = np.linalg.inv(x.T @ x + RIDGE * np.eye(x.shape[1]))
    beta = xtx_inv @ x.T @ y
    rss = float(np.sum((y - x @ beta) ** 2))
    return beta, xtx_inv, rss, max(x.shape[0] - x.shape[1], 1)


def _mvn(rng, mean, cov):
    try:
        chol = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        w, v = np.linalg.eigh(cov)
        chol = v * np.sqrt(np.clip(w, 0.0, None))
    return mean + chol @ rng.standard_normal(mean.size)


@dataclass
class CovariateModel:
    """A posterior draw of the model for one covariate given predictors."""

    kind: str
    coef: np.ndarray
    sigma: float = 0.0

    def mean(self, x):
        eta = x @ self.coef
        return expit(eta) if self.kind == "binary" else eta

    def sample(self, x, rng):
        m = self.mean(x)
        if self.kind == "binary":
            return (rng.random(m.size) < m).astype(float)
        return m + self.sigma * rng.standard_normal(m.size)

    def density(self, x, values):
        m = self.mean(x)
        if self.kind == "binary":
            return np.where(values > 0.5, m, 1.0 - m)
        z = (values - m) / self.sigma
        return np.exp(-0.5 * z * z) / (self.sigma * np.sqrt(2 * np.pi))


def draw_covariate_model(kind: str, x, y, rng) -> CovariateModel:
    """Approximate posterior draw of the covariate-model parameters."""
    if kind == "binary":
        beta, cov = fit_logistic(x, y)
        return CovariateModel(kind, _mvn(rng, beta, cov))
    beta, xtx_inv, rss, df = fit_linear(x, y)
    sigma = np.sqrt(rss / rng.chisquare(df)) if rss > 0 else 1e-8
    return CovariateModel(kind, _mvn(rng, beta, sigma**2 * xtx_inv), max(sigma, 1e-8))


def initial_fill(v, missing, rng) -> np.ndarray:
    """Replace missing entries by random draws from each column's observed values."""
    v = v.copy()
    for j in range(v.shape[1]):
        obs = v[~missing, j]
        if obs.size == 0:
            raise ValueError(f"V column {j} is never observed")
        v[missing, j] = rng.choice(obs, size=int(missing.sum()))
    return v


def impute_chained(time, event, u, v, missing, kinds, rng, cycles: int = 5) -> np.ndarray:
    """One completed V matrix from chained equations with outcome carriers."""
    missing = np.asarray(missing, dtype=bool)
    if not missing.any():
        return v.copy()
    h = nelson_aalen_at_times(time, event)
    filled = initial_fill(v, missing, rng)
    d = v.shape[1]
    for _ in range(cycles if d > 1 else 1):
        for j in range(d):
            others = np.delete(filled, j, axis=1)
            x = _design(u, event.astype(float), h, others)
            model = draw_covariate_model(kinds[j], x[~missing], v[~missing, j], rng)
            filled[missing, j] = model.sample(x[missing], rng)
    return filled


# ---------------------------------------------------------------------------
# Substantive-model-compatible rejection sampling
# ---------------------------------------------------------------------------

def acceptance_probability(cumhaz_at_t, lp, event) -> np.ndarray:
    """Envelope-normalised Cox likelihood contribution, bounded by 1.

    Censored: exp(-H e^lp). Events: H e^lp exp(1 - H e^lp), whose maximum
    over the linear predictor is exactly 1.
    """
    hz = cumhaz_at_t * np.exp(lp)
    return np.where(event, hz * np.exp(1.0 - hz), np.exp(-hz))


def cox_likelihood(cumhaz_at_t, lp, event) -> np.ndarray:
    """Cox contribution up to factors constant in the covariate."""
    hz = cumhaz_at_t * np.exp(lp)
    return np.where(event, np.exp(lp), 1.0) * np.exp(-hz)


@dataclass
class RejectionStats:
    proposals: int = 0
    accepted: int = 0
    fallbacks: int = 0


def rejection_sample(model: CovariateModel, x_cov, lp_rest, beta_j, cumhaz_at_t, event, rng,
                     max_attempts: int = 1000, stats: RejectionStats | None = None) -> np.ndarray:
    """Draw one value per row from p(v | x) * Cox likelihood(v).

    ``lp_rest`` is the linear predictor excluding this covariate. Rows not
    accepted within ``max_attempts`` proposals (acceptance below 1/max_attempts)
    fall back to exact two-point sampling (binary) or importance resampling
    from the rejected proposals (continuous).
    """
    m = lp_rest.size
    out = np.empty(m)
    pending = np.arange(m)
    history = [] if model.kind != "binary" else None
    for _ in range(max_attempts):
        if pending.size == 0:
            break
        prop = model.sample(x_cov[pending], rng)
        acc = acceptance_probability(cumhaz_at_t[pending], lp_rest[pending] + beta_j * prop, event[pending])
        ok = rng.random(pending.size) < acc
        if stats is not None:
            stats.proposals += pending.size
            stats.accepted += int(ok.sum())
        out[pending[ok]] = prop[ok]
        if history is not None:
            history.append((pending.copy(), prop))
        pending = pending[~ok]
    if pending.size:
        if stats is not None:
            stats.fallbacks += pending.size
        if model.kind == "binary":
            out[pending] = _two_point(model, x_cov[pending], lp_rest[pending], beta_j,
                                      cumhaz_at_t[pending], event[pending], rng)
        else:
            for i in pending:
                props = np.concatenate([p[idx == i] for idx, p in history])
                w = cox_likelihood(cumhaz_at_t[i], lp_rest[i] + beta_j * props, event[i])
                w = w / w.sum() if w.sum() > 0 else np.full(props.size, 1.0 / props.size)
                out[i] = props[rng.choice(props.size, p=w)]
    return out


def binary_posterior(prior_one, cumhaz_at_t, lp_rest, beta_j, event) -> np.ndarray:
    """P(V = 1 | covariates, outcome) by direct enumeration of {0, 1}."""
    l1 = prior_one * cox_likelihood(cumhaz_at_t, lp_rest + beta_j, event)
    l0 = (1.0 - prior_one) * cox_likelihood(cumhaz_at_t, lp_rest, event)
    return l1 / (l1 + l0)


def _two_point(model, x_cov, lp_rest, beta_j, cumhaz_at_t, event, rng):
    p1 = binary_posterior(model.mean(x_cov), cumhaz_at_t, lp_rest, beta_j, event)
    return (rng.random(p1.size) < p1).astype(float)


def _draw_cox_coefficients(fit, ds, rng):
    from .cox import partial_loglik_hessian

    if not fit.converged:
        return fit.coefficients
    try:
        cov = np.linalg.inv(-partial_loglik_hessian(ds, fit.coefficients))
    except np.linalg.LinAlgError:
        return fit.coefficients
    return _mvn(rng, fit.coefficients, 0.5 * (cov + cov.T))


def impute_smc(time, event, u, v, missing, kinds, rng, sweeps: int = 5,
               config: FitConfig = FitConfig(), max_attempts: int = 1000,
               stats: RejectionStats | None = None) -> np.ndarray:
    """One completed V matrix compatible with a Cox model in (U, V)."""
    missing = np.asarray(missing, dtype=bool)
    if not missing.any():
        return v.copy()
    event = np.asarray(event, dtype=bool)
    p = u.shape[1]
    filled = initial_fill(v, missing, rng)
    for _ in range(sweeps):
        for j in range(v.shape[1]):
            ds = Dataset(time, event, np.column_stack([u, filled]))
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                fit = fit_cox(ds, config)
            beta = _draw_cox_coefficients(fit, ds, rng)
            cumhaz = breslow_baseline(ds, ds.x @ beta).cumhaz(time)
            others = np.delete(filled, j, axis=1)
            x_cov = _design(u, others)
            model = draw_covariate_model(kinds[j], x_cov, filled[:, j], rng)
            beta_j = beta[p + j]
            lp_rest = ds.x @ beta - beta_j * filled[:, j]
            filled[missing, j] = rejection_sample(
                model, x_cov[missing], lp_rest[missing], beta_j, cumhaz[missing],
                event[missing], rng, max_attempts, stats)
    return filled
