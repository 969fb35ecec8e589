import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import random_dataset
from twophasecox.cox import (FitConfig, PenaltySpec, SeparationWarning, cross_validate,
                             fit_adaptive_lasso, fit_cox, fit_penalized_cox, lambda_max, lambda_path,
                             partial_loglik, partial_loglik_gradient, partial_loglik_hessian,
                             weights_from_pilot, adaptive_weights, make_folds)
from twophasecox.survival import Dataset


def naive_loglik(time, event, x, beta):
    """Breslow partial log-likelihood straight from its definition."""
    eta = x @ beta
    total = 0.0
    for t in np.unique(time[event]):
        dying = event & (time == t)
        risk = time >= t
        total += eta[dying].sum() - dying.sum() * math.log(np.exp(eta[risk]).sum())
    return total


def grid_argmax(data, lo=-3.0, hi=3.0, step=1e-3):
    grid = np.arange(lo, hi + step / 2, step)
    values = [naive_loglik(data.time, data.event, data.x, np.array([b])) for b in grid]
    return grid[int(np.argmax(values))], grid


class TestPartialLikelihood:
    def test_equal_risks_is_log_factorial(self):
        n = 6
        d = Dataset(np.arange(1.0, n + 1), np.ones(n, bool), np.random.default_rng(0).standard_normal((n, 2)))
        assert partial_loglik(d, np.zeros(2)) == pytest.approx(-math.log(math.factorial(n)))

    def test_single_subject(self):
        d = Dataset([2.0], [True], [[1.7]])
        assert partial_loglik(d, [3.0]) == 0.0

    def test_matches_definition_with_ties(self, rng):
        for _ in range(20):
            d = random_dataset(rng, n=15, p=3, ties=True)
            beta = rng.standard_normal(3)
            assert partial_loglik(d, beta) == pytest.approx(naive_loglik(d.time, d.event, d.x, beta), rel=1e-12, abs=1e-12)

    def test_errors(self):
        d = Dataset([1.0, 2.0], [False, False], [[0.0], [1.0]])
        with pytest.raises(ValueError):
            partial_loglik(d, [0.0])
        d = Dataset([1.0, 2.0], [True, False], [[0.0], [1.0]])
        with pytest.raises(ValueError):
            partial_loglik(d, [np.nan])
        with pytest.raises(ValueError):
            partial_loglik(d, [0.0, 1.0])

    def test_gradient_zero_when_risk_sets_centered(self):
        d = Dataset([1.0, 1.0, 2.0, 2.0], [True, True, True, True], [[1.0], [-1.0], [2.0], [-2.0]])
        assert np.allclose(partial_loglik_gradient(d, [0.0]), 0.0)

    def test_gradient_finite_differences(self, rng):
        h = 1e-6
        for _ in range(50):
            d = random_dataset(rng, n=int(rng.integers(4, 20)), p=3, ties=bool(rng.integers(2)))
            beta = rng.standard_normal(3)
            g = partial_loglik_gradient(d, beta)
            fd = np.array([(partial_loglik(d, beta + h * ej) - partial_loglik(d, beta - h * ej)) / (2 * h)
                           for ej in np.eye(3)])
            assert np.linalg.norm(g - fd) < 1e-5 * max(np.linalg.norm(g), 1.0)

    def test_hessian_symmetric_nsd_and_matches_gradient(self, rng):
        h = 1e-6
        for _ in range(50):
            d = random_dataset(rng, n=12, p=3, ties=True)
            beta = rng.standard_normal(3)
            H = partial_loglik_hessian(d, beta)
            assert np.allclose(H, H.T, atol=1e-12)
            assert np.linalg.eigvalsh(H).max() <= 1e-10
            fd = np.column_stack([(partial_loglik_gradient(d, beta + h * ej) - partial_loglik_gradient(d, beta - h * ej)) / (2 * h)
                                  for ej in np.eye(3)])
            assert np.linalg.norm(H - fd) < 1e-5 * max(np.linalg.norm(H), 1.0)

    @given(st.floats(-5, 5))
    def test_column_shift_invariance(self, c):
        d = random_dataset(np.random.default_rng(3), n=20, p=2)
        beta = np.array([0.3, -0.7])
        shifted = d.with_x(d.x + np.array([c, 0.0]))
        assert partial_loglik(shifted, beta) == pytest.approx(partial_loglik(d, beta), abs=1e-9)


class TestFitCox:
    def test_grid_oracle(self):
        rng = np.random.default_rng(7)
        checked = 0
        while checked < 25:
            n = int(rng.integers(4, 7))
            d = Dataset(rng.exponential(1, n) + 0.01, rng.random(n) < 0.8, rng.standard_normal((n, 1)))
            if not d.event.any():
                continue
            best, grid = grid_argmax(d)
            if best in (grid[0], grid[-1]):
                continue  # monotone likelihood on this instance; no interior maximum
            fit = fit_cox(d)
            assert fit.converged
            assert abs(fit.coefficients[0] - best) < 2e-3
            checked += 1

    def test_null_effect_identical_groups(self):
        t = np.array([1.0, 2.0, 3.0, 4.0, 5.0])
        d = Dataset(np.r_[t, t], np.ones(10, bool), np.r_[np.zeros(5), np.ones(5)])
        assert abs(fit_cox(d).coefficients[0]) < 1e-8

    def test_self_calibration_fixed_point(self, rng):
        d = random_dataset(rng, n=80, p=3)
        fit = fit_cox(d)
        refit = fit_cox(d.with_x(fit.linear_predictor(d.x).reshape(-1, 1)))
        assert refit.coefficients[0] == pytest.approx(1.0, abs=1e-8)

    @given(st.floats(0.1, 10.0))
    def test_scale_equivariance(self, c):
        d = random_dataset(np.random.default_rng(11), n=40, p=2)
        base = fit_cox(d)
        scaled = fit_cox(d.with_x(d.x * np.array([c, 1.0])))
        assert scaled.coefficients[0] == pytest.approx(base.coefficients[0] / c, rel=1e-6)
        assert np.allclose(scaled.linear_predictor(scaled_x := d.x * np.array([c, 1.0])),
                           base.linear_predictor(d.x), atol=1e-6)

    def test_separation_is_capped_and_flagged(self):
        d = Dataset(np.arange(1.0, 9.0), np.ones(8, bool), np.r_[np.ones(4), np.zeros(4)])
        with pytest.warns(SeparationWarning):
            fit = fit_cox(d)
        assert not fit.converged
        assert abs(fit.coefficients[0]) == pytest.approx(FitConfig().coef_cap)

    def test_warns_when_too_many_covariates(self, rng):
        d = random_dataset(rng, n=6, p=5, censor=0.5)
        with pytest.warns(RuntimeWarning):
            fit_cox(d)


class TestPenalized:
    def test_lambda_zero_matches_unpenalized(self, rng):
        d = random_dataset(rng, n=60, p=4)
        a = fit_cox(d).coefficients
        b = fit_penalized_cox(d, PenaltySpec(0.0)).coefficients
        assert np.allclose(a, b, atol=1e-4)

    def test_zero_factors_match_unpenalized(self, rng):
        d = random_dataset(rng, n=60, p=3)
        b = fit_penalized_cox(d, PenaltySpec(5.0, penalty_factors=np.zeros(3))).coefficients
        assert np.allclose(b, fit_cox(d).coefficients, atol=1e-4)

    def test_lambda_max_zeroes_everything(self, rng):
        d = random_dataset(rng, n=60, p=4)
        lmax = lambda_max(d, np.ones(4))
        assert np.all(fit_penalized_cox(d, PenaltySpec(lmax)).coefficients == 0)
        assert np.any(fit_penalized_cox(d, PenaltySpec(0.9 * lmax)).coefficients != 0)

    def test_unpenalized_coordinate_always_retained(self, rng):
        d = random_dataset(rng, n=60, p=4)
        pf = np.array([0.0, 1, 1, 1])
        assert fit_cox(d).coefficients[0] != 0
        for lam in lambda_path(lambda_max(d, pf) * 2, 20):
            assert fit_penalized_cox(d, PenaltySpec(lam, penalty_factors=pf)).coefficients[0] != 0

    def test_objective_monotone(self, rng):
        for _ in range(10):
            d = random_dataset(rng, n=50, p=5)
            lmax = lambda_max(d, np.ones(5))
            fit = fit_penalized_cox(d, PenaltySpec(0.2 * lmax, alpha=0.7))
            assert np.all(np.diff(fit.objective_trace) <= 1e-12 * (1 + np.abs(fit.objective_trace[:-1])))

    def test_scale_equivariance_with_standardization(self, rng):
        d = random_dataset(rng, n=60, p=3)
        lam = 0.3 * lambda_max(d, np.ones(3))
        a = fit_penalized_cox(d, PenaltySpec(lam))
        scaled = d.with_x(d.x * np.array([3.0, 1, 1]))
        b = fit_penalized_cox(scaled, PenaltySpec(lam))
        assert np.allclose(b.linear_predictor(scaled.x), a.linear_predictor(d.x), atol=1e-7)

    def test_invalid_penalty(self):
        with pytest.raises(ValueError):
            PenaltySpec(-1.0)
        with pytest.raises(ValueError):
            PenaltySpec(1.0, alpha=2.0)
        with pytest.raises(ValueError):
            PenaltySpec(1.0, penalty_factors=np.array([-1.0]))


class TestAdaptiveWeights:
    def test_formula(self):
        w = weights_from_pilot(np.array([1.0, 0.0]), np.array([True, True]), 100, 1.0)
        assert np.allclose(w, [1 / 1.01, 100.0])

    def test_delta_zero_gives_ones(self):
        w = weights_from_pilot(np.array([0.3, 0.0, 2.0]), np.ones(3, bool), 50, 0.0)
        assert np.allclose(w, 1.0)

    @given(st.lists(st.floats(-3, 3), min_size=1, max_size=6), st.floats(0.1, 2.0))
    def test_power_law(self, pilot, delta):
        pilot = np.array(pilot)
        pen = np.ones(pilot.size, bool)
        w1 = weights_from_pilot(pilot, pen, 40, delta)
        w2 = weights_from_pilot(pilot, pen, 40, 2 * delta)
        assert np.allclose(w2, w1**2, rtol=1e-10)

    def test_pilot_fit_gives_finite_weights(self, rng):
        d = random_dataset(rng, n=80, p=4)
        w = adaptive_weights(d, np.ones(4, bool), 1.0, seed=1)
        assert np.all(np.isfinite(w)) and np.all(w > 0)


class TestCrossValidate:
    def test_degenerate_grid(self, rng):
        d = random_dataset(rng, n=60, p=3)
        cv = cross_validate(d, delta_grid=(1.0,), lambdas=[0.05])
        assert cv.selected == (1.0, 0.05)

    def test_deterministic(self, rng):
        d = random_dataset(rng, n=60, p=3)
        a = cross_validate(d, lambda_grid_size=10, seed=4)
        b = cross_validate(d, lambda_grid_size=10, seed=4)
        assert a.selected == b.selected and np.array_equal(a.cv_mean, b.cv_mean)

    def test_selection_minimizes_mean_deviance(self, rng):
        d = random_dataset(rng, n=60, p=3)
        cv = cross_validate(d, lambda_grid_size=10, seed=2)
        assert cv.cv_mean[cv.selected_index] == cv.cv_mean.min()

    def test_pure_noise_prefers_heavy_shrinkage(self):
        upper = 0
        for rep in range(50):
            rng = np.random.default_rng(1000 + rep)
            n = 100
            d = Dataset(rng.exponential(1, n), rng.random(n) < 0.7, rng.standard_normal((n, 5)))
            cv = cross_validate(d, seed=rep)
            delta = cv.selected[0]
            block = [g[1] for g in cv.grid if g[0] == delta]
            upper += block.index(cv.selected[1]) < len(block) / 2
        assert upper >= 40

    def test_folds_without_events_are_restratified(self):
        # three events among 30 subjects: random folds often leave a training part eventless
        rng = np.random.default_rng(0)
        event = np.zeros(30, bool)
        event[:3] = True
        d = Dataset(rng.exponential(1, 30), event, rng.standard_normal((30, 2)))
        cv = cross_validate(d, delta_grid=(1.0,), lambda_grid_size=5, folds=3, seed=1)
        assert np.all(np.isfinite(cv.cv_mean))

    def test_impossible_folds_raise(self):
        event = np.zeros(10, bool)
        event[0] = True
        d = Dataset(np.arange(1.0, 11), event, np.random.default_rng(0).standard_normal((10, 1)))
        with pytest.raises(ValueError):
            cross_validate(d, delta_grid=(1.0,), lambda_grid_size=3, folds=5)

    def test_stratified_folds_balance_events(self, rng):
        event = rng.random(53) < 0.3
        fid = make_folds(event, 5, rng, stratify=True)
        counts = np.bincount(fid[event], minlength=5)
        assert counts.max() - counts.min() <= 1

    def test_adaptive_lasso_keeps_unpenalized(self, rng):
        d = random_dataset(rng, n=80, p=5)
        fit = fit_adaptive_lasso(d, penalty_factors=np.array([0.0, 1, 1, 1, 1]), seed=3)
        assert fit.coefficients[0] != 0
        assert fit.cv is not None
