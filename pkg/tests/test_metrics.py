import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import random_dataset
from twophasecox.cox import fit_cox
from twophasecox.metrics import (HorizonWarning, MetricReport, brier_score, c_index,
                                 calibration_slope, integrated_brier_score, mcc, risk_stratify)
from twophasecox.survival import Dataset


def naive_c_index(time, event, risk):
    num = den = 0.0
    n = len(time)
    for i in range(n):
        for j in range(n):
            if i == j or not event[i]:
                continue
            if time[i] < time[j] or (time[i] == time[j] and not event[j]):
                den += 1
                num += 1.0 if risk[i] > risk[j] else 0.5 if risk[i] == risk[j] else 0.0
    return num / den


def outcome(times, events):
    return Dataset(np.asarray(times, float), np.asarray(events, bool), np.empty((len(times), 0)))


class TestCIndex:
    def test_perfect_and_reversed(self):
        d = outcome([1, 2, 3, 4], [1, 1, 1, 1])
        assert c_index(d, [4, 3, 2, 1]) == 1.0
        assert c_index(d, [1, 2, 3, 4]) == 0.0

    def test_constant_scores(self):
        d = outcome([1, 2, 3], [1, 1, 0])
        assert c_index(d, [0, 0, 0]) == 0.5

    def test_tie_conventions(self):
        # tied event times are not comparable; censored at an event time counts as longer
        d = outcome([2, 2, 2], [1, 1, 0])
        assert c_index(d, [3, 1, 0]) == pytest.approx(1.0)

    def test_matches_pairwise_definition(self, rng):
        for _ in range(20):
            d = random_dataset(rng, n=25, ties=True)
            risk = np.round(rng.standard_normal(25), 1)
            assert c_index(d, risk) == pytest.approx(naive_c_index(d.time, d.event, risk))

    @given(st.integers(0, 10_000))
    def test_monotone_invariance_and_complement(self, seed):
        rng = np.random.default_rng(seed)
        d = random_dataset(rng, n=20)
        risk = rng.standard_normal(20)
        assert c_index(d, np.exp(3 * risk)) == pytest.approx(c_index(d, risk))
        assert c_index(d, risk) + c_index(d, -risk) == pytest.approx(1.0)

    def test_no_comparable_pairs(self):
        with pytest.raises(ValueError):
            c_index(outcome([1, 2], [0, 0]), [1, 2])


class TestCalibrationSlope:
    def test_self_calibration(self, rng):
        d = random_dataset(rng, n=100, p=3)
        lp = fit_cox(d).linear_predictor(d.x)
        assert calibration_slope(d, lp) == pytest.approx(1.0, abs=1e-6)

    @given(st.floats(0.2, 5.0) | st.floats(-5.0, -0.2))
    def test_scale_equivariance(self, a):
        d = random_dataset(np.random.default_rng(5), n=80, p=2)
        lp = d.x @ np.array([0.8, -0.4])
        assert calibration_slope(d, a * lp) == pytest.approx(calibration_slope(d, lp) / a, rel=1e-6)

    def test_constant_lp_rejected(self, rng):
        d = random_dataset(rng, n=20)
        with pytest.raises(ValueError):
            calibration_slope(d, np.ones(20))

    def test_noise_lp_slope_near_zero(self):
        slopes = []
        for rep in range(100):
            rng = np.random.default_rng(rep)
            d = random_dataset(rng, n=500)
            slopes.append(calibration_slope(d, rng.standard_normal(500)))
        assert abs(np.mean(slopes)) < 0.1


class TestBrier:
    def test_perfect_prediction(self):
        d = outcome([5, 6, 7], [0, 0, 0])
        assert brier_score(d, lambda t: np.ones((3, len(t))), 2.0) == 0.0

    def test_half_predictor(self):
        d = outcome([1, 2, 3, 4], [1, 1, 1, 1])
        assert brier_score(d, lambda t: np.full((4, len(t)), 0.5), 2.5) == pytest.approx(0.25)

    def test_hand_built_with_censoring(self):
        # subjects: event at 1, censored at 2, event at 3; evaluate at t = 2.5
        d = outcome([1, 2, 3], [1, 0, 1])
        s = np.array([0.2, 0.6, 0.7])
        # G is 1 before 2 and 1/2 from 2 onward: G(1-) = 1, G(2.5) = 1/2
        expected = (0.2**2 / 1.0 + (1 - 0.7) ** 2 / 0.5) / 3
        got = brier_score(d, lambda t: np.tile(s[:, None], (1, len(t))), 2.5)
        assert got == pytest.approx(expected, abs=1e-12)

    @given(st.integers(0, 10_000), st.floats(0.1, 2.0))
    def test_no_censoring_is_plain_mse(self, seed, t):
        rng = np.random.default_rng(seed)
        times = rng.exponential(1, 15) + 0.01
        d = outcome(times, np.ones(15))
        s = rng.random(15)
        expected = np.mean(((times > t).astype(float) - s) ** 2)
        assert brier_score(d, lambda q: np.tile(s[:, None], (1, len(q))), t) == pytest.approx(expected)

    def test_zero_censoring_survival_rejected(self):
        d = outcome([1, 2], [1, 0])
        with pytest.raises(ValueError):
            brier_score(d, lambda t: np.ones((2, len(t))), 3.0)


class TestIntegratedBrier:
    def test_constant_integrand(self):
        d = outcome([1, 2, 3, 4], [1, 1, 1, 1])
        assert integrated_brier_score(d, lambda t: np.full((4, len(t)), 0.5)) == pytest.approx(0.25)

    def test_oracle_predictor_no_censoring(self, rng):
        times = rng.exponential(1, 200)
        d = outcome(times, np.ones(200))
        oracle = lambda t: (times[:, None] > np.asarray(t)[None, :]).astype(float)
        assert integrated_brier_score(d, oracle) < 0.05

    def test_default_horizon_and_truncation(self):
        d = outcome([1, 2, 3, 4], [1, 1, 0, 1])
        f = lambda t: np.full((4, len(t)), 0.5)
        assert np.isfinite(integrated_brier_score(d, f))
        with pytest.warns(HorizonWarning):
            integrated_brier_score(outcome([1, 2, 3], [1, 0, 0]), lambda t: np.full((3, len(t)), 0.5), tau=5.0)

    def test_no_events(self):
        with pytest.raises(ValueError):
            integrated_brier_score(outcome([1, 2], [0, 0]), lambda t: np.ones((2, len(t))))


class TestMcc:
    def test_examples(self):
        truth = np.array([1, 1, 0, 0], bool)
        assert mcc(truth, truth) == 1.0
        assert mcc(~truth, truth) == -1.0
        assert mcc(np.array([1, 0, 1, 0], bool), truth) == 0.0

    def test_zero_denominator(self):
        assert mcc(np.zeros(4, bool), np.array([1, 0, 1, 0], bool)) == 0.0

    @given(st.lists(st.tuples(st.booleans(), st.booleans()), min_size=1, max_size=12))
    def test_symmetry_and_complement(self, pairs):
        s = np.array([p[0] for p in pairs])
        t = np.array([p[1] for p in pairs])
        assert mcc(s, t) == pytest.approx(mcc(t, s))
        assert mcc(s, t) == pytest.approx(mcc(~s, ~t))
        assert -1 - 1e-12 <= mcc(s, t) <= 1 + 1e-12


class TestRiskStratify:
    def test_tertiles(self):
        assert list(risk_stratify(np.arange(1, 10), 3)) == [0, 0, 0, 1, 1, 1, 2, 2, 2]

    def test_two_groups(self):
        assert list(risk_stratify([1.0, 2.0], 2)) == [0, 1]

    def test_ties_go_low(self):
        assert list(risk_stratify([1, 1, 1, 2, 2, 3], 2)) == [0, 0, 0, 1, 1, 1]

    @given(st.lists(st.integers(-1000, 1000), min_size=3, max_size=40, unique=True), st.integers(2, 3))
    def test_balance_and_monotone_invariance(self, values, k):
        lp = np.array(values) / 7.0
        g = risk_stratify(lp, k)
        counts = np.bincount(g, minlength=k)
        assert counts.max() - counts.min() <= 1
        assert np.array_equal(g, risk_stratify(np.exp(lp / 50) * 3 - 1, k))

    def test_errors(self):
        with pytest.raises(ValueError):
            risk_stratify([1, 1, 1], 2)
        with pytest.raises(ValueError):
            risk_stratify([1.0], 2)


def test_report_defaults_to_nan():
    assert all(np.isnan(v) for v in MetricReport().as_dict().values())
