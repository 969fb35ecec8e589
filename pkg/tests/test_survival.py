import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from twophasecox.survival import (Dataset, SurvivalRecord, breslow_baseline, censoring_km,
                                  kaplan_meier, log_rank_test, pairwise_log_rank, holm_adjust,
                                  read_survival_csv, write_survival_csv, average_baselines)


def ds(times, events, x=None):
    n = len(times)
    return Dataset(np.array(times, float), np.array(events, bool),
                   np.empty((n, 0)) if x is None else np.asarray(x, float))


survival_data = st.integers(2, 25).flatmap(lambda n: st.tuples(
    st.lists(st.integers(1, 8), min_size=n, max_size=n),
    st.lists(st.booleans(), min_size=n, max_size=n)))


class TestContainers:
    def test_record_rejects_nonpositive_time(self):
        with pytest.raises(ValueError):
            SurvivalRecord(0.0, True, ())

    def test_records_round_trip(self):
        d = ds([1, 2], [True, False], [[0.5], [1.5]])
        back = Dataset.from_records(d.records(), d.columns)
        assert np.array_equal(back.x, d.x) and np.array_equal(back.event, d.event)

    def test_mixed_dimensions_rejected(self):
        with pytest.raises(ValueError):
            Dataset.from_records([SurvivalRecord(1.0, True, (1.0,)), SurvivalRecord(2.0, True, ())])

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError):
            Dataset(np.ones(3), np.ones(2, bool), np.ones((3, 1)))

    def test_sorted_puts_events_before_censorings_at_ties(self):
        d = ds([2, 2, 1], [False, True, True])
        t, e, _ = d.sorted
        assert list(t) == [1, 2, 2] and list(e) == [True, True, False]


class TestKaplanMeier:
    def test_all_events(self):
        km = kaplan_meier(ds([1, 2, 3], [1, 1, 1]))
        assert np.allclose(km.survival, [2 / 3, 1 / 3, 0])

    def test_all_censored(self):
        km = kaplan_meier(ds([1, 2], [0, 0]))
        assert km.times.size == 0
        assert np.all(km([0.5, 1, 5]) == 1.0)

    def test_mixed_hand_computed(self):
        # S(1) = 2/3; at t=3 the risk set is {3} with one event, so S(3) = 2/3 * 0 = 0
        km = kaplan_meier(ds([1, 2, 3], [1, 0, 1]))
        assert km(1) == pytest.approx(2 / 3)
        assert km(2.5) == pytest.approx(2 / 3)
        assert km(3) == pytest.approx(0.0)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            kaplan_meier(ds([], []))

    def test_greenwood_and_interval(self):
        km = kaplan_meier(ds([1, 2, 3, 4, 5, 6], [1, 1, 0, 1, 0, 1]))
        # Greenwood at t=1: S^2 * d/(n(n-d)) = (5/6)^2 / 30
        assert km.variance[0] == pytest.approx((5 / 6) ** 2 / 30)
        lo, hi = km.confidence_interval([1.5, 4.5])
        s = km([1.5, 4.5])
        assert np.all((0 <= lo) & (lo <= s) & (s <= hi) & (hi <= 1))

    def test_query_beyond_last_time_holds_last_value(self):
        km = kaplan_meier(ds([1, 2, 3], [1, 0, 0]))
        assert km(100) == km(1)

    @given(survival_data)
    def test_monotone_and_permutation_invariant(self, data):
        times, events = data
        km = kaplan_meier(ds(times, events))
        assert np.all(np.diff(km.survival) <= 1e-15)
        assert np.all((km.survival >= 0) & (km.survival <= 1))
        assert np.all(km.n_events > 0)
        perm = np.random.default_rng(len(times)).permutation(len(times))
        km2 = kaplan_meier(ds(np.array(times)[perm], np.array(events)[perm]))
        assert np.array_equal(km.survival, km2.survival)


class TestCensoringKM:
    def test_no_censoring_is_identically_one(self):
        g = censoring_km(ds([1, 2, 3], [1, 1, 1]))
        assert np.all(g([0, 1, 2, 3, 10]) == 1.0)

    def test_all_censored(self):
        g = censoring_km(ds([1, 2], [0, 0]))
        assert g(1) == pytest.approx(0.5) and g(2) == 0.0

    @given(survival_data)
    def test_equals_flag_inverted_km(self, data):
        times, events = data
        g = censoring_km(ds(times, events))
        km = kaplan_meier(ds(times, [not e for e in events]))
        assert np.array_equal(g.times, km.times) and np.array_equal(g.survival, km.survival)


class TestBreslow:
    def test_reduces_to_nelson_aalen(self):
        b = breslow_baseline(ds([1, 2, 3, 4], [1, 0, 0, 0]), np.zeros(4))
        assert b.cumhaz(1) == pytest.approx(1 / 4)

    def test_hand_computed(self):
        # lp = (log 2, 0, 0): risk-set sums 4 at t=1 and 1 at t=2
        b = breslow_baseline(ds([1, 2, 3], [1, 1, 0]), [math.log(2), 0, 0])
        assert b.cumhaz(1) == pytest.approx(0.25)
        assert b.cumhaz(2) == pytest.approx(0.25 + 1 / 2)

    def test_tied_events_share_the_denominator(self):
        b = breslow_baseline(ds([1, 1, 2], [1, 1, 1]), np.zeros(3))
        assert b.cumhaz(1) == pytest.approx(2 / 3)

    def test_no_events_rejected(self):
        with pytest.raises(ValueError):
            breslow_baseline(ds([1, 2], [0, 0]), np.zeros(2))

    @given(survival_data.filter(lambda d: any(d[1])), st.floats(-3, 3))
    def test_shift_scales_hazard(self, data, c):
        times, events = data
        d = ds(times, events)
        lp = np.random.default_rng(1).standard_normal(d.n)
        b0 = breslow_baseline(d, lp)
        b1 = breslow_baseline(d, lp + c)
        assert np.allclose(b1.cumulative_hazard, np.exp(-c) * b0.cumulative_hazard)
        assert np.all(np.diff(b0.cumulative_hazard) >= 0) and b0.cumulative_hazard[0] >= 0
        s = b0.survival(np.arange(10.0), lp)
        assert np.all((s > 0) & (s <= 1))

    def test_average_of_identical_baselines(self):
        b = breslow_baseline(ds([1, 2, 3], [1, 1, 0]), np.zeros(3))
        avg = average_baselines([b, b])
        assert np.allclose(avg.cumhaz([0.5, 1, 2, 5]), b.cumhaz([0.5, 1, 2, 5]))


class TestLogRank:
    def test_identical_groups(self):
        g = ds([1, 2, 3, 4], [1, 0, 1, 1])
        res = log_rank_test([g, g])
        assert res.statistic == pytest.approx(0.0, abs=1e-12) and res.p_value == pytest.approx(1.0)

    def test_separated_groups(self):
        early = ds(np.arange(1, 11), np.ones(10))
        late = ds(np.arange(11, 21), np.ones(10))
        assert log_rank_test([early, late]).p_value < 0.05

    def test_two_group_statistic_by_hand(self):
        a, b = ds([1, 3], [1, 1]), ds([2, 4], [1, 0])
        # hand 2x2 tables at t=1,2,3 (t=4 is censored)
        o_e = (1 - 2 / 4) + (0 - 1 / 3) + (1 - 1 / 2)
        var = (2 * 2 * 1 * 3) / (16 * 3) + (1 * 2 * 1 * 2) / (9 * 2) + (1 * 1 * 1 * 1) / (4 * 1)
        assert log_rank_test([a, b]).statistic == pytest.approx(o_e**2 / var)

    def test_relabel_invariance(self, rng):
        groups = [ds(rng.exponential(1, 8) + 0.01, rng.random(8) < 0.7) for _ in range(3)]
        s1 = log_rank_test(groups).statistic
        s2 = log_rank_test(groups[::-1]).statistic
        assert s1 == pytest.approx(s2)

    def test_pairwise_identical_pair(self):
        g = ds([1, 2, 3, 4], [1, 1, 0, 1])
        other = ds([5, 6, 7, 8], [1, 1, 1, 1])
        res = pairwise_log_rank([g, g, other])
        assert res[(0, 1)][0] == pytest.approx(1.0)

    def test_errors(self):
        g = ds([1, 2], [1, 0])
        with pytest.raises(ValueError):
            log_rank_test([g])
        with pytest.raises(ValueError):
            log_rank_test([ds([1], [0]), ds([2], [0])])

    def test_holm(self):
        assert np.allclose(holm_adjust([0.01, 0.04, 0.03]), [0.03, 0.06, 0.06])


class TestCsv:
    def test_round_trip_with_missing(self, tmp_path):
        d = Dataset(np.array([1.5, 2.25]), np.array([True, False]),
                    np.array([[0.1, np.nan], [1 / 3, 1.0]]), ("a", "v"))
        path = tmp_path / "d.csv"
        write_survival_csv(path, d)
        back = read_survival_csv(path)
        assert back.columns == ("a", "v")
        assert np.array_equal(back.time, d.time)
        assert np.array_equal(back.x, d.x, equal_nan=True)

    def test_blank_and_na_cells(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text("time,event,u,v\n1,1,0.5,\n2,0,1.5,NA\n")
        d = read_survival_csv(path)
        assert np.isnan(d.x[:, 1]).all()

    def test_bad_event_code(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text("time,event,u\n1,2,0.5\n")
        with pytest.raises(ValueError):
            read_survival_csv(path)
