import numpy as np
import pytest

from curator.datamodel import PerformanceTable
from curator.metrics import (
    average_accuracy,
    forgetting_rate,
    metrics_report,
    read_performance_csv,
    relative_gain,
    skill_upper_bounds,
    zero_baseline_transitions,
)


def table(values, skills=None, upper=None):
    values = np.asarray(values, dtype=float)
    skills = skills or [f"skill{i}" for i in range(values.shape[0])]
    return PerformanceTable(skills=tuple(skills), values=values, upper_bounds=upper)


class TestAverageAccuracy:
    def test_constant_table(self):
        assert average_accuracy(table([[50, 50], [50, 50]]), 1) == 50.0

    def test_symmetric_pair(self):
        assert average_accuracy(table([[40, 0], [60, 0]]), 0) == 50.0

    def test_matches_mean_oracle(self):
        rng = np.random.default_rng(0)
        values = rng.uniform(0, 100, size=(7, 4))
        t = 2
        assert average_accuracy(table(values), t) == pytest.approx(float(np.mean(values[:, t])))

    def test_invariant_under_skill_permutation(self):
        rng = np.random.default_rng(1)
        values = rng.uniform(0, 100, size=(6, 3))
        perm = rng.permutation(6)
        assert average_accuracy(table(values), 1) == pytest.approx(average_accuracy(table(values[perm]), 1))

    def test_out_of_range_rejected(self):
        with pytest.raises(ValueError):
            average_accuracy(table([[1.0]]), 1)


class TestRelativeGain:
    def test_values_at_bounds_give_100(self):
        t = table([[50, 50], [80, 80]], upper=[50, 80])
        assert relative_gain(t, 1) == pytest.approx(100.0)

    def test_hand_evaluated_example(self):
        # (50/50 + 60/50)/2 * 100 = 110
        t = table([[50], [60]], upper=[50, 50])
        assert relative_gain(t, 0) == pytest.approx(110.0)

    def test_zero_skill_contributes_zero(self):
        t = table([[0], [80]], upper=[40, 80])
        assert relative_gain(t, 0) == pytest.approx(50.0)

    def test_scaling_value_and_bound_together_is_invariant(self):
        values = np.asarray([[30.0], [60.0]])
        bounds = np.asarray([40.0, 80.0])
        base = relative_gain(table(values), 0, bounds)
        values[0, 0] *= 2.5
        bounds = bounds.copy()
        bounds[0] *= 2.5
        assert relative_gain(table(values), 0, bounds) == pytest.approx(base)

    def test_missing_bounds_rejected(self):
        with pytest.raises(ValueError, match="upper"):
            relative_gain(table([[10.0]]), 0)

    def test_non_positive_bound_rejected(self):
        with pytest.raises(ValueError):
            relative_gain(table([[10.0]]), 0, [0.0])


class TestForgettingRate:
    def test_monotone_table_has_zero_forgetting(self):
        t = table([[10, 20, 30], [5, 5, 50]])
        assert forgetting_rate(t) == 0.0

    def test_single_drop_hand_evaluated(self):
        # one skill, one transition 50 -> 40: 20%
        assert forgetting_rate(table([[50, 40]])) == pytest.approx(20.0)

    def test_two_skills_two_steps_hand_evaluated(self):
        # drops (50->40, flat) and (flat, 80->60): (20% + 25%) / (2*2) = 11.25
        t = table([[50, 40, 40], [80, 80, 60]])
        assert forgetting_rate(t) == pytest.approx(11.25)

    def test_always_non_negative_and_zero_iff_no_drop(self):
        rng = np.random.default_rng(2)
        for _ in range(50):
            values = rng.uniform(1, 100, size=(4, 5))
            rate = forgetting_rate(table(values))
            assert rate >= 0.0
            has_drop = np.any(np.diff(values, axis=1) < 0)
            assert (rate > 0) == bool(has_drop)

    def test_zero_baseline_contributes_zero_and_flags(self):
        t = table([[0, 10, 5]])
        assert forgetting_rate(t) == pytest.approx(50.0 / 2)  # only the 10->5 drop counts
        assert zero_baseline_transitions(t) == [("skill0", 1)]


class TestCsvAndReport:
    def test_round_trip_csv(self, tmp_path):
        path = tmp_path / "perf.csv"
        path.write_text("skill,t0,t1\nvqa,50,60\ngrounding,70,65\n")
        t = read_performance_csv(path)
        assert t.skills == ("vqa", "grounding")
        assert t.values.shape == (2, 2)
        assert t.values[1, 1] == 65.0

    def test_malformed_csv_rejected(self, tmp_path):
        path = tmp_path / "perf.csv"
        path.write_text("skill,t0\nvqa,50,60\n")
        with pytest.raises(ValueError, match="cells"):
            read_performance_csv(path)

    def test_upper_bounds_helper_takes_per_skill_maxima(self):
        t = table([[10, 30, 20], [5, 5, 50]])
        assert np.array_equal(skill_upper_bounds(t), [30, 50])

    def test_report_consistent_with_direct_calls(self):
        t = table([[50, 40], [60, 70]])
        upper = skill_upper_bounds(t)
        rep = metrics_report(t, upper)
        assert rep["average_accuracy"] == pytest.approx(average_accuracy(t, 1))
        assert rep["relative_gain"] == pytest.approx(relative_gain(t, 1, upper))
        assert rep["forgetting_rate"] == pytest.approx(forgetting_rate(t))
