import random
from fractions import Fraction

import pytest

from lib.errors import PreconditionError, ReportError
from lib.metrics import (
    as_fraction,
    pass_at_1,
    summarize_runs,
    task_mean,
    travel_score,
    uplift_report,
)
from lib.models import (
    ActionProposal,
    CriticVerdict,
    InterventionRecord,
    Observation,
    RewardValue,
    append_step,
    finish,
    start_trajectory,
)


def finished(task_id, seed, value, environment_id="retail", breakdown=None, revised=False, termination="environment"):
    trajectory = start_trajectory(task_id, environment_id, seed)
    if revised:
        action = ActionProposal.message("hi")
        verdict = CriticVerdict(decision="revise", guidance="g", raw_output="[REVISE] g")
        trajectory = append_step(
            trajectory, Observation(turn_index=1, source="user", content="x"),
            InterventionRecord(turn_index=1, gate=1, proposal=action, verdict=verdict, final_action=action),
        )
    reward = RewardValue(value=value, breakdown=breakdown or {"state": value})
    return finish(trajectory, reward, termination)


def test_as_fraction_uses_decimal_text():
    assert as_fraction(0.8) == Fraction(4, 5)
    assert as_fraction(1) == Fraction(1)
    assert as_fraction(Fraction(2, 3)) == Fraction(2, 3)


class TestPassAt1:
    def test_example(self):
        assert pass_at_1([[1, 0, 1], [0, 0, 1]]) == Fraction(1, 2)

    def test_mapping_of_runs(self):
        assert pass_at_1({"a": (1.0, 1.0), "b": (0.0, 1.0)}) == Fraction(3, 4)

    def test_randomized_against_direct_count(self):
        rng = random.Random(7)
        for _ in range(1000):
            rows = [[rng.randint(0, 1) for _ in range(rng.randint(1, 6))] for _ in range(rng.randint(1, 8))]
            total = sum(len(row) for row in rows)
            assert pass_at_1(rows) == Fraction(sum(map(sum, rows)), total)

    def test_non_binary_reward(self):
        with pytest.raises(PreconditionError):
            pass_at_1([[1, 0.5]])

    def test_empty(self):
        with pytest.raises(PreconditionError):
            pass_at_1([])


class TestTravelScore:
    def test_example(self):
        assert travel_score([[1.0, 0.8], [0.0, 1.0]]) == Fraction(7, 10)

    def test_randomized_against_exact_sum(self):
        rng = random.Random(11)
        values = (0.0, 0.8, 1.0)
        for _ in range(1000):
            components = [tuple(rng.choice(values) for _ in range(2)) for _ in range(rng.randint(1, 10))]
            expected = sum((Fraction(str(v)) for run in components for v in run), Fraction(0)) / (2 * len(components))
            assert travel_score(components) == expected

    def test_component_outside_allowed_set(self):
        with pytest.raises(PreconditionError):
            travel_score([[0.9, 1.0]])


class TestSummaries:
    def test_retail_summary(self):
        trajectories = [
            finished("a", 2, 1.0, revised=True), finished("a", 1, 0.0),
            finished("b", 1, 1.0), finished("b", 2, 1.0),
        ]
        summary = summarize_runs("actor_critic", trajectories)
        assert summary.metric == "pass@1"
        assert summary.rewards == {"a": (0.0, 1.0), "b": (1.0, 1.0)}
        assert summary.revisions["a"] == (0, 1)
        assert summary.aggregate == Fraction(3, 4)
        assert (summary.episodes, summary.total_interventions, summary.total_revisions) == (4, 1, 1)

    def test_travel_summary_averages_components(self):
        trajectories = [
            finished("t", 1, 0.9, "travel-22", {"flight": 0.8, "apartment": 1.0}),
            finished("t", 2, 0.5, "travel-22", {"flight": 0.0, "apartment": 1.0}),
        ]
        summary = summarize_runs("actor_only", trajectories)
        assert summary.metric == "score"
        assert summary.aggregate == Fraction(7, 10)
        assert task_mean(summary, "t") == Fraction(7, 10)

    def test_aborted_count(self):
        summary = summarize_runs("m", [finished("a", 1, 0.0, breakdown={"aborted": 0.0}, termination="aborted")])
        assert summary.aborted == 1

    def test_mixed_environment_kinds(self):
        with pytest.raises(ReportError):
            summarize_runs("m", [finished("a", 1, 1.0), finished("t", 1, 1.0, "travel-22", {"flight": 1.0})])

    def test_empty(self):
        with pytest.raises(ReportError):
            summarize_runs("m", [])

    def test_unterminated_trajectory(self):
        with pytest.raises(ReportError):
            summarize_runs("m", [start_trajectory("a", "retail", 1)])


class TestUplift:
    def baseline(self):
        return summarize_runs("actor_only", [
            finished("a", 1, 0.0), finished("a", 2, 0.0), finished("a", 3, 1.0),
            finished("b", 1, 1.0), finished("b", 2, 1.0), finished("b", 3, 1.0),
        ])

    def treated(self):
        return summarize_runs("actor_critic", [
            finished("a", 1, 1.0, revised=True), finished("a", 2, 1.0, revised=True), finished("a", 3, 1.0),
            finished("b", 1, 1.0), finished("b", 2, 1.0), finished("b", 3, 1.0),
        ])

    def test_deltas_are_exact(self):
        report = uplift_report(self.baseline(), self.treated())
        assert report.baseline.aggregate_exact == "2/3"
        assert report.treated.aggregate_exact == "1"
        assert report.delta_exact == "1/3"
        task_a = report.tasks[0]
        assert task_a.task_id == "a"
        assert task_a.delta == float(Fraction(2, 3))
        assert task_a.treated_revisions == 2
        assert report.tasks[1].delta == 0.0

    def test_different_tasks(self):
        other = summarize_runs("x", [finished("c", 1, 1.0)])
        with pytest.raises(ReportError):
            uplift_report(self.baseline(), other)

    def test_different_run_counts(self):
        shorter = summarize_runs("x", [finished("a", 1, 1.0), finished("b", 1, 1.0)])
        with pytest.raises(ReportError):
            uplift_report(self.baseline(), shorter)

    def test_different_metrics(self):
        travel = summarize_runs("x", [finished("a", 1, 1.0, "travel-22", {"flight": 1.0})])
        with pytest.raises(ReportError):
            uplift_report(self.baseline(), travel)
