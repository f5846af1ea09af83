"""Evaluation metrics as exact rationals, run summaries and uplift comparison."""
from collections.abc import Mapping
from fractions import Fraction
from typing import Literal

from pydantic import model_validator

from lib.environment import environment_kind
from lib.errors import PreconditionError, ReportError
from lib.models import FrozenModel

# --- Configuration ---
REPORT_SCHEMA = "critic-gate/report@1"
SUMMARY_SCHEMA = "critic-gate/summary@1"
PASS_AT_1 = "pass@1"
SCORE = "score"
METRIC_FOR_KIND = {"retail": PASS_AT_1, "travel": SCORE}
BINARY = {Fraction(0), Fraction(1)}
TRAVEL_COMPONENTS = {Fraction(0), Fraction(4, 5), Fraction(1)}

Metric = Literal["pass@1", "score"]


def as_fraction(value):
    if isinstance(value, (int, Fraction)):
        return Fraction(value)
    return Fraction(str(value))


def _flatten(values):
    if isinstance(values, Mapping):
        values = values.values()
    for value in values:
        if isinstance(value, (list, tuple, Mapping)):
            yield from _flatten(value)
        else:
            yield as_fraction(value)


def _mean(values, allowed, name):
    flat = list(_flatten(values))
    if not flat:
        raise PreconditionError(f"{name} needs at least one value")
    unexpected = sorted({v for v in flat if v not in allowed})
    if unexpected:
        raise PreconditionError(f"{name} got values outside {sorted(allowed)}: {unexpected[:3]}")
    return sum(flat, Fraction(0)) / len(flat)


def pass_at_1(rewards):
    """Mean of binary per-task x per-run rewards."""
    return _mean(rewards, BINARY, "pass@1")


def travel_score(rewards):
    """Mean of per-aspect x per-run components in {0, 0.8, 1}."""
    return _mean(rewards, TRAVEL_COMPONENTS, "travel score")


class RunSummary(FrozenModel):
    """Per-task rewards and supervision counts of one method, ordered by seed."""

    schema_version: Literal["critic-gate/summary@1"] = SUMMARY_SCHEMA
    method: str
    metric: Metric
    rewards: dict[str, tuple[float, ...]]
    components: dict[str, tuple[tuple[float, ...], ...]]
    interventions: dict[str, tuple[int, ...]]
    revisions: dict[str, tuple[int, ...]]
    aborted: int = 0

    @model_validator(mode="after")
    def _aligned(self):
        tasks = set(self.rewards)
        for name in ("components", "interventions", "revisions"):
            table = getattr(self, name)
            if set(table) != tasks or any(len(table[t]) != len(self.rewards[t]) for t in tasks):
                raise ValueError(f"{name} must have one entry per task run")
        return self

    @property
    def aggregate(self):
        if self.metric == PASS_AT_1:
            return pass_at_1(self.rewards)
        return travel_score(self.components)

    @property
    def episodes(self):
        return sum(len(runs) for runs in self.rewards.values())

    @property
    def total_interventions(self):
        return sum(sum(runs) for runs in self.interventions.values())

    @property
    def total_revisions(self):
        return sum(sum(runs) for runs in self.revisions.values())


def summarize_runs(method, trajectories):
    """RunSummary of terminated trajectories; the metric follows the environment kind."""
    if not trajectories:
        raise ReportError("no trajectories to summarize")
    kinds = {environment_kind(t.environment_id) for t in trajectories}
    if len(kinds) != 1:
        raise ReportError(f"trajectories mix environment kinds: {sorted(kinds)}")
    rewards, components, interventions, revisions = {}, {}, {}, {}
    for trajectory in sorted(trajectories, key=lambda t: (t.task_id, t.seed)):
        if trajectory.reward is None:
            raise ReportError(f"trajectory {trajectory.task_id}/{trajectory.seed} has no reward")
        task_id = trajectory.task_id
        rewards.setdefault(task_id, []).append(trajectory.reward.value)
        components.setdefault(task_id, []).append(tuple(trajectory.reward.breakdown.values()))
        interventions.setdefault(task_id, []).append(trajectory.intervention_count)
        revisions.setdefault(task_id, []).append(trajectory.revision_count)
    return RunSummary(
        method=method,
        metric=METRIC_FOR_KIND[kinds.pop()],
        rewards={t: tuple(v) for t, v in rewards.items()},
        components={t: tuple(v) for t, v in components.items()},
        interventions={t: tuple(v) for t, v in interventions.items()},
        revisions={t: tuple(v) for t, v in revisions.items()},
        aborted=sum(1 for t in trajectories if t.termination == "aborted"),
    )


def task_mean(summary, task_id):
    """A task's mean over runs under the summary's metric."""
    if summary.metric == PASS_AT_1:
        return pass_at_1(summary.rewards[task_id])
    return travel_score(summary.components[task_id])


class MethodTotals(FrozenModel):
    method: str
    aggregate: float
    aggregate_exact: str
    episodes: int
    interventions: int
    revisions: int


class TaskDelta(FrozenModel):
    task_id: str
    baseline: float
    treated: float
    delta: float
    baseline_interventions: int
    treated_interventions: int
    baseline_revisions: int
    treated_revisions: int


class UpliftReport(FrozenModel):
    schema_version: Literal["critic-gate/report@1"] = REPORT_SCHEMA
    metric: Metric
    baseline: MethodTotals
    treated: MethodTotals
    delta: float
    delta_exact: str
    tasks: tuple[TaskDelta, ...]


def _totals(summary):
    aggregate = summary.aggregate
    return MethodTotals(
        method=summary.method, aggregate=float(aggregate), aggregate_exact=str(aggregate),
        episodes=summary.episodes, interventions=summary.total_interventions, revisions=summary.total_revisions,
    )


def uplift_report(baseline, treated):
    """Per-task and aggregate deltas between two summaries over the same tasks and run counts."""
    if baseline.metric != treated.metric:
        raise ReportError(f"cannot compare {baseline.metric} with {treated.metric}")
    if set(baseline.rewards) != set(treated.rewards):
        missing = sorted(set(baseline.rewards) ^ set(treated.rewards))
        raise ReportError(f"summaries cover different tasks: {missing[:5]}")
    for task_id in baseline.rewards:
        if len(baseline.rewards[task_id]) != len(treated.rewards[task_id]):
            raise ReportError(f"task {task_id} has different run counts")

    rows = []
    for task_id in sorted(baseline.rewards):
        before, after = task_mean(baseline, task_id), task_mean(treated, task_id)
        rows.append(TaskDelta(
            task_id=task_id, baseline=float(before), treated=float(after), delta=float(after - before),
            baseline_interventions=sum(baseline.interventions[task_id]),
            treated_interventions=sum(treated.interventions[task_id]),
            baseline_revisions=sum(baseline.revisions[task_id]),
            treated_revisions=sum(treated.revisions[task_id]),
        ))
    delta = treated.aggregate - baseline.aggregate
    return UpliftReport(
        metric=baseline.metric, baseline=_totals(baseline), treated=_totals(treated),
        delta=float(delta), delta_exact=str(delta), tasks=tuple(rows),
    )
