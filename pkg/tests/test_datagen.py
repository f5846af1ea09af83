import json

import pytest
from pydantic import ValidationError

from lib.backends import BoundOracleCritic, OracleCritic, ScriptedActor, ScriptedTextBackend
from lib.datagen import (
    FilterConfig,
    HardTaskSet,
    SupervisionSample,
    collect_ac_trajectories,
    emit_dataset,
    extract_samples,
    filter_hard_tasks,
    infer_task_spec,
    read_dataset,
    recount_dataset,
    retain,
    retain_strict,
    run_pipeline,
    stats_path_for,
)
from lib.environment import make_environment
from lib.errors import DatasetError, LogParseError, PreconditionError, TaskSpecParseError
from lib.models import (
    ActionProposal,
    CriticVerdict,
    InterventionRecord,
    Observation,
    RewardValue,
    append_step,
    finish,
    read_trajectories,
    start_trajectory,
)
from lib.orchestrator import EpisodeConfig, run_episode
from lib.suites import Suite


class SeedDependentActor:
    """Errs at every decision turn on the listed seeds of each task, and is correct otherwise."""

    name = "seed-dependent"
    version = "1"

    def __init__(self, suite, failing_seeds):
        self.failing_seeds = failing_seeds
        self.clean = ScriptedActor(suite.actor_programs())
        self.faulty = ScriptedActor(suite.actor_programs(error_rate=1.0, error_modes=("violate_constraint",)))

    def complete(self, request):
        actor = self.faulty if request.seed in self.failing_seeds.get(request.task_id, ()) else self.clean
        return actor.complete(request)


class RecordingOracle(OracleCritic):
    def __init__(self):
        super().__init__()
        self.prompts = []

    def bind(self, env):
        return RecordingBoundOracle(self.program, env, self.prompts)


class RecordingBoundOracle(BoundOracleCritic):
    def __init__(self, program, env, prompts):
        super().__init__(program, env)
        self.prompts = prompts

    def complete(self, request):
        self.prompts.append(f"{request.system_prompt}\n\n{request.messages[0].content}")
        return super().complete(request)


CFG = FilterConfig(k=3, psi=2)
FAILING = {"retail-cancel": {1, 2}, "retail-modify": {1}}


def sample(task_id="t", seed=1, turn=1, label="positive", environment_id="retail"):
    completion = "[REVISE] use the card" if label == "positive" else "[APPROVE] fine"
    return SupervisionSample(task_id=task_id, environment_id=environment_id, seed=seed, turn_index=turn,
                             label=label, prompt="prompt", completion=completion)


def revised_trajectory(task_id, seed, reward):
    action = ActionProposal.message("hi")
    verdict = CriticVerdict(decision="revise", guidance="say hello", raw_output="[REVISE] say hello")
    trajectory = append_step(
        start_trajectory(task_id, "retail", seed),
        Observation(turn_index=1, source="user", content="hello"),
        InterventionRecord(turn_index=1, gate=1, proposal=action, verdict=verdict, final_action=action),
    )
    return finish(trajectory, RewardValue(value=reward, breakdown={"state": reward}), "environment")


class TestFilter:
    def test_psi_cannot_exceed_k(self):
        with pytest.raises(ValidationError):
            FilterConfig(k=2, psi=3)

    def test_tasks_failing_at_least_psi_times_are_hard(self, retail_suite):
        actor = SeedDependentActor(retail_suite, FAILING)
        outcome, trajectories = filter_hard_tasks(retail_suite.tasks, actor, retail_suite.make_environment, CFG)
        assert outcome.failures == {"retail-cancel": 2, "retail-modify": 1}
        assert [task.task_id for task in outcome.hard] == ["retail-cancel"]
        assert len(trajectories) == 6
        assert all(t.intervention_count == 0 for t in trajectories)

    def test_collection_needs_a_critic(self, retail_suite):
        with pytest.raises(PreconditionError):
            collect_ac_trajectories(retail_suite.tasks, None, None, retail_suite.make_environment, CFG)


class TestRetention:
    def test_retain_needs_success_and_a_revision(self):
        assert retain(revised_trajectory("a", 1, 1.0))
        assert not retain(revised_trajectory("a", 1, 0.0))

    def test_retain_needs_a_terminated_trajectory(self):
        with pytest.raises(PreconditionError):
            retain(start_trajectory("a", "retail", 1))

    def test_strict_mode_drops_partially_solved_tasks(self):
        trajectories = [
            revised_trajectory("a", 1, 1.0), revised_trajectory("a", 2, 0.0),
            revised_trajectory("b", 1, 1.0), revised_trajectory("b", 2, 1.0),
        ]
        assert [(t.task_id, t.seed) for t in retain_strict(trajectories)] == [("b", 1), ("b", 2)]
        assert len([t for t in trajectories if retain(t)]) == 3


class TestExtraction:
    def test_samples_reuse_the_exact_critic_prompts(self, travel_fixture):
        suite = Suite([travel_fixture])
        actor = ScriptedActor(suite.actor_programs(error_schedules={"travel-demo": {4: "suboptimal_choice"}}))
        critic = RecordingOracle()
        cfg = EpisodeConfig(critic_enabled=True, gate_policy="final_recommendation",
                            horizon=travel_fixture.task.horizon, seed=1)
        result = run_episode(travel_fixture.task, actor, critic, make_environment(travel_fixture), cfg)
        samples = extract_samples(result.trajectory, make_environment(travel_fixture))
        assert [s.turn_index for s in samples] == [4, 8]
        assert [s.label for s in samples] == ["positive", "negative"]
        assert [s.prompt for s in samples] == critic.prompts
        assert samples[0].completion == result.trajectory.records[3].verdict.raw_output

    def test_unretained_trajectory_is_rejected(self, retail_fixture):
        with pytest.raises(PreconditionError):
            extract_samples(revised_trajectory("retail-cancel", 1, 0.0), make_environment(retail_fixture))

    def test_label_must_match_completion(self):
        with pytest.raises(ValidationError):
            SupervisionSample(task_id="t", environment_id="retail", seed=1, turn_index=1, label="negative",
                              prompt="p", completion="[REVISE] no")


class TestDataset:
    def test_emit_sorts_and_counts(self, tmp_path):
        rows = [sample("b", 1, 2), sample("a", 2, 1, "negative"), sample("a", 1, 3), sample("c", 1, 1, environment_id="travel-22")]
        path = tmp_path / "out" / "dataset.jsonl"
        stats = emit_dataset(rows, path)
        assert [(s.task_id, s.seed) for s in read_dataset(path)] == [("a", 1), ("a", 2), ("b", 1), ("c", 1)]
        assert (stats.n_samples, stats.n_positive, stats.n_negative) == (4, 3, 1)
        assert stats.n_trajectories == 4
        assert stats.per_domain["travel-22"].n_samples == 1
        assert recount_dataset(path) == stats
        assert json.loads(stats_path_for(path).read_text(encoding="utf-8"))["n_samples"] == 4

    def test_empty_dataset(self, tmp_path):
        stats = emit_dataset([], tmp_path / "dataset.jsonl")
        assert stats.n_samples == 0
        assert stats.per_domain == {}

    def test_duplicates_are_rejected(self, tmp_path):
        with pytest.raises(DatasetError):
            emit_dataset([sample("a", 1, 1), sample("a", 1, 1, "negative")], tmp_path / "dataset.jsonl")

    def test_corrupt_dataset_line(self, tmp_path):
        path = tmp_path / "dataset.jsonl"
        emit_dataset([sample("a", 1, 1)], path)
        with open(path, "a", encoding="utf-8") as f:
            f.write('{"task_id": "a"}\n')
        with pytest.raises(LogParseError) as excinfo:
            read_dataset(path)
        assert excinfo.value.line_number == 2


class TestPipeline:
    def test_writes_every_stage(self, retail_suite, tmp_path):
        actor = SeedDependentActor(retail_suite, FAILING)
        stats = run_pipeline(retail_suite.tasks, actor, OracleCritic(), retail_suite.make_environment, CFG, tmp_path)
        assert len(read_trajectories(tmp_path / "actor_only.jsonl")) == 6
        hard = HardTaskSet.model_validate_json((tmp_path / "hard_tasks.json").read_text(encoding="utf-8"))
        assert hard.schema_version == "critic-gate/hard-tasks@1"
        assert hard.hard_tasks == ("retail-cancel",)
        collected = read_trajectories(tmp_path / "actor_critic.jsonl")
        assert [(t.seed, t.reward.value, t.revision_count) for t in collected] == [(1, 1.0, 1), (2, 1.0, 1), (3, 1.0, 0)]
        assert (stats.n_trajectories, stats.n_samples, stats.n_positive) == (2, 2, 2)
        assert [(s.seed, s.turn_index) for s in read_dataset(tmp_path / "dataset.jsonl")] == [(1, 3), (2, 3)]

    def test_no_hard_tasks_gives_empty_dataset(self, retail_suite, tmp_path):
        actor = ScriptedActor(retail_suite.actor_programs())
        stats = run_pipeline(retail_suite.tasks, actor, OracleCritic(), retail_suite.make_environment, CFG, tmp_path)
        assert stats.n_samples == 0
        assert read_trajectories(tmp_path / "actor_critic.jsonl") == []


TASK_JSON = json.dumps({
    "task_id": "inferred-1", "environment_id": "retail", "instruction": "Cancel order W1001.",
    "user_script_id": "inferred-1", "success_criterion": {"expected": {"orders.W1001.status": "cancelled"}},
    "horizon": 6,
})


class TestInferTaskSpec:
    def test_fenced_json(self):
        spec = infer_task_spec("user: cancel W1001", ScriptedTextBackend([f"Here it is:\n```json\n{TASK_JSON}\n```"]))
        assert spec.task_id == "inferred-1"
        assert spec.success_criterion["expected"] == {"orders.W1001.status": "cancelled"}

    def test_bare_json(self):
        assert infer_task_spec("dialogue", ScriptedTextBackend([TASK_JSON])).horizon == 6

    def test_not_json(self):
        with pytest.raises(TaskSpecParseError):
            infer_task_spec("dialogue", ScriptedTextBackend(["I think the user wants a refund."]))

    def test_not_an_object(self):
        with pytest.raises(TaskSpecParseError):
            infer_task_spec("dialogue", ScriptedTextBackend(["[1, 2]"]))

    def test_missing_field_is_named(self):
        data = json.loads(TASK_JSON)
        del data["horizon"]
        with pytest.raises(TaskSpecParseError) as excinfo:
            infer_task_spec("dialogue", ScriptedTextBackend([json.dumps(data)]))
        assert "horizon" in str(excinfo.value)

    def test_criterion_must_fit_environment(self):
        data = json.loads(TASK_JSON)
        data["environment_id"] = "travel-33"
        with pytest.raises(TaskSpecParseError):
            infer_task_spec("dialogue", ScriptedTextBackend([json.dumps(data)]))
