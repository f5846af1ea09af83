"""Critic supervision data: hard-task filtering, actor-critic collection, retention and sample export."""
import json
import re
from collections import Counter, defaultdict
from pathlib import Path
from typing import Literal

from loguru import logger
from pydantic import Field, ValidationError, model_validator

from lib.backends import ModelRequest, parse_verdict
from lib.chat_client import ChatMessage
from lib.errors import DatasetError, LogParseError, PreconditionError, TaskSpecParseError
from lib.models import FrozenModel, TaskSpec, first_validation_error, render_history, truncate, write_trajectories
from lib.orchestrator import critic_prompt_for, run_suite
from lib.prompts import build_task_extraction_prompt

# --- Configuration ---
DEFAULT_RUNS_PER_TASK = 5
DEFAULT_PSI = 2
SAMPLE_SCHEMA = "critic-gate/sample@1"
STATS_SCHEMA = "critic-gate/stats@1"
HARD_TASKS_SCHEMA = "critic-gate/hard-tasks@1"
ACTOR_ONLY_LOG = "actor_only.jsonl"
ACTOR_CRITIC_LOG = "actor_critic.jsonl"
HARD_TASKS_FILE = "hard_tasks.json"
DATASET_FILE = "dataset.jsonl"
FENCE_PATTERN = re.compile(r"```(?:json)?\s*\n(.*?)\n?```", re.DOTALL)


class FilterConfig(FrozenModel):
    k: int = Field(DEFAULT_RUNS_PER_TASK, ge=1)
    psi: int = Field(DEFAULT_PSI, ge=1)
    seed_base: int = 0
    strict: bool = False

    @model_validator(mode="after")
    def _psi_within_runs(self):
        if self.psi > self.k:
            raise ValueError(f"psi ({self.psi}) cannot exceed the number of runs k ({self.k})")
        return self


class SupervisionSample(FrozenModel):
    schema_version: Literal["critic-gate/sample@1"] = SAMPLE_SCHEMA
    task_id: str
    environment_id: str
    seed: int
    turn_index: int = Field(ge=1)
    label: Literal["positive", "negative"]
    prompt: str
    completion: str

    @model_validator(mode="after")
    def _label_matches_completion(self):
        revise = parse_verdict(self.completion).decision == "revise"
        if revise != (self.label == "positive"):
            raise ValueError("label must be positive exactly when the completion is a revise verdict")
        return self


class DomainStats(FrozenModel):
    n_trajectories: int
    n_samples: int
    n_positive: int
    n_negative: int


class DatasetStats(FrozenModel):
    schema_version: Literal["critic-gate/stats@1"] = STATS_SCHEMA
    n_trajectories: int
    n_samples: int
    n_positive: int
    n_negative: int
    per_domain: dict[str, DomainStats]

    @model_validator(mode="after")
    def _counts_add_up(self):
        if self.n_samples != self.n_positive + self.n_negative:
            raise ValueError("n_samples must equal n_positive + n_negative")
        return self


class FilterOutcome(FrozenModel):
    hard: tuple[TaskSpec, ...]
    failures: dict[str, int]


class HardTaskSet(FrozenModel):
    """The hard-task filter's result as written to disk."""

    schema_version: Literal["critic-gate/hard-tasks@1"] = HARD_TASKS_SCHEMA
    k: int
    psi: int
    seed_base: int
    hard_tasks: tuple[str, ...]
    failures: dict[str, int]


# --- Pipeline stages ---

def filter_hard_tasks(tasks, actor, env_factory, cfg, concurrency=1):
    """Runs the actor alone k times per task and keeps tasks failing at least psi times."""
    trajectories = run_suite(
        tasks, actor, None, env_factory, runs=cfg.k, seed_base=cfg.seed_base,
        concurrency=concurrency, critic_enabled=False,
    )
    failures = {task.task_id: 0 for task in tasks}
    for trajectory in trajectories:
        if trajectory.reward.value < 1.0:
            failures[trajectory.task_id] += 1
    hard = tuple(task for task in tasks if failures[task.task_id] >= cfg.psi)
    logger.info("{} of {} tasks are hard (psi={}, k={})", len(hard), len(tasks), cfg.psi, cfg.k)
    return FilterOutcome(hard=hard, failures=failures), trajectories


def collect_ac_trajectories(hard, actor, critic, env_factory, cfg, concurrency=1, gate_policy=None):
    """k actor-critic episodes per hard task on the filter's seeds."""
    if critic is None:
        raise PreconditionError("actor-critic collection needs a critic")
    return run_suite(
        list(hard), actor, critic, env_factory, runs=cfg.k, seed_base=cfg.seed_base,
        gate_policy=gate_policy, concurrency=concurrency, critic_enabled=True,
    )


def retain(trajectory):
    """True for successful trajectories in which the critic asked for at least one revision."""
    if trajectory.reward is None:
        raise PreconditionError(f"trajectory {trajectory.task_id}/{trajectory.seed} has no reward")
    return trajectory.reward.value == 1.0 and trajectory.revision_count >= 1


def retain_strict(trajectories):
    """Per-trajectory retention restricted to tasks whose every run succeeded."""
    by_task = defaultdict(list)
    for trajectory in trajectories:
        by_task[trajectory.task_id].append(trajectory)
    solved = {task_id for task_id, group in by_task.items() if all(t.reward.value == 1.0 for t in group)}
    return [t for t in trajectories if t.task_id in solved and retain(t)]


def extract_samples(trajectory, env):
    """One sample per gated turn, with the exact critic prompt seen during the episode."""
    if not retain(trajectory):
        raise PreconditionError(f"trajectory {trajectory.task_id}/{trajectory.seed} is not retained")
    samples = []
    for position, step in enumerate(trajectory.steps):
        record = step.record
        if record.verdict is None:
            continue
        history = render_history(truncate(trajectory, position), pending_observation=step.observation)
        system, user = critic_prompt_for(env, history, record.proposal)
        samples.append(SupervisionSample(
            task_id=trajectory.task_id,
            environment_id=trajectory.environment_id,
            seed=trajectory.seed,
            turn_index=record.turn_index,
            label="positive" if record.verdict.decision == "revise" else "negative",
            prompt=f"{system}\n\n{user}",
            completion=record.verdict.raw_output,
        ))
    return samples


def _stats(samples):
    per_domain = defaultdict(list)
    for sample in samples:
        per_domain[sample.environment_id].append(sample)

    def counts(rows):
        positive = sum(1 for row in rows if row.label == "positive")
        return {
            "n_trajectories": len({(row.task_id, row.seed) for row in rows}),
            "n_samples": len(rows),
            "n_positive": positive,
            "n_negative": len(rows) - positive,
        }

    return DatasetStats(
        **counts(samples),
        per_domain={domain: DomainStats(**counts(rows)) for domain, rows in sorted(per_domain.items())},
    )


def stats_path_for(path):
    path = Path(path)
    return path.with_name(f"{path.stem}.stats.json")


def emit_dataset(samples, path):
    """Writes samples as sorted JSONL plus a stats sidecar, and returns the stats."""
    ordered = sorted(samples, key=lambda s: (s.task_id, s.seed, s.turn_index))
    keys = Counter((s.task_id, s.seed, s.turn_index) for s in ordered)
    duplicates = sorted(key for key, count in keys.items() if count > 1)
    if duplicates:
        raise DatasetError(f"duplicate samples for (task_id, seed, turn_index): {duplicates[:3]}")
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8") as f:
            for sample in ordered:
                f.write(sample.model_dump_json() + "\n")
        stats = recount_dataset(path)
        stats_path_for(path).write_text(stats.model_dump_json(indent=2) + "\n", encoding="utf-8")
    except OSError as exc:
        raise DatasetError(f"cannot write dataset {path}: {exc}") from exc
    logger.info("wrote {} samples ({} positive) to {}", stats.n_samples, stats.n_positive, path)
    return stats


def read_dataset(path):
    samples = []
    with open(path, "r", encoding="utf-8") as f:
        for line_number, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                samples.append(SupervisionSample.model_validate_json(line))
            except ValidationError as exc:
                field, message = first_validation_error(exc)
                raise LogParseError(path, line_number, f"{field}: {message}") from exc
    return samples


def recount_dataset(path):
    """Statistics recomputed from the dataset file alone."""
    return _stats(read_dataset(path))


# --- Task inference ---

def infer_task_spec(raw_dialogue, model):
    """Asks a model for the latent task of a dialogue and parses it into a TaskSpec."""
    request = ModelRequest(
        role="extractor",
        system_prompt="You extract structured task specifications from conversations.",
        messages=(ChatMessage(role="user", content=build_task_extraction_prompt(raw_dialogue)),),
    )
    text = model.complete(request).strip()
    fenced = FENCE_PATTERN.search(text)
    body = fenced.group(1) if fenced else text
    try:
        data = json.loads(body)
    except json.JSONDecodeError as exc:
        raise TaskSpecParseError(f"task specification is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise TaskSpecParseError("task specification must be a JSON object")
    try:
        return TaskSpec.model_validate(data)
    except ValidationError as exc:
        field, message = first_validation_error(exc)
        raise TaskSpecParseError(f"invalid task specification at '{field}': {message}") from exc


# --- Driver ---

def run_pipeline(tasks, actor, critic, env_factory, cfg, out_dir, concurrency=1, gate_policy=None):
    """filter -> collect -> retain -> extract -> emit, writing every stage's output under out_dir."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    outcome, actor_only = filter_hard_tasks(tasks, actor, env_factory, cfg, concurrency=concurrency)
    write_trajectories(out_dir / ACTOR_ONLY_LOG, actor_only)
    hard_set = HardTaskSet(
        k=cfg.k, psi=cfg.psi, seed_base=cfg.seed_base,
        hard_tasks=tuple(task.task_id for task in outcome.hard), failures=outcome.failures,
    )
    (out_dir / HARD_TASKS_FILE).write_text(hard_set.model_dump_json(indent=2) + "\n", encoding="utf-8")

    collected = []
    if outcome.hard:
        collected = collect_ac_trajectories(
            outcome.hard, actor, critic, env_factory, cfg, concurrency=concurrency, gate_policy=gate_policy,
        )
    write_trajectories(out_dir / ACTOR_CRITIC_LOG, collected)

    retained = retain_strict(collected) if cfg.strict else [t for t in collected if retain(t)]
    logger.info("retained {} of {} actor-critic trajectories", len(retained), len(collected))
    by_id = {task.task_id: task for task in tasks}
    samples = []
    for trajectory in retained:
        samples.extend(extract_samples(trajectory, env_factory(by_id[trajectory.task_id])))
    return emit_dataset(samples, out_dir / DATASET_FILE)
