"""Domain types for conversations, actions and rewards, and the trajectory log format.

Everything here is an immutable pydantic model. Field declaration order is the
key order of the JSON documents, which keeps serialized logs byte-stable.
"""
from __future__ import annotations

import json
from pathlib import Path
from typing import Any, Literal, Optional, Union

from loguru import logger
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from lib.errors import LogParseError, TrajectoryError, TrajectoryParseError

# --- Configuration ---
TRAJECTORY_SCHEMA = "critic-gate/trajectory@1"
TASK_SCHEMA = "critic-gate/task@1"

ObservationSource = Literal["user", "tool", "system"]
ActionKind = Literal["message", "tool_call", "recommendation"]
Decision = Literal["approve", "revise"]
Termination = Literal["environment", "horizon", "aborted"]
ErrorMode = Literal["violate_constraint", "hallucinate_constraint", "suboptimal_choice", "decline_request"]
Scalar = Union[str, int, float, bool]

ERROR_MODES = ("violate_constraint", "hallucinate_constraint", "suboptimal_choice")
# drawn by default; decline_request is drawn only when listed explicitly
ALL_ERROR_MODES = ERROR_MODES + ("decline_request",)


class FrozenModel(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")


class Observation(FrozenModel):
    """What the agent sees at the start of a turn."""

    turn_index: int = Field(ge=0)
    source: ObservationSource
    content: str
    tool_result: Optional[dict[str, Any]] = None

    @model_validator(mode="after")
    def _tool_result_iff_tool(self):
        if (self.source == "tool") != (self.tool_result is not None):
            raise ValueError("tool_result must be present exactly when source is 'tool'")
        return self

    @classmethod
    def from_tool(cls, turn_index, result):
        return cls(turn_index=turn_index, source="tool", content=json.dumps(result, sort_keys=True), tool_result=result)


class ActionProposal(FrozenModel):
    """A message, tool call or recommendation emitted by the actor."""

    kind: ActionKind
    text: Optional[str] = None
    tool_name: Optional[str] = None
    tool_args: Optional[dict[str, Scalar]] = None
    aspect: Optional[str] = None
    option_id: Optional[str] = None

    @field_validator("tool_args")
    @classmethod
    def _canonical_arg_order(cls, value):
        if value is None:
            return None
        return dict(sorted(value.items()))

    @model_validator(mode="after")
    def _fields_match_kind(self):
        has_tool = self.tool_name is not None or self.tool_args is not None
        has_recommendation = self.aspect is not None or self.option_id is not None
        if self.kind == "message":
            if has_tool or has_recommendation:
                raise ValueError("message proposals carry text only")
            if not self.text:
                raise ValueError("message proposals need text")
        elif self.kind == "tool_call":
            if self.tool_name is None or self.tool_args is None:
                raise ValueError("tool_call proposals need tool_name and tool_args")
            if has_recommendation:
                raise ValueError("tool_call proposals cannot carry aspect or option_id")
        else:
            if self.aspect is None or self.option_id is None:
                raise ValueError("recommendation proposals need aspect and option_id")
            if has_tool:
                raise ValueError("recommendation proposals cannot carry tool fields")
        return self

    @classmethod
    def message(cls, text):
        return cls(kind="message", text=text)

    @classmethod
    def tool_call(cls, tool_name, tool_args, text=None):
        return cls(kind="tool_call", tool_name=tool_name, tool_args=tool_args, text=text)

    @classmethod
    def recommendation(cls, aspect, option_id, text=None):
        return cls(kind="recommendation", aspect=aspect, option_id=option_id, text=text)

    def call_key(self):
        """Identity of the action ignoring its prose."""
        if self.kind == "tool_call":
            return ("tool_call", self.tool_name, tuple((k, str(v)) for k, v in self.tool_args.items()))
        if self.kind == "recommendation":
            return ("recommendation", self.aspect, self.option_id)
        return ("message", self.text)


class CriticVerdict(FrozenModel):
    decision: Decision
    guidance: str
    raw_output: str

    @model_validator(mode="after")
    def _guidance_matches_decision(self):
        if self.decision == "approve" and self.guidance:
            raise ValueError("approvals carry no guidance")
        if self.decision == "revise" and not self.guidance.strip():
            raise ValueError("revise verdicts need guidance")
        return self


def record_violations(record):
    """Returns the invariant violations of an intervention record (empty when valid)."""
    problems = []
    if record.gate == 0:
        if record.verdict is not None:
            problems.append("gate 0 must not carry a verdict")
        if record.final_action != record.proposal:
            problems.append("gate 0 must execute the proposal unchanged")
    else:
        if record.verdict is None:
            problems.append("gate 1 must carry a verdict")
        elif record.verdict.decision == "approve" and record.final_action != record.proposal:
            problems.append("an approved proposal must be executed unchanged")
    return problems


class InterventionRecord(FrozenModel):
    """One turn of supervision: the proposal, the gate, the verdict and what was executed."""

    turn_index: int = Field(ge=1)
    gate: Literal[0, 1]
    proposal: ActionProposal
    verdict: Optional[CriticVerdict] = None
    final_action: ActionProposal

    @model_validator(mode="after")
    def _gate_invariants(self):
        problems = record_violations(self)
        if problems:
            raise ValueError("; ".join(problems))
        return self


class Step(FrozenModel):
    observation: Observation
    record: InterventionRecord

    @model_validator(mode="after")
    def _same_turn(self):
        if self.observation.turn_index != self.record.turn_index:
            raise ValueError("observation and record must share a turn index")
        return self


class RewardValue(FrozenModel):
    value: float = Field(ge=0.0, le=1.0)
    breakdown: dict[str, float]

    @field_validator("breakdown")
    @classmethod
    def _non_empty(cls, value):
        if not value:
            raise ValueError("breakdown needs at least one component")
        return value


class Trajectory(FrozenModel):
    """The ordered observation/action pairs of one episode."""

    schema_version: Literal["critic-gate/trajectory@1"] = TRAJECTORY_SCHEMA
    task_id: str
    environment_id: str
    seed: int
    steps: tuple[Step, ...]
    terminated: bool
    termination: Optional[Termination]
    reward: Optional[RewardValue]

    @model_validator(mode="after")
    def _ordering_and_termination(self):
        for position, step in enumerate(self.steps, start=1):
            if step.observation.turn_index != position:
                raise ValueError(f"step {position} has turn_index {step.observation.turn_index}")
        if self.reward is not None and not self.terminated:
            raise ValueError("reward is set only on terminated trajectories")
        if (self.termination is None) == self.terminated:
            raise ValueError("termination reason is set exactly when terminated")
        return self

    @property
    def records(self):
        return [step.record for step in self.steps]

    @property
    def intervention_count(self):
        return sum(record.gate for record in self.records)

    @property
    def revision_count(self):
        return sum(
            1 for record in self.records
            if record.verdict is not None and record.verdict.decision == "revise"
        )


class TaskSpec(FrozenModel):
    """A task: instruction, environment binding and ground-truth success criterion."""

    task_id: str
    environment_id: str
    instruction: str
    user_script_id: str
    success_criterion: dict[str, Any]
    horizon: int = Field(ge=1)

    @model_validator(mode="after")
    def _criterion_matches_environment(self):
        # environment modules import this one
        from lib.environment import validate_success_criterion

        validate_success_criterion(self.environment_id, self.success_criterion)
        return self


class TaskFixture(FrozenModel):
    """Fields shared by the task documents of every environment."""

    schema_version: Literal["critic-gate/task@1"] = TASK_SCHEMA
    task: TaskSpec
    user_script: tuple[str, ...]
    intended_actions: tuple[ActionProposal, ...]
    perturbations: dict[int, dict[ErrorMode, ActionProposal]]

    @model_validator(mode="after")
    def _script_fits_task(self):
        if not self.user_script:
            raise ValueError("user_script needs at least the opening instruction")
        if len(self.intended_actions) > self.task.horizon:
            raise ValueError("intended actions do not fit within the task horizon")
        for turn in self.perturbations:
            if not 1 <= turn <= len(self.intended_actions):
                raise ValueError(f"perturbation table references turn {turn} outside the script")
        return self


class Judgement(FrozenModel):
    """An environment's ground-truth opinion of a proposal (oracle use only)."""

    consistent: bool
    error_mode: Optional[str] = None
    details: str = ""
    expected: Optional[ActionProposal] = None


class StepOutcome(FrozenModel):
    observation: Observation
    done: bool


class CriticContext(FrozenModel):
    text: str
    aspect: Optional[str] = None


# --- Trajectory operations ---

def start_trajectory(task_id, environment_id, seed):
    return Trajectory(
        task_id=task_id, environment_id=environment_id, seed=seed,
        steps=(), terminated=False, termination=None, reward=None,
    )


def append_step(trajectory, obs, rec):
    """Returns a new trajectory with (obs, rec) appended."""
    if trajectory.terminated:
        raise TrajectoryError(f"cannot append to terminated trajectory {trajectory.task_id}")
    expected = len(trajectory.steps) + 1
    if obs.turn_index != expected:
        raise TrajectoryError(f"expected turn_index {expected}, got {obs.turn_index}")
    if rec.turn_index != obs.turn_index:
        raise TrajectoryError(f"record turn {rec.turn_index} does not match observation turn {obs.turn_index}")
    problems = record_violations(rec)
    if problems:
        raise TrajectoryError(f"invalid intervention record at turn {rec.turn_index}: {'; '.join(problems)}")
    step = Step(observation=obs, record=rec)
    return Trajectory(**{**dict(trajectory), "steps": trajectory.steps + (step,)})


def finish(trajectory, reward, termination):
    if trajectory.terminated:
        raise TrajectoryError(f"trajectory {trajectory.task_id} is already terminated")
    return Trajectory(**{**dict(trajectory), "terminated": True, "termination": termination, "reward": reward})


def truncate(trajectory, n_steps):
    """The unterminated prefix holding the first n_steps steps."""
    return Trajectory(**{
        **dict(trajectory), "steps": trajectory.steps[:n_steps],
        "terminated": False, "termination": None, "reward": None,
    })


def describe_action(action):
    """Single-line rendering of an action for transcripts."""
    if action.kind == "message":
        return action.text
    if action.kind == "tool_call":
        call = f"tool_call {action.tool_name} {json.dumps(action.tool_args, sort_keys=True)}"
    else:
        call = f"recommend {action.aspect} {action.option_id}"
    return f"{action.text} {call}" if action.text else call


def _render_observation(obs):
    return f"[{obs.turn_index}] {obs.source}: {obs.content}"


def render_history(trajectory, pending_observation=None):
    """Deterministic role-labelled transcript of a trajectory."""
    lines = []
    for step in trajectory.steps:
        lines.append(_render_observation(step.observation))
        lines.append(f"[{step.record.turn_index}] assistant: {describe_action(step.record.final_action)}")
    if pending_observation is not None:
        lines.append(_render_observation(pending_observation))
    return "\n".join(lines)


# --- Serialization ---

def dump_trajectory(trajectory):
    return trajectory.model_dump_json()


def first_validation_error(exc):
    """(dotted location, message) of the first error in a pydantic ValidationError."""
    error = exc.errors()[0]
    field = ".".join(str(part) for part in error["loc"]) or "<document>"
    return field, error["msg"]


def parse_trajectory(document):
    try:
        return Trajectory.model_validate_json(document)
    except ValidationError as exc:
        field, message = first_validation_error(exc)
        raise TrajectoryParseError(field, message) from exc


def roundtrip(trajectory):
    """Serializes to the log format and parses back."""
    return parse_trajectory(dump_trajectory(trajectory))


def write_trajectories(path, trajectories):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        for trajectory in trajectories:
            f.write(dump_trajectory(trajectory) + "\n")
    logger.debug("wrote {} trajectories to {}", len(trajectories), path)


def read_trajectories(path):
    trajectories = []
    with open(path, "r", encoding="utf-8") as f:
        for line_number, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                trajectories.append(parse_trajectory(line))
            except TrajectoryParseError as exc:
                raise LogParseError(path, line_number, str(exc)) from exc
    return trajectories
