"""Episode loop with a gated critic between the actor and the environment."""
from concurrent.futures import ThreadPoolExecutor
from typing import Literal

from loguru import logger
from pydantic import model_validator

from lib.actions import format_action, parse_action
from lib.backends import ModelRequest, parse_verdict
from lib.chat_client import ChatMessage
from lib.environment import DEFAULT_GATE_POLICY, environment_kind, is_state_mutating
from lib.errors import BackendError, EpisodeAborted, PreconditionError, UnknownToolError
from lib.models import (
    FrozenModel,
    InterventionRecord,
    RewardValue,
    Trajectory,
    append_step,
    finish,
    render_history,
    start_trajectory,
)
from lib.prompts import build_actor_system_prompt, build_critic_prompt

# --- Configuration ---
GatePolicy = Literal["state_mutating", "final_recommendation", "always", "never"]
REVISION_PROMPT = (
    "A reviewer checked your proposed action before it was executed and asked you to revise it:\n"
    "{guidance}\n\nReply with your revised action."
)
ABORTED_REWARD = RewardValue(value=0.0, breakdown={"aborted": 0.0})
OBSERVATION_PREFIX = {"user": "", "tool": "[tool result] ", "system": "[system] "}


class EpisodeConfig(FrozenModel):
    critic_enabled: bool
    gate_policy: GatePolicy = "state_mutating"
    horizon: int
    seed: int = 0


class EpisodeResult(FrozenModel):
    trajectory: Trajectory
    reward: RewardValue
    intervention_count: int
    revision_count: int

    @model_validator(mode="after")
    def _counts_match(self):
        if self.intervention_count != self.trajectory.intervention_count:
            raise ValueError("intervention_count does not match the trajectory")
        if self.revision_count != self.trajectory.revision_count:
            raise ValueError("revision_count does not match the trajectory")
        if self.revision_count > self.intervention_count:
            raise ValueError("more revisions than interventions")
        return self


def should_intervene(proposal, env_kind, gate_policy):
    """1 when the critic must review the proposal under the gate policy, else 0."""
    if gate_policy == "never":
        return 0
    if gate_policy == "always":
        return 1
    if gate_policy == "final_recommendation":
        return int(proposal.kind == "recommendation")
    if proposal.kind != "tool_call":
        return 0
    return int(is_state_mutating(env_kind, proposal.tool_name))


def critic_prompt_for(env, history, proposal):
    """The (system, user) critic prompts for a proposal in an environment."""
    context = env.critic_context(proposal)
    return build_critic_prompt(env.kind, history, proposal, context.text, aspect=context.aspect)


def _observation_message(observation):
    return ChatMessage(role="user", content=OBSERVATION_PREFIX[observation.source] + observation.content)


def actor_messages(trajectory, observation):
    messages = []
    for step in trajectory.steps:
        messages.append(_observation_message(step.observation))
        messages.append(ChatMessage(role="assistant", content=format_action(step.record.final_action)))
    messages.append(_observation_message(observation))
    return tuple(messages)


def revise_with_feedback(actor, request, proposal, verdict):
    """Asks the actor once more with the critic's guidance appended to its context."""
    if verdict.decision != "revise":
        raise PreconditionError("revise_with_feedback needs a revise verdict")
    messages = request.messages + (
        ChatMessage(role="assistant", content=format_action(proposal)),
        ChatMessage(role="user", content=REVISION_PROMPT.format(guidance=verdict.guidance)),
    )
    revision = request.model_copy(update={"messages": messages, "guidance": verdict.guidance})
    return parse_action(actor.complete(revision))


def run_episode(task, actor, critic, env, cfg):
    """Runs one episode to termination or horizon and evaluates it."""
    if cfg.horizon < 1:
        raise PreconditionError(f"horizon must be at least 1, got {cfg.horizon}")
    if cfg.critic_enabled and critic is None:
        raise PreconditionError("critic_enabled requires a critic backend")
    if not cfg.critic_enabled:
        critic = None
    elif hasattr(critic, "bind"):
        critic = critic.bind(env)

    env_kind = environment_kind(task.environment_id)
    system_prompt = build_actor_system_prompt(env_kind, env.actor_context())
    trajectory = start_trajectory(task.task_id, task.environment_id, cfg.seed)
    observation = env.reset()
    done = False
    turn = 1
    try:
        while turn <= cfg.horizon and not done:
            request = ModelRequest(
                role="actor", system_prompt=system_prompt, messages=actor_messages(trajectory, observation),
                task_id=task.task_id, turn_index=turn, seed=cfg.seed,
            )
            proposal = parse_action(actor.complete(request))
            gate = should_intervene(proposal, env_kind, cfg.gate_policy) if critic is not None else 0
            verdict = None
            final_action = proposal
            if gate:
                history = render_history(trajectory, pending_observation=observation)
                critic_system, critic_user = critic_prompt_for(env, history, proposal)
                critic_request = ModelRequest(
                    role="critic", system_prompt=critic_system,
                    messages=(ChatMessage(role="user", content=critic_user),),
                    task_id=task.task_id, turn_index=turn, seed=cfg.seed, proposal=proposal,
                )
                verdict = parse_verdict(critic.complete(critic_request))
                if verdict.decision == "revise":
                    final_action = revise_with_feedback(actor, request, proposal, verdict)
                logger.debug("{} turn {}: critic {} ({})", task.task_id, turn, verdict.decision, verdict.guidance)
            record = InterventionRecord(
                turn_index=turn, gate=gate, proposal=proposal, verdict=verdict, final_action=final_action,
            )
            trajectory = append_step(trajectory, observation, record)
            outcome = env.step(final_action, turn)
            observation, done = outcome.observation, outcome.done
            turn += 1
    except (BackendError, UnknownToolError) as exc:
        raise EpisodeAborted(task.task_id, turn, exc, trajectory) from exc

    reward = env.evaluate()
    trajectory = finish(trajectory, reward, "environment" if done else "horizon")
    logger.debug("{} seed {}: reward {} after {} turns", task.task_id, cfg.seed, reward.value, len(trajectory.steps))
    return EpisodeResult(
        trajectory=trajectory, reward=reward,
        intervention_count=trajectory.intervention_count, revision_count=trajectory.revision_count,
    )


def default_gate_policy(environment_id):
    return DEFAULT_GATE_POLICY[environment_kind(environment_id)]


def aborted_reward(task):
    """Zero reward for an aborted episode; travel tasks get one zero per aspect."""
    if environment_kind(task.environment_id) == "travel":
        aspects = task.success_criterion.get("aspects") or ()
        if aspects:
            return RewardValue(value=0.0, breakdown={aspect: 0.0 for aspect in aspects})
    return ABORTED_REWARD


def run_suite(
tasks, actor, critic, env_factory, runs, seed_base=0, gate_policy=None,
              concurrency=1, horizon=None, critic_enabled=None):
    """Runs `runs` seeded episodes per task (seeds seed_base+1 .. seed_base+runs).

    Returns one terminated trajectory per episode sorted by (task_id, seed);
    aborted episodes are recorded as failures.
    """
    enabled = critic is not None if critic_enabled is None else critic_enabled
    jobs = [(task, seed_base + k) for task in tasks for k in range(1, runs + 1)]

    def run_one(job):
        task, seed = job
        cfg = EpisodeConfig(
            critic_enabled=enabled,
            gate_policy=gate_policy or default_gate_policy(task.environment_id),
            horizon=horizon if horizon is not None else task.horizon,
            seed=seed,
        )
        try:
            return run_episode(task, actor, critic, env_factory(task), cfg).trajectory
        except EpisodeAborted as exc:
            logger.warning("{} seed {}: {}", task.task_id, seed, exc)
            partial = exc.trajectory or start_trajectory(task.task_id, task.environment_id, seed)
            return finish(partial, aborted_reward(task), "aborted")

    with ThreadPoolExecutor(max_workers=max(1, concurrency)) as pool:
        trajectories = list(pool.map(run_one, jobs))
    trajectories.sort(key=lambda t: (t.task_id, t.seed))
    aborted = sum(1 for t in trajectories if t.termination == "aborted")
    logger.info("ran {} episodes over {} tasks ({} aborted)", len(trajectories), len(tasks), aborted)
    return trajectories
