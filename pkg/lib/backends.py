"""Model backends behind one request contract: scripted actor, oracle critic, canned text, chat endpoint."""
import random
import threading
from typing import Literal, Optional, Protocol

from loguru import logger
from pydantic import Field, model_validator

from lib.actions import format_action
from lib.chat_client import ChatMessage, EndpointConfig, RecordedSession, chat_complete
from lib.errors import ConfigError, PreconditionError, ScriptError
from lib.models import ERROR_MODES, ActionProposal, CriticVerdict, ErrorMode, FrozenModel, describe_action

# --- Configuration ---
APPROVE_TAG = "[APPROVE]"
REVISE_TAG = "[REVISE]"
FALLBACK_GUIDANCE = "Reconsider the proposed action and make sure it follows the task and its constraints."
REPLAY_BASE_URL = "http://recorded.invalid/v1"

Compliance = Literal["complies_with_guidance", "ignores_guidance"]
Role = Literal["actor", "critic", "extractor"]


class ModelRequest(FrozenModel):
    """Everything a backend may read for one completion."""

    role: Role
    system_prompt: str
    messages: tuple[ChatMessage, ...]
    task_id: Optional[str] = None
    turn_index: Optional[int] = None
    seed: Optional[int] = None
    guidance: Optional[str] = None
    proposal: Optional[ActionProposal] = None


class ModelBackend(Protocol):
    name: str
    version: str

    def complete(self, request: ModelRequest) -> str: ...


# --- Verdicts ---

def parse_verdict(raw):
    """Reads a leading [APPROVE]/[REVISE] tag; untagged text is treated as revision guidance.

    Tags match in any letter case. A missing output (None) reads as empty text.
    """
    raw = raw or ""
    text = raw.strip()
    tag = text[:max(len(APPROVE_TAG), len(REVISE_TAG))].upper()
    if tag.startswith(APPROVE_TAG):
        return CriticVerdict(decision="approve", guidance="", raw_output=raw)
    if tag.startswith(REVISE_TAG):
        guidance = text[len(REVISE_TAG):].strip()
        return CriticVerdict(decision="revise", guidance=guidance or FALLBACK_GUIDANCE, raw_output=raw)
    return CriticVerdict(decision="revise", guidance=text or FALLBACK_GUIDANCE, raw_output=raw)


# --- Scripted actor ---

class ScriptedActorProgram(FrozenModel):
    task_id: str
    intended_actions: tuple[ActionProposal, ...]
    perturbations: dict[int, dict[ErrorMode, ActionProposal]] = {}
    error_modes: tuple[ErrorMode, ...] = ERROR_MODES
    error_schedule: dict[int, ErrorMode] = {}
    error_rate: float = Field(0.0, ge=0.0, le=1.0)
    compliance: Compliance = "complies_with_guidance"

    @model_validator(mode="after")
    def _schedule_within_script(self):
        for turn in self.error_schedule:
            if not 1 <= turn <= len(self.intended_actions):
                raise ValueError(f"error_schedule references turn {turn} outside the script")
        return self


def scheduled_error(program, turn, seed):
    """The error mode injected at a turn, if any."""
    if turn in program.error_schedule:
        return program.error_schedule[turn]
    if program.error_rate <= 0.0 or not program.error_modes:
        return None
    rng = random.Random(f"{program.task_id}:{seed}:{turn}")
    if rng.random() < program.error_rate:
        return rng.choice(program.error_modes)
    return None


def _perturbed_action(program, turn, mode):
    table = program.perturbations.get(turn, {})
    for candidate in (mode,) + tuple(m for m in ERROR_MODES if m != mode):
        if candidate in table:
            return table[candidate]
    return None


def scripted_actor_step(program, turn, seed, guidance=None):
    """The scripted action at a turn; a complying actor returns the intended action once guided."""
    if not 1 <= turn <= len(program.intended_actions):
        raise ScriptError(f"task {program.task_id} has no scripted action for turn {turn}")
    intended = program.intended_actions[turn - 1]
    mode = scheduled_error(program, turn, seed)
    if mode is None:
        return intended
    perturbed = _perturbed_action(program, turn, mode)
    if perturbed is None:
        return intended
    if guidance and program.compliance == "complies_with_guidance":
        return intended
    return perturbed


class ScriptedActor:
    name = "scripted-actor"
    version = "1"

    def __init__(self, programs):
        self.programs = dict(programs)

    def complete(self, request):
        program = self.programs.get(request.task_id)
        if program is None:
            raise ScriptError(f"no scripted program for task {request.task_id}")
        action = scripted_actor_step(program, request.turn_index, request.seed, request.guidance)
        return format_action(action)


# --- Oracle critic ---

DEFAULT_GUIDANCE_TEMPLATES = {
    "violate_constraint": "The proposed action must not be executed: {details} Propose {expected} instead.",
    "hallucinate_constraint": "The proposed action rests on a restriction that does not exist: {details} Propose {expected} instead.",
    "off_task": "The proposed action does not match the user's request: {details}. Propose {expected} instead.",
    "suboptimal_choice": "The recommendation can be improved: {details}. Recommend {expected} instead.",
    "redundant_recommendation": "Do not recommend again: {details}. Recommendations are final.",
}


class OracleCriticProgram(FrozenModel):
    approval: str = "The proposed action is consistent with the task and its constraints."
    guidance_templates: dict[str, str] = DEFAULT_GUIDANCE_TEMPLATES
    fallback_template: str = "The proposed action is not consistent with the task: {details}"


class OracleCritic:
    """Critic that reads the environment's ground truth; bind it to an episode's environment."""

    name = "oracle-critic"
    version = "1"

    def __init__(self, program=None):
        self.program = program or OracleCriticProgram()

    def bind(self, env):
        return BoundOracleCritic(self.program, env)

    def complete(self, request):
        raise PreconditionError("the oracle critic must be bound to an environment before use")


class BoundOracleCritic:
    name = OracleCritic.name
    version = OracleCritic.version

    def __init__(self, program, env):
        self.program = program
        self.env = env

    def complete(self, request):
        if request.proposal is None:
            raise PreconditionError("oracle critic requests must carry the proposal")
        judgement = self.env.judge(request.proposal)
        if judgement.consistent:
            return f"{APPROVE_TAG} {self.program.approval}"
        template = self.program.guidance_templates.get(judgement.error_mode, self.program.fallback_template)
        expected = (
            describe_action(judgement.expected) if judgement.expected is not None
            else "an action that follows the task and its constraints"
        )
        return f"{REVISE_TAG} {template.format(details=judgement.details, expected=expected)}"


# --- Text and endpoint backends ---

class ScriptedTextBackend:
    """Returns canned texts in call order, or by turn index when given a mapping."""

    name = "scripted-text"
    version = "1"

    def __init__(self, responses):
        self.responses = responses
        self._position = 0
        self._lock = threading.Lock()

    def complete(self, request):
        if isinstance(self.responses, dict):
            if request.turn_index not in self.responses:
                raise ScriptError(f"no canned response for turn {request.turn_index}")
            return self.responses[request.turn_index]
        with self._lock:
            if self._position >= len(self.responses):
                raise ScriptError("canned responses exhausted")
            text = self.responses[self._position]
            self._position += 1
        return text


class EndpointBackend:
    """Chat-completions backend with a bounded number of requests in flight."""

    def __init__(self, config, session=None, max_in_flight=4):
        self.config = config
        self.session = session
        self.name = f"endpoint:{config.model}"
        self.version = config.model
        self._slots = threading.BoundedSemaphore(max_in_flight)

    def complete(self, request):
        messages = (ChatMessage(role="system", content=request.system_prompt),) + tuple(request.messages)
        with self._slots:
            return chat_complete(self.config, messages, session=self.session)


def build_backend(spec, role, programs=None, base_url=None, temperature=0.0, timeout=60.0, max_in_flight=4):
    """Backend from a spec string.

    actor: scripted | endpoint:<model> | replay:<dir>:<model>
    critic: none | oracle | endpoint:<model> | replay:<dir>:<model>
    """
    kind, _, rest = spec.partition(":")
    if role == "critic" and spec == "none":
        return None
    if role == "critic" and spec == "oracle":
        return OracleCritic()
    if role == "actor" and spec == "scripted":
        if programs is None:
            raise ConfigError("the scripted actor needs programs from a task suite")
        return ScriptedActor(programs)
    if kind == "endpoint" and rest:
        config = EndpointConfig(base_url=base_url, model=rest, temperature=temperature, timeout=timeout)
        logger.info("{} backend: {} at {}", role, rest, base_url)
        return EndpointBackend(config, max_in_flight=max_in_flight)
    if kind == "replay" and ":" in rest:
        directory, _, model = rest.rpartition(":")
        config = EndpointConfig(base_url=REPLAY_BASE_URL, model=model, temperature=temperature, timeout=timeout)
        logger.info("{} backend: replaying {} from {}", role, model, directory)
        return EndpointBackend(config, session=RecordedSession(directory), max_in_flight=max_in_flight)
    raise ConfigError(f"invalid {role} backend '{spec}'")
