"""Environment registry: tool classification, environment kinds and construction from fixtures."""
from typing import Protocol

from pydantic import ValidationError

from lib import retail_env, travel_env
from lib.errors import ConfigError, UnknownToolError
from lib.models import first_validation_error

# --- Configuration ---
TOOL_REGISTRY = {
    retail_env.ENVIRONMENT_KIND: {
        **{tool: False for tool in retail_env.READ_ONLY_TOOLS},
        **{tool: True for tool in retail_env.STATE_MUTATING_TOOLS},
    },
    travel_env.ENVIRONMENT_KIND: {
        **{tool: False for tool in travel_env.READ_ONLY_TOOLS},
        **{tool: True for tool in travel_env.STATE_MUTATING_TOOLS},
    },
}

GROUND_TRUTH_MODELS = {
    retail_env.ENVIRONMENT_KIND: retail_env.RetailGroundTruth,
    travel_env.ENVIRONMENT_KIND: travel_env.TravelGroundTruth,
}

DEFAULT_GATE_POLICY = {
    retail_env.ENVIRONMENT_KIND: "state_mutating",
    travel_env.ENVIRONMENT_KIND: "final_recommendation",
}


class Environment(Protocol):
    kind: str
    done: bool

    def reset(self): ...
    def step(self, action, turn_index): ...
    def evaluate(self): ...
    def critic_context(self, proposal): ...
    def actor_context(self): ...
    def judge(self, proposal): ...
    def copy(self): ...


def environment_kind(environment_id):
    """'retail' -> retail, 'travel-33' -> travel."""
    kind = environment_id.split("-", 1)[0]
    if kind not in TOOL_REGISTRY:
        raise ConfigError(f"unknown environment '{environment_id}'")
    return kind


def is_state_mutating(env_kind, tool_name):
    try:
        return TOOL_REGISTRY[env_kind][tool_name]
    except KeyError:
        raise UnknownToolError(tool_name, env_kind) from None


def validate_success_criterion(environment_id, criterion):
    """Checks a task's success criterion against its environment's ground-truth schema."""
    try:
        kind = environment_kind(environment_id)
    except ConfigError as exc:
        raise ValueError(str(exc)) from None
    try:
        GROUND_TRUTH_MODELS[kind].model_validate(criterion)
    except ValidationError as exc:
        field, message = first_validation_error(exc)
        raise ValueError(f"success_criterion.{field}: {message}") from None


def make_environment(fixture):
    """A fresh environment instance for one episode."""
    if isinstance(fixture, retail_env.RetailFixture):
        return retail_env.RetailEnvironment(fixture)
    if isinstance(fixture, travel_env.TravelFixture):
        return travel_env.TravelEnvironment(fixture)
    raise ConfigError(f"no environment for fixture type {type(fixture).__name__}")
