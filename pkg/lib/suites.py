"""Task suites: fixture documents on disk, scripted actor programs and generator post-conditions."""
import json
from pathlib import Path

from loguru import logger
from pydantic import ValidationError

from lib import retail_env, travel_env
from lib.backends import ScriptedActorProgram
from lib.environment import environment_kind, make_environment
from lib.errors import ConfigError, LogParseError
from lib.models import ERROR_MODES, first_validation_error

FIXTURE_TYPES = {
    retail_env.ENVIRONMENT_KIND: retail_env.RetailFixture,
    travel_env.ENVIRONMENT_KIND: travel_env.TravelFixture,
}


def parse_fixture(document):
    """One fixture from its JSON text, typed by the task's environment."""
    data = json.loads(document)
    kind = environment_kind(data["task"]["environment_id"])
    return FIXTURE_TYPES[kind].model_validate(data)


def write_suite(path, fixtures):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        for fixture in fixtures:
            f.write(fixture.model_dump_json() + "\n")
    logger.info("wrote {} fixtures to {}", len(fixtures), path)


def load_suite(path):
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"suite file {path} does not exist")
    fixtures = []
    with open(path, "r", encoding="utf-8") as f:
        for line_number, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                fixtures.append(parse_fixture(line))
            except ValidationError as exc:
                field, message = first_validation_error(exc)
                raise LogParseError(path, line_number, f"{field}: {message}") from exc
            except (ValueError, KeyError, TypeError, ConfigError) as exc:
                raise LogParseError(path, line_number, f"not a task fixture: {exc}") from exc
    logger.info("loaded {} tasks from {}", len(fixtures), path)
    return Suite(fixtures)


class Suite:
    """An ordered set of task fixtures keyed by task id."""

    def __init__(self, fixtures):
        self.fixtures = {}
        for fixture in fixtures:
            if fixture.task.task_id in self.fixtures:
                raise ConfigError(f"duplicate task id {fixture.task.task_id}")
            self.fixtures[fixture.task.task_id] = fixture

    def __len__(self):
        return len(self.fixtures)

    @property
    def tasks(self):
        return [fixture.task for fixture in self.fixtures.values()]

    def make_environment(self, task):
        return make_environment(self.fixtures[task.task_id])

    def actor_programs(self, error_rate=0.0, error_modes=ERROR_MODES,
                       compliance="complies_with_guidance", error_schedules=None):
        schedules = error_schedules or {}
        return {
            task_id: ScriptedActorProgram(
                task_id=task_id,
                intended_actions=fixture.intended_actions,
                perturbations=fixture.perturbations,
                error_modes=tuple(error_modes),
                error_schedule=schedules.get(task_id, {}),
                error_rate=error_rate,
                compliance=compliance,
            )
            for task_id, fixture in self.fixtures.items()
        }


def replay_actions(fixture, actions):
    """Runs a fixed action sequence in a fresh environment and returns its reward."""
    env = make_environment(fixture)
    env.reset()
    for turn, action in enumerate(actions, start=1):
        outcome = env.step(action, turn)
        if outcome.done:
            break
    return env.evaluate()


def validate_fixture(fixture):
    """Generator post-conditions; returns the problems found (empty when valid)."""
    problems = []
    intended = list(fixture.intended_actions)
    if replay_actions(fixture, intended).value != 1.0:
        problems.append("the intended actions do not reach reward 1")
    if not fixture.perturbations:
        problems.append("no decision turn has perturbations")
    for turn, table in sorted(fixture.perturbations.items()):
        if "violate_constraint" not in table:
            problems.append(f"turn {turn} has no violate_constraint perturbation")
        for mode, action in table.items():
            perturbed = intended[:turn - 1] + [action] + intended[turn:]
            if replay_actions(fixture, perturbed).value == 1.0:
                problems.append(f"the {mode} perturbation at turn {turn} still reaches reward 1")

    if isinstance(fixture, retail_env.RetailFixture):
        problems.extend(retail_env.validate_policies(fixture.policies))
        state = fixture.state
        requests = fixture.ground_truth.reference_calls
        for call in requests:
            violations = retail_env.check_policies(state, call, fixture.policies, requests)
            if violations:
                problems.append(f"reference call {call.tool_name} violates {[r.rule_id for r in violations]}")
            state, _ = retail_env.execute_tool(state, call)
    else:
        for options in fixture.aspects:
            preferences = fixture.preferences.preferences[options.aspect]
            optimal = travel_env.optimal_option_ids(preferences, options)
            if not optimal:
                problems.append(f"no reward-1 option for {options.aspect}")
            if tuple(optimal) != tuple(fixture.ground_truth.optimal_options[options.aspect]):
                problems.append(f"recorded optimum for {options.aspect} is stale")
    return problems


def generate_suite(env_kind, n, seed, difficulty=2):
    """Seeded fixtures for one environment kind, validated against the generator post-conditions."""
    if env_kind == retail_env.ENVIRONMENT_KIND:
        fixtures = retail_env.generate_tasks(n, seed)
    elif env_kind == travel_env.ENVIRONMENT_KIND:
        fixtures = travel_env.generate_tasks(n, difficulty, seed)
    else:
        raise ConfigError(f"unknown environment kind '{env_kind}'")
    for fixture in fixtures:
        problems = validate_fixture(fixture)
        if problems:
            raise ConfigError(f"generated task {fixture.task.task_id} is invalid: {'; '.join(problems)}")
    return fixtures
