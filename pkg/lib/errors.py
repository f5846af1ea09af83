"""Exception hierarchy shared by every module in lib."""


class CriticGateError(Exception):
    """Base class for all errors raised by this project."""


# --- Trajectories and logs ---

class TrajectoryError(CriticGateError):
    """A trajectory operation would break ordering or termination rules."""


class TrajectoryParseError(CriticGateError):
    """A serialized trajectory document is malformed."""

    def __init__(self, field, message):
        self.field = field
        super().__init__(f"invalid trajectory document at '{field}': {message}")


class LogParseError(CriticGateError):
    """A line of a JSONL log could not be parsed."""

    def __init__(self, path, line_number, message):
        self.path = str(path)
        self.line_number = line_number
        super().__init__(f"{self.path}:{line_number}: {message}")


# --- Environments and tools ---

class UnknownToolError(CriticGateError):
    """The tool name is not registered in the environment."""

    def __init__(self, tool_name, environment_kind):
        self.tool_name = tool_name
        self.environment_kind = environment_kind
        super().__init__(f"unknown tool '{tool_name}' for environment '{environment_kind}'")


class ToolArgumentError(CriticGateError):
    """Tool arguments failed schema validation."""

    def __init__(self, tool_name, argument, message):
        self.tool_name = tool_name
        self.argument = argument
        super().__init__(f"invalid argument '{argument}' for {tool_name}: {message}")


class UnknownAspectError(CriticGateError):
    """A travel aspect or option id is not part of the task."""


# --- Prompts and backends ---

class PromptError(CriticGateError):
    """A prompt template placeholder has no value."""


class BackendError(CriticGateError):
    """A model backend failed to produce a completion."""


class ConfigurationError(BackendError):
    """The backend is missing an endpoint URL or credential."""


class TransportError(BackendError):
    """The request never produced an HTTP response."""


class HTTPStatusError(BackendError):
    """The endpoint answered with a non-2xx status."""

    def __init__(self, status_code, body):
        self.status_code = status_code
        super().__init__(f"chat endpoint returned HTTP {status_code}: {body[:300]}")


class SchemaMismatchError(BackendError):
    """The response body does not follow the chat-completions schema."""

    def __init__(self, location, message):
        self.location = location
        super().__init__(f"response schema mismatch at {location}: {message}")


class ScriptError(BackendError):
    """A scripted program was asked for a turn it does not define."""


class PreconditionError(CriticGateError):
    """An operation was called with a violated precondition."""


class EpisodeAborted(CriticGateError):
    """A backend failure ended an episode before termination."""

    def __init__(self, task_id, turn_index, cause, trajectory=None):
        self.task_id = task_id
        self.turn_index = turn_index
        self.cause = cause
        self.trajectory = trajectory
        super().__init__(f"episode for task {task_id} aborted at turn {turn_index}: {cause}")


# --- Pipelines, reports, configuration ---

class DatasetError(CriticGateError):
    """The supervision dataset is inconsistent or unreadable."""


class TaskSpecParseError(CriticGateError):
    """A backend's task-spec extraction could not be parsed."""


class ReportError(CriticGateError):
    """Run summaries cannot be compared."""


class ConfigError(CriticGateError):
    """Invalid run or filter configuration."""
