"""YAML configuration with command-line overrides."""
from pathlib import Path
from typing import Literal, Optional

import yaml
from pydantic import Field, ValidationError

from lib.backends import Compliance
from lib.datagen import FilterConfig
from lib.errors import ConfigError
from lib.models import ERROR_MODES, ErrorMode, FrozenModel, first_validation_error
from lib.orchestrator import GatePolicy

# --- Configuration ---
DEFAULT_OUTPUT_DIR = "runs/latest"
SECRET_KEYS = {"api_key", "apikey", "token", "secret", "password"}


class EndpointSettings(FrozenModel):
    base_url: Optional[str] = None
    actor_temperature: float = 1.0
    critic_temperature: float = 0.0
    timeout: float = Field(60.0, gt=0)
    max_in_flight: int = Field(4, ge=1)


class RunConfig(FrozenModel):
    suite: Path
    actor: str = "scripted"
    critic: str = "none"
    gate_policy: Optional[GatePolicy] = None
    runs_per_task: int = Field(5, ge=1)
    seed: int = 0
    output_dir: Path = Path(DEFAULT_OUTPUT_DIR)
    concurrency: int = Field(4, ge=1)
    label: Optional[str] = None
    error_rate: float = Field(0.0, ge=0.0, le=1.0)
    error_modes: tuple[ErrorMode, ...] = ERROR_MODES
    compliance: Compliance = "complies_with_guidance"
    horizon: Optional[int] = Field(None, ge=1)
    endpoint: EndpointSettings = EndpointSettings()

    @property
    def method_label(self):
        if self.label:
            return self.label
        return "actor_only" if self.critic == "none" else f"actor_critic[{self.critic}]"


def _find_secret(values, prefix=""):
    if isinstance(values, dict):
        for key, value in values.items():
            path = f"{prefix}{key}"
            if str(key).lower() in SECRET_KEYS:
                return path
            found = _find_secret(value, f"{path}.")
            if found:
                return found
    return None


def load_config_file(path):
    """Reads a YAML config; None or a missing path yields an empty config."""
    if path is None:
        return {}
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file {path} does not exist")
    with open(path, "r", encoding="utf-8") as f:
        values = yaml.safe_load(f) or {}
    if not isinstance(values, dict):
        raise ConfigError(f"config file {path} must contain a mapping")
    secret = _find_secret(values)
    if secret:
        raise ConfigError(f"config file {path} holds a credential at '{secret}'; "
                          "set CRITIC_GATE_API_KEY in the environment instead")
    return values


def _merge(file_values, section, overrides):
    merged = dict(file_values.get(section) or {})
    merged.update({key: value for key, value in overrides.items() if value is not None})
    return merged


def _validate(model, values, section):
    try:
        return model.model_validate(values)
    except ValidationError as exc:
        field, message = first_validation_error(exc)
        raise ConfigError(f"invalid {section} configuration at '{field}': {message}") from exc


def build_run_config(file_values, overrides):
    """RunConfig from the file's `run` section, with non-None flag values taking precedence."""
    config = _validate(RunConfig, _merge(file_values, "run", overrides), "run")
    if not config.suite.is_file():
        raise ConfigError(f"suite file {config.suite} does not exist")
    return config


def build_filter_config(file_values, overrides):
    return _validate(FilterConfig, _merge(file_values, "datagen", overrides), "datagen")


class RunManifest(FrozenModel):
    schema_version: Literal["critic-gate/run@1"] = "critic-gate/run@1"
    label: str
    config: RunConfig


def read_manifest_label(directory):
    """Method label from a run directory's manifest, or None when there is none."""
    path = Path(directory) / "run.json"
    if not path.is_file():
        return None
    try:
        return RunManifest.model_validate_json(path.read_text(encoding="utf-8")).label
    except ValidationError as exc:
        field, message = first_validation_error(exc)
        raise ConfigError(f"invalid run manifest {path} at '{field}': {message}") from exc
