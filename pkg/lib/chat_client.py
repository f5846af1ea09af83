"""Chat-completions wire client and offline replay of recorded exchanges."""
import json
import os
from pathlib import Path
from typing import Literal, Optional

import requests
from loguru import logger
from pydantic import BaseModel, ConfigDict

from lib.errors import ConfigurationError, HTTPStatusError, SchemaMismatchError, TransportError

# --- Configuration ---
API_KEY_ENV = "CRITIC_GATE_API_KEY"
COMPLETIONS_PATH = "/chat/completions"


class ChatMessage(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    role: Literal["system", "user", "assistant"]
    content: str


class EndpointConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    base_url: Optional[str]
    model: str
    temperature: float = 0.0
    timeout: float = 60.0
    api_key_env: str = API_KEY_ENV


def resolve_api_key(config):
    api_key = os.environ.get(config.api_key_env)
    if not api_key:
        raise ConfigurationError(f"environment variable {config.api_key_env} is not set")
    return api_key


def build_request_body(config, messages):
    normalized = [m if isinstance(m, ChatMessage) else ChatMessage(**m) for m in messages]
    return {
        "model": config.model,
        "messages": [{"role": m.role, "content": m.content} for m in normalized],
        "temperature": config.temperature,
    }


def extract_content(data):
    """Returns choices[0].message.content or raises naming the failing location."""
    if not isinstance(data, dict):
        raise SchemaMismatchError("<body>", "expected a JSON object")
    choices = data.get("choices")
    if not isinstance(choices, list):
        raise SchemaMismatchError("choices", "missing or not a list")
    if not choices:
        raise SchemaMismatchError("choices", "no completion choices returned")
    message = choices[0].get("message") if isinstance(choices[0], dict) else None
    if not isinstance(message, dict):
        raise SchemaMismatchError("choices[0].message", "missing or not an object")
    content = message.get("content")
    if not isinstance(content, str):
        raise SchemaMismatchError("choices[0].message.content", "missing or not a string")
    return content


def chat_complete(config, messages, session=None):
    """Sends one chat-completions request and returns the first choice's text.

    Configuration is checked before any network activity. Transport errors are
    not retried.
    """
    if not config.base_url:
        raise ConfigurationError("endpoint base URL is not configured")
    api_key = resolve_api_key(config)

    url = config.base_url.rstrip("/") + COMPLETIONS_PATH
    body = build_request_body(config, messages)
    headers = {"Authorization": f"Bearer {api_key}", "Content-Type": "application/json"}
    client = session if session is not None else requests

    try:
        response = client.post(url, headers=headers, json=body, timeout=config.timeout)
    except requests.RequestException as exc:
        raise TransportError(f"request to {url} failed: {exc}") from exc

    if not 200 <= response.status_code < 300:
        raise HTTPStatusError(response.status_code, response.text)
    try:
        data = response.json()
    except ValueError as exc:
        raise SchemaMismatchError("<body>", "response is not valid JSON") from exc
    logger.debug("chat completion from {} ({} messages)", config.model, len(body["messages"]))
    return extract_content(data)


# --- Recorded exchanges ---

class RecordedResponse:
    def __init__(self, status_code, body):
        self.status_code = status_code
        self._body = body

    @property
    def text(self):
        return self._body if isinstance(self._body, str) else json.dumps(self._body)

    def json(self):
        if isinstance(self._body, str):
            return json.loads(self._body)
        return self._body


def load_exchange(path):
    with open(path, "r", encoding="utf-8") as f:
        exchange = json.load(f)
    if "request" not in exchange or "response" not in exchange:
        raise ConfigurationError(f"{path} is not a recorded exchange")
    return exchange


class RecordedSession:
    """Answers POSTs from recorded request/response documents, one exchange per file."""

    def __init__(self, directory):
        self.directory = Path(directory)
        if not self.directory.is_dir():
            raise ConfigurationError(f"recorded exchange directory {self.directory} does not exist")
        self.exchanges = [load_exchange(p) for p in sorted(self.directory.glob("*.json"))]

    def post(self, url, headers=None, json=None, timeout=None):
        for exchange in self.exchanges:
            if exchange["request"] == json:
                response = exchange["response"]
                return RecordedResponse(response.get("status", 200), response.get("body"))
        raise requests.ConnectionError(f"no recorded exchange matches the request to {url}")
