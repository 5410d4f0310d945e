"""Chat-model clients for the two pipeline roles: drafting and revising.

Both roles speak the same wire protocol (POST {base_url}/chat/completions
with a messages array, answer in choices[0].message.content), so one
HTTP client class serves either; which model plays which role is purely
configuration. A scripted in-process responder stands in for real
endpoints in tests and offline runs.

Credentials come from an environment variable (default ARR_API_KEY) and
are attached as a bearer header at request time only; they are never
stored on config objects or echoed into logs or error messages.
"""

from __future__ import annotations

import os
import threading
import time
from dataclasses import dataclass
from typing import Optional, Protocol, Sequence

import httpx

from .errors import (
    BudgetExceededError,
    EmptyResponseError,
    MalformedResponseError,
    TransportError,
)
from .prompting import estimate_tokens

_ROLES = ("system", "user", "assistant")

# Steers the draft model toward citing the statutes the evaluation
# checks for; appended to every draft request, configurable per call.
DEFAULT_DRAFT_SUFFIX = "Please provide evidence in the Chinese law"


@dataclass(frozen=True)
class ChatMessage:
    role: str
    content: str

    def __post_init__(self) -> None:
        if self.role not in _ROLES:
            raise ValueError(f"role must be one of {_ROLES}, got {self.role!r}")
        if self.role == "user" and not self.content:
            raise ValueError("user messages must have nonempty content")


@dataclass(frozen=True)
class ModelEndpointConfig:
    """Connection and sampling settings for one chat endpoint."""

    base_url: str
    model_name: str
    max_input_tokens: int = 8000
    temperature: float = 0.0
    timeout_s: float = 60.0
    max_retries: int = 3
    backoff_s: float = 0.5
    max_in_flight: int = 4
    max_output_tokens: Optional[int] = None
    api_key_env: str = "ARR_API_KEY"

    def __post_init__(self) -> None:
        if self.max_input_tokens < 256:
            raise ValueError(f"max_input_tokens must be >= 256, got {self.max_input_tokens}")
        if self.temperature < 0:
            raise ValueError(f"temperature must be >= 0, got {self.temperature}")
        if self.timeout_s <= 0:
            raise ValueError(f"timeout_s must be > 0, got {self.timeout_s}")
        if self.max_retries < 1:
            raise ValueError(f"max_retries must be >= 1, got {self.max_retries}")
        if self.max_in_flight < 1:
            raise ValueError(f"max_in_flight must be >= 1, got {self.max_in_flight}")
        if self.max_output_tokens is not None and self.max_output_tokens < 1:
            raise ValueError(f"max_output_tokens must be >= 1, got {self.max_output_tokens}")


class ChatGateway(Protocol):
    """What the pipeline needs from any chat backend."""

    max_input_tokens: int

    def chat(self, messages: Sequence[ChatMessage]) -> str: ...


def _check_messages(messages: Sequence[ChatMessage]) -> None:
    if not messages:
        raise ValueError("messages must be nonempty")
    if messages[-1].role != "user":
        raise ValueError(f"last message must have role 'user', got {messages[-1].role!r}")


class HttpChatGateway:
    """HTTP chat client with bounded retries and an in-flight cap.

    Transport failures and 5xx responses are retried up to
    ``config.max_retries`` total attempts with exponential backoff; 4xx
    responses fail immediately. A semaphore caps concurrent requests at
    ``config.max_in_flight``. Safe for concurrent use.
    """

    def __init__(self, config: ModelEndpointConfig, client: Optional[httpx.Client] = None):
        self.config = config
        self.max_input_tokens = config.max_input_tokens
        self._owns_client = client is None
        self._client = client or httpx.Client(timeout=config.timeout_s)
        self._semaphore = threading.BoundedSemaphore(config.max_in_flight)

    def close(self) -> None:
        if self._owns_client:
            self._client.close()

    def chat(self, messages: Sequence[ChatMessage]) -> str:
        _check_messages(messages)
        body = {
            "model": self.config.model_name,
            "temperature": self.config.temperature,
            "messages": [{"role": m.role, "content": m.content} for m in messages],
        }
        if self.config.max_output_tokens is not None:
            body["max_tokens"] = self.config.max_output_tokens
        headers = {}
        api_key = os.environ.get(self.config.api_key_env)
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"
        url = self.config.base_url.rstrip("/") + "/chat/completions"
        data = self._post_with_retries(url, body, headers)
        try:
            content = data["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise MalformedResponseError("response carries no completion text") from exc
        if not isinstance(content, str):
            raise MalformedResponseError(
                f"completion content is {type(content).__name__}, expected string"
            )
        return content

    def _post_with_retries(self, url: str, body: dict, headers: dict) -> dict:
        last_error: Exception | None = None
        for attempt in range(1, self.config.max_retries + 1):
            try:
                with self._semaphore:
                    response = self._client.post(url, json=body, headers=headers)
            except httpx.HTTPError as exc:
                last_error = exc
            else:
                if response.status_code >= 500:
                    last_error = TransportError(f"server returned {response.status_code}")
                elif response.status_code >= 400:
                    raise TransportError(f"server returned {response.status_code}")
                else:
                    try:
                        return response.json()
                    except ValueError as exc:
                        raise MalformedResponseError("response body is not JSON") from exc
            if attempt < self.config.max_retries and self.config.backoff_s > 0:
                time.sleep(self.config.backoff_s * (2 ** (attempt - 1)))
        raise TransportError(
            f"chat request failed after {self.config.max_retries} attempts: {last_error}"
        )


class ScriptedResponder:
    """Deterministic offline chat backend for tests and dry runs.

    ``rules`` is an ordered list of (pattern, response) pairs; the first
    pattern found as a substring of the last user message wins. With no
    match, ``default_response`` is returned if set, otherwise a
    ``LookupError`` is raised. Every call's messages are appended to
    ``calls`` under a lock, so concurrent pipelines can share one
    responder.
    """

    def __init__(
        self,
        rules: Sequence[tuple[str, str]] = (),
        default_response: Optional[str] = None,
        max_input_tokens: int = 8000,
    ):
        self.rules = list(rules)
        self.default_response = default_response
        self.max_input_tokens = max_input_tokens
        self.calls: list[list[ChatMessage]] = []
        self._lock = threading.Lock()

    def chat(self, messages: Sequence[ChatMessage]) -> str:
        _check_messages(messages)
        with self._lock:
            self.calls.append(list(messages))
        prompt = messages[-1].content
        for pattern, response in self.rules:
            if pattern in prompt:
                return response
        if self.default_response is not None:
            return self.default_response
        raise LookupError(f"no scripted rule matches the prompt ({prompt[:80]!r}...)")


def generate_draft(query: str, gateway: ChatGateway, suffix: str = DEFAULT_DRAFT_SUFFIX) -> str:
    """Ask the draft model to answer ``query``.

    The outgoing user message is the query plus a newline plus the
    instruction suffix; the suffix never appears in the returned draft
    unless the model itself echoes it. Empty queries fail before any
    network call, and a blank model response is an error.
    """
    if not query.strip():
        raise ValueError("query must be nonempty")
    draft = gateway.chat([ChatMessage(role="user", content=f"{query}\n{suffix}")])
    if not draft.strip():
        raise EmptyResponseError("draft model returned an empty response")
    return draft


def revise(prompt: str, gateway: ChatGateway, budget: Optional[int] = None) -> str:
    """Send an assembled revision prompt to the reviser, returning its text.

    Re-checks the token budget defensively (the prompt builder already
    enforces it) before any network call; ``budget`` defaults to the
    gateway's input-token limit.
    """
    if budget is None:
        budget = getattr(gateway, "max_input_tokens", None)
    if budget is not None and estimate_tokens(prompt) > budget:
        raise BudgetExceededError(
            f"prompt estimates to {estimate_tokens(prompt)} tokens, budget is {budget}"
        )
    revised = gateway.chat([ChatMessage(role="user", content=prompt)])
    if not revised.strip():
        raise EmptyResponseError("reviser returned an empty response")
    return revised
