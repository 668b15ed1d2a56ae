"""Chat-completion providers and the retrying, rate-limited client in front of them."""

from __future__ import annotations

import json
import logging
import os
import threading
from collections import defaultdict
from pathlib import Path
from typing import Mapping, Protocol

from reqpc.errors import BudgetExceeded, ConfigError, ProviderError, ProviderRefusal, TransportError
from reqpc.llm.prompts import PromptSpec, Stage
from reqpc.retry import call_with_retries

log = logging.getLogger(__name__)


class ChatProvider(Protocol):
    name: str
    supports_extended_reasoning: bool

    def complete(self, spec: PromptSpec) -> str: ...


class MockChatProvider:
    """Scripted provider keyed by ``(stage, req_id, prompt_hash)`` with fallback to ``(stage, req_id)``.

    A key maps to a list of responses served in order; the last one repeats.
    ``transient_failures`` makes the first N calls for a key raise
    :class:`TransportError` before responding, to exercise retries.
    """

    name = "mock"
    supports_extended_reasoning = True

    def __init__(self):
        self._responses: dict[tuple, list[str]] = {}
        self._served: dict[tuple, int] = defaultdict(int)
        self._failures: dict[tuple, int] = {}
        self._lock = threading.Lock()
        self.calls: list[PromptSpec] = []

    def add(self, stage: Stage | str, req_id: str, response: str | list[str], prompt_hash: str | None = None,
            transient_failures: int = 0) -> MockChatProvider:
        key = (Stage(stage), req_id, prompt_hash)
        self._responses[key] = [response] if isinstance(response, str) else list(response)
        if not self._responses[key]:
            raise ConfigError(f"mock entry {key} has no responses")
        if transient_failures:
            self._failures[key] = transient_failures
        return self

    def _lookup(self, spec: PromptSpec) -> tuple:
        strict = (spec.stage, spec.req_id, spec.prompt_hash)
        if strict in self._responses:
            return strict
        loose = (spec.stage, spec.req_id, None)
        if loose in self._responses:
            return loose
        raise ProviderError(f"mock provider has no response for stage={spec.stage.value} req={spec.req_id}")

    def complete(self, spec: PromptSpec) -> str:
        with self._lock:
            self.calls.append(spec)
            key = self._lookup(spec)
            if self._failures.get(key, 0) > 0:
                self._failures[key] -= 1
                raise TransportError(f"scripted transient failure for {key[0].value}/{key[1]}")
            responses = self._responses[key]
            i = self._served[key]
            self._served[key] += 1
            return responses[min(i, len(responses) - 1)]

    def calls_for(self, stage: Stage | str) -> list[PromptSpec]:
        return [c for c in self.calls if c.stage is Stage(stage)]

    @classmethod
    def from_file(cls, path: str | os.PathLike) -> MockChatProvider:
        """Load fixtures from JSONL lines ``{"schema_version": 1, "stage", "req_id", "response"|"responses", ...}``."""
        from reqpc.store import iter_jsonl

        mock = cls()
        for lineno, obj in iter_jsonl(path):
            try:
                response = obj["responses"] if "responses" in obj else obj["response"]
                mock.add(obj["stage"], obj["req_id"], response, obj.get("prompt_hash"),
                         int(obj.get("transient_failures", 0)))
            except (KeyError, ValueError) as exc:
                raise ConfigError(f"{path}:{lineno}: bad mock fixture: {exc}") from None
        return mock


class HttpChatProvider:
    """JSON-over-HTTP chat endpoint.

    Request:  ``POST {base_url}/complete`` with
    ``{"model", "system", "prompt", "max_tokens", "temperature", "extended_reasoning"}``.
    Response: ``{"text": str, "stop_reason": "end" | "max_tokens" | "refusal"}``.
    HTTP 429/5xx and network errors are transient; other 4xx are permanent.
    """

    name = "http"
    supports_extended_reasoning = True

    def __init__(self, base_url: str, api_key_env: str = "REQPC_LLM_API_KEY", timeout: float = 120.0, client=None,
                 supports_extended_reasoning: bool = True):
        import httpx

        self.base_url = base_url.rstrip("/")
        self.api_key_env = api_key_env
        self.supports_extended_reasoning = supports_extended_reasoning
        self._client = client or httpx.Client(timeout=timeout)

    def complete(self, spec: PromptSpec) -> str:
        import httpx

        headers = {}
        key = os.environ.get(self.api_key_env)
        if key:
            headers["Authorization"] = f"Bearer {key}"
        payload = {
            "model": spec.model_id,
            "system": spec.system_text,
            "prompt": spec.user_text,
            "max_tokens": spec.max_output,
            "temperature": spec.temperature,
            "extended_reasoning": spec.extended_reasoning,
        }
        try:
            resp = self._client.post(f"{self.base_url}/complete", json=payload, headers=headers)
        except httpx.HTTPError as exc:
            raise TransportError(f"chat request failed: {exc}") from exc
        if resp.status_code == 429 or resp.status_code >= 500:
            raise TransportError(f"chat endpoint returned {resp.status_code}")
        if resp.status_code >= 400:
            raise ProviderError(f"chat endpoint returned {resp.status_code}: {resp.text[:200]}")
        try:
            body = resp.json()
            text = body["text"]
        except (KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
            raise ProviderError(f"malformed chat response: {exc}") from exc
        stop = body.get("stop_reason", "end")
        if stop == "refusal":
            raise ProviderRefusal(f"model refused the {spec.stage.value} prompt for {spec.req_id}")
        if stop == "max_tokens":
            raise BudgetExceeded(f"{spec.stage.value} output for {spec.req_id} hit max_tokens={spec.max_output}")
        return text


class ChatClient:
    """Retries transient failures with exponential backoff and caps in-flight requests."""

    def __init__(self, provider: ChatProvider, attempts: int = 3, base_delay: float = 1.0, max_in_flight: int = 4):
        if max_in_flight < 1:
            raise ConfigError("max_in_flight must be >= 1")
        self.provider = provider
        self.attempts = attempts
        self.base_delay = base_delay
        self._slots = threading.BoundedSemaphore(max_in_flight)
        self._warned = False

    def complete(self, spec: PromptSpec) -> str:
        if spec.extended_reasoning and not getattr(self.provider, "supports_extended_reasoning", False):
            if not self._warned:
                log.warning("provider %s lacks extended reasoning; flag ignored", self.provider.name)
                self._warned = True
        with self._slots:
            return call_with_retries(lambda: self.provider.complete(spec), self.attempts, self.base_delay,
                                     what=f"{self.provider.name} {spec.stage.value} completion")


def make_chat_provider(spec: Mapping, base_dir: str | os.PathLike = ".") -> ChatProvider:
    kind = spec.get("kind", "mock")
    if kind == "mock":
        if "fixtures" not in spec:
            raise ConfigError("mock provider needs a fixtures path")
        return MockChatProvider.from_file(Path(base_dir) / spec["fixtures"])
    if kind == "http":
        if "base_url" not in spec:
            raise ConfigError("http chat provider needs base_url")
        return HttpChatProvider(spec["base_url"], spec.get("api_key_env", "REQPC_LLM_API_KEY"),
                                supports_extended_reasoning=spec.get("supports_extended_reasoning", True))
    raise ConfigError(f"unknown chat provider kind {kind!r}")
