"""Concrete providers: an OpenAI-compatible HTTP client and a scripted stand-in."""

from __future__ import annotations

import os
from dataclasses import dataclass
from typing import Callable, Iterable

import httpx

from ..errors import ConfigError, ProviderError
from .gateway import CompletionRequest

ENV_ENDPOINT = "SCENFORGE_LLM_ENDPOINT"
ENV_MODEL = "SCENFORGE_LLM_MODEL"
ENV_KEY = "SCENFORGE_LLM_API_KEY"


@dataclass
class ChatProvider:
    """Chat-completions client for any OpenAI-compatible endpoint."""

    endpoint: str
    model: str
    api_key: str
    timeout: float = 300.0

    @classmethod
    def from_settings(cls, settings: dict | None = None) -> ChatProvider:
        settings = settings or {}
        endpoint = os.environ.get(ENV_ENDPOINT) or settings.get("endpoint")
        model = os.environ.get(ENV_MODEL) or settings.get("model")
        key = os.environ.get(settings.get("api_key_env", ENV_KEY)) or os.environ.get(ENV_KEY)
        missing = [n for n, v in ((ENV_ENDPOINT, endpoint), (ENV_MODEL, model), (ENV_KEY, key)) if not v]
        if missing:
            raise ConfigError(f"live LLM provider not configured; set {', '.join(missing)}")
        return cls(endpoint.rstrip("/"), model, key, float(settings.get("timeout", 300.0)))

    def complete(self, request: CompletionRequest) -> str:
        body: dict = {
            "model": self.model,
            "messages": [{"role": m.role.value, "content": m.content} for m in request.messages],
            "max_tokens": request.max_output,
        }
        if request.temperature is not None:
            body["temperature"] = request.temperature
        try:
            resp = httpx.post(
                f"{self.endpoint}/chat/completions",
                json=body,
                headers={"Authorization": f"Bearer {self.api_key}"},
                timeout=self.timeout,
            )
        except httpx.TransportError as exc:
            raise ProviderError(f"transport error: {exc}", retryable=True) from exc
        if resp.status_code == 429 or resp.status_code >= 500:
            raise ProviderError(f"HTTP {resp.status_code}", retryable=True)
        if resp.status_code >= 400:
            raise ProviderError(f"HTTP {resp.status_code}: {resp.text[:200]}", retryable=False)
        try:
            return resp.json()["choices"][0]["message"]["content"] or ""
        except (KeyError, IndexError, ValueError) as exc:
            raise ProviderError(f"unexpected response body: {exc}") from exc


class ScriptedProvider:
    """Deterministic provider driven by a list of replies or a callable.

    Used to author replay transcripts offline and in tests.
    """

    def __init__(self, script: Callable[[CompletionRequest], str] | Iterable[str]):
        if callable(script):
            self._fn = script
            self._queue = None
        else:
            self._fn = None
            self._queue = list(script)
        self.requests: list[CompletionRequest] = []

    def complete(self, request: CompletionRequest) -> str:
        self.requests.append(request)
        if self._fn is not None:
            return self._fn(request)
        if not self._queue:
            raise ProviderError("scripted provider ran out of replies")
        return self._queue.pop(0)
