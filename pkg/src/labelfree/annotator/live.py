"""Chat-completion HTTP backend."""
from __future__ import annotations

import os
from dataclasses import dataclass, field

import httpx


class TransportError(RuntimeError):
    """Retryable failure: network error, timeout, rate limit or 5xx."""


class BackendError(RuntimeError):
    """Non-retryable backend failure (bad credentials, malformed request...)."""


@dataclass
class BackendConfig:
    endpoint: str = "https://api.openai.com/v1/chat/completions"
    model: str = "gpt-3.5-turbo"
    api_key_env: str = "OPENAI_API_KEY"
    timeout: float = 60.0
    # dollars per token
    prompt_price: float = 0.5e-6
    completion_price: float = 1.5e-6
    extra_body: dict = field(default_factory=dict)


class LiveBackend:
    is_simulated = False

    def __init__(self, config: BackendConfig, client: httpx.Client | None = None, api_key: str | None = None):
        self.config = config
        key = api_key if api_key is not None else os.environ.get(config.api_key_env)
        if not key:
            raise BackendError(f"environment variable {config.api_key_env} is not set")
        self._headers = {"Authorization": f"Bearer {key}", "Content-Type": "application/json"}
        self._client = client or httpx.Client(timeout=config.timeout)
        self.usage = {"prompt_tokens": 0, "completion_tokens": 0}

    def close(self):
        self._client.close()

    def complete(self, request) -> str:
        body = {"model": self.config.model, "temperature": request.temperature,
                "messages": [{"role": "user", "content": request.prompt}], **self.config.extra_body}
        try:
            resp = self._client.post(self.config.endpoint, json=body, headers=self._headers)
        except httpx.TransportError as exc:
            raise TransportError(str(exc)) from exc
        if resp.status_code == 429 or resp.status_code >= 500:
            raise TransportError(f"HTTP {resp.status_code}: {resp.text[:200]}")
        if resp.status_code >= 400:
            raise BackendError(f"HTTP {resp.status_code}: {resp.text[:200]}")
        try:
            payload = resp.json()
            content = payload["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise TransportError(f"unexpected response body: {exc}") from exc
        usage = payload.get("usage") or {}
        self.usage["prompt_tokens"] += int(usage.get("prompt_tokens", 0))
        self.usage["completion_tokens"] += int(usage.get("completion_tokens", 0))
        return content or ""
