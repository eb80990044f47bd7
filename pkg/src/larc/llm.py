"""Chat-completion client used by the language-model judge."""

from __future__ import annotations

import os
from dataclasses import dataclass
from typing import Protocol, Sequence

import requests

Message = dict[str, str]


class LLMTransportError(RuntimeError):
    pass


class ChatClient(Protocol):
    def complete(self, messages: Sequence[Message]) -> str: ...


@dataclass(frozen=True)
class HttpChatClient:
    """OpenAI-style ``POST {base_url}/chat/completions`` client."""

    base_url: str
    model: str
    api_key: str | None = None
    temperature: float = 0.0
    timeout: float = 120.0

    @classmethod
    def from_env(cls, **overrides) -> HttpChatClient:
        url = os.environ.get("LARC_LLM_URL")
        model = os.environ.get("LARC_LLM_MODEL")
        if not url or not model:
            raise LLMTransportError("LARC_LLM_URL and LARC_LLM_MODEL must be set for --judge llm")
        return cls(url, model, os.environ.get("LARC_LLM_KEY"), **overrides)

    def complete(self, messages: Sequence[Message]) -> str:
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        payload = {
            "model": self.model,
            "messages": list(messages),
            "temperature": self.temperature,
        }
        url = self.base_url.rstrip("/") + "/chat/completions"
        try:
            resp = requests.post(url, json=payload, headers=headers, timeout=self.timeout)
            resp.raise_for_status()
            return resp.json()["choices"][0]["message"]["content"]
        except (requests.RequestException, ValueError, KeyError, IndexError, TypeError) as exc:
            raise LLMTransportError(f"chat completion at {url} failed: {exc}") from exc
