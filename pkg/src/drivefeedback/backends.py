"""Text-generation backends.

A backend is anything with ``generate(model_id, prompt) -> str`` and a
``max_prompt_length`` attribute. The HTTP client speaks a minimal JSON
protocol: POST ``{model, prompt, max_tokens}``, response ``{text}``.
"""

from __future__ import annotations

import json
import os
import threading
import urllib.error
import urllib.request
from concurrent.futures import ThreadPoolExecutor
from concurrent.futures import TimeoutError as FutureTimeout
from dataclasses import dataclass, field
from typing import Protocol, runtime_checkable

from .errors import DriveFeedbackError

ENDPOINT_ENV = "DF_LLM_ENDPOINT"
KEY_ENV = "DF_LLM_KEY"
DEFAULT_TIMEOUT = 30.0
DEFAULT_CONCURRENCY = 4


class BackendError(DriveFeedbackError):
    """The backend could not produce text (unreachable, timeout, bad reply)."""


@runtime_checkable
class GenerationBackend(Protocol):
    max_prompt_length: int

    def generate(self, model_id: str, prompt: str) -> str: ...


def _check_length(backend: GenerationBackend, prompt: str) -> None:
    if len(prompt) > backend.max_prompt_length:
        raise BackendError(f"prompt of {len(prompt)} chars exceeds backend limit {backend.max_prompt_length}")


@dataclass
class HttpBackend:
    endpoint: str
    api_key: str | None = None
    timeout: float = DEFAULT_TIMEOUT
    max_tokens: int = 600
    max_prompt_length: int = 32_000

    @classmethod
    def from_env(cls, timeout: float = DEFAULT_TIMEOUT) -> "HttpBackend":
        endpoint = os.environ.get(ENDPOINT_ENV)
        if not endpoint:
            raise BackendError(f"{ENDPOINT_ENV} is not set")
        return cls(endpoint, os.environ.get(KEY_ENV), timeout=timeout)

    def generate(self, model_id: str, prompt: str) -> str:
        _check_length(self, prompt)
        body = json.dumps({"model": model_id, "prompt": prompt, "max_tokens": self.max_tokens}).encode()
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        req = urllib.request.Request(self.endpoint, data=body, headers=headers, method="POST")
        try:
            with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                payload = json.loads(resp.read().decode("utf-8"))
        except (urllib.error.URLError, TimeoutError, OSError, ValueError) as exc:
            raise BackendError(f"http backend failed: {exc}") from exc
        text = payload.get("text") if isinstance(payload, dict) else None
        if not isinstance(text, str):
            raise BackendError("http backend reply lacks a 'text' string")
        return text


@dataclass
class UnavailableBackend:
    """Stands in when no backend is configured; every call fails."""

    reason: str = "no generation backend configured"
    max_prompt_length: int = 0

    def generate(self, model_id: str, prompt: str) -> str:
        raise BackendError(self.reason)


@dataclass
class BoundedBackend:
    """Caps in-flight calls to the wrapped backend and bounds each call's wait.

    A timed-out call is abandoned, not killed: its worker thread finishes in
    the background and its result is discarded.
    """

    inner: GenerationBackend
    concurrency: int = DEFAULT_CONCURRENCY
    timeout: float | None = DEFAULT_TIMEOUT
    _sem: threading.BoundedSemaphore = field(init=False, repr=False)
    _pool: ThreadPoolExecutor = field(init=False, repr=False)

    def __post_init__(self) -> None:
        self._sem = threading.BoundedSemaphore(self.concurrency)
        self._pool = ThreadPoolExecutor(max_workers=self.concurrency, thread_name_prefix="backend")

    @property
    def max_prompt_length(self) -> int:
        return self.inner.max_prompt_length

    def generate(self, model_id: str, prompt: str) -> str:
        with self._sem:
            future = self._pool.submit(self.inner.generate, model_id, prompt)
            try:
                return future.result(timeout=self.timeout)
            except FutureTimeout as exc:
                raise BackendError(f"backend call exceeded {self.timeout} s") from exc
