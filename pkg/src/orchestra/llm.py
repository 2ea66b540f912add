"""Chat-completion backends: OpenAI-compatible HTTP plus a scripted test double.

Every request, including failed retry attempts, is accounted in a
thread-safe usage ledger so cost reports can be cross-checked against
per-response usage sums.
"""

from __future__ import annotations

import math
import os
import threading
import time
from dataclasses import dataclass, replace
from typing import Callable, Optional, Sequence, Union

import requests

from .errors import (
    ApiError,
    ScriptExhaustedError,
    ScriptMismatchError,
    TimeoutError,
    TransportError,
)

ENV_API_KEY = "ORCHESTRA_API_KEY"
ENV_API_BASE = "ORCHESTRA_API_BASE"


@dataclass(frozen=True)
class ChatMessage:
    role: str  # system | user | assistant
    content: str

    def __post_init__(self):
        if self.role not in ("system", "user", "assistant"):
            raise ValueError(f"bad role: {self.role!r}")
        if self.role in ("user", "assistant") and not self.content:
            raise ValueError(f"empty content for {self.role} message")


@dataclass(frozen=True)
class ChatRequest:
    model: str
    messages: tuple[ChatMessage, ...]
    temperature: float = 0.7
    max_tokens: int = 1024
    seed: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, "messages", tuple(self.messages))
        if not self.messages:
            raise ValueError("messages must be non-empty")
        if not 0.0 <= self.temperature <= 2.0:
            raise ValueError("temperature must be in [0, 2]")
        if self.max_tokens < 1:
            raise ValueError("max_tokens must be positive")

    def text(self) -> str:
        """All message contents concatenated, for matching and token counting."""
        return "\n".join(m.content for m in self.messages)


@dataclass(frozen=True)
class UsageStats:
    input_tokens: int = 0
    output_tokens: int = 0
    requests: int = 0
    wall_time: float = 0.0

    def __add__(self, other: "UsageStats") -> "UsageStats":
        return UsageStats(
            self.input_tokens + other.input_tokens,
            self.output_tokens + other.output_tokens,
            self.requests + other.requests,
            self.wall_time + other.wall_time,
        )

    def __sub__(self, other: "UsageStats") -> "UsageStats":
        return UsageStats(
            self.input_tokens - other.input_tokens,
            self.output_tokens - other.output_tokens,
            self.requests - other.requests,
            self.wall_time - other.wall_time,
        )


@dataclass(frozen=True)
class ChatResponse:
    content: str
    usage: UsageStats
    finish_reason: str = "stop"  # stop | length | other


class UsageLedger:
    """Thread-safe additive accumulator of UsageStats."""

    def __init__(self):
        self._lock = threading.Lock()
        self._total = UsageStats()

    def add(self, usage: UsageStats) -> None:
        with self._lock:
            self._total = self._total + usage

    def total(self) -> UsageStats:
        with self._lock:
            return self._total


class Backend:
    """A chat-completion endpoint handle with a built-in usage ledger."""

    def __init__(self):
        self.ledger = UsageLedger()

    def complete(self, req: ChatRequest) -> ChatResponse:
        raise NotImplementedError


@dataclass(frozen=True)
class RetryPolicy:
    max_attempts: int = 3
    backoff: Sequence[float] = (0.5, 1.0, 2.0)

    def __post_init__(self):
        if self.max_attempts < 1:
            raise ValueError("max_attempts must be >= 1")

    def delay(self, attempt: int) -> float:
        if not self.backoff:
            return 0.0
        return self.backoff[min(attempt, len(self.backoff) - 1)]


def with_retries(op: Callable[[], ChatResponse], policy: RetryPolicy = RetryPolicy()):
    """Run ``op``, retrying TransportError/TimeoutError up to max_attempts."""
    last: Exception | None = None
    for attempt in range(policy.max_attempts):
        try:
            return op()
        except TransportError as exc:  # TimeoutError is a TransportError
            last = exc
            if attempt + 1 < policy.max_attempts:
                time.sleep(policy.delay(attempt))
    assert last is not None
    raise last


def complete_chat(
    backend: Backend,
    req: ChatRequest,
    *,
    ledger: Optional[UsageLedger] = None,
    retry: Optional[RetryPolicy] = None,
) -> ChatResponse:
    """Complete ``req`` against ``backend``, recording usage for every attempt.

    Usage lands in the backend's own ledger and, when given, in ``ledger``
    (per-run accounting). Retries cover transport failures only.
    """

    def record(usage: UsageStats) -> None:
        backend.ledger.add(usage)
        if ledger is not None:
            ledger.add(usage)

    def attempt() -> ChatResponse:
        start = time.monotonic()
        try:
            resp = backend.complete(req)
        except Exception:
            record(UsageStats(requests=1, wall_time=time.monotonic() - start))
            raise
        usage = replace(resp.usage, requests=1, wall_time=time.monotonic() - start)
        record(usage)
        return replace(resp, usage=usage)

    if retry is None:
        return attempt()
    return with_retries(attempt, retry)


def request_payload(req: ChatRequest) -> dict:
    """OpenAI chat-completions JSON body for ``req``."""
    payload = {
        "model": req.model,
        "messages": [{"role": m.role, "content": m.content} for m in req.messages],
        "temperature": req.temperature,
        "max_tokens": req.max_tokens,
    }
    if req.seed is not None:
        payload["seed"] = req.seed
    return payload


class HttpBackend(Backend):
    """OpenAI-compatible ``/v1/chat/completions`` over HTTP."""

    def __init__(
        self,
        base_url: Optional[str] = None,
        api_key: Optional[str] = None,
        timeout_s: float = 120.0,
        session: Optional[requests.Session] = None,
    ):
        super().__init__()
        base = base_url or os.environ.get(ENV_API_BASE)
        if not base:
            raise ValueError(f"no endpoint: pass base_url or set {ENV_API_BASE}")
        self.base_url = base.rstrip("/")
        self.api_key = api_key if api_key is not None else os.environ.get(ENV_API_KEY)
        self.timeout_s = timeout_s
        self._session = session or requests.Session()

    def complete(self, req: ChatRequest) -> ChatResponse:
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        url = f"{self.base_url}/v1/chat/completions"
        try:
            http = self._session.post(
                url, json=request_payload(req), headers=headers, timeout=self.timeout_s
            )
        except requests.Timeout as exc:
            raise TimeoutError(f"timeout after {self.timeout_s}s: {url}") from exc
        except requests.RequestException as exc:
            raise TransportError(f"request failed: {exc}") from exc
        if http.status_code >= 500:
            raise TransportError(f"HTTP {http.status_code}: {http.text[:200]}")
        if http.status_code >= 400:
            raise ApiError(f"HTTP {http.status_code}: {http.text[:200]}")
        try:
            body = http.json()
            choice = body["choices"][0]
            content = choice["message"]["content"] or ""
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise TransportError(f"malformed completion response: {http.text[:200]}") from exc
        usage = body.get("usage") or {}
        finish = choice.get("finish_reason")
        return ChatResponse(
            content=content,
            usage=UsageStats(
                input_tokens=int(usage.get("prompt_tokens", 0)),
                output_tokens=int(usage.get("completion_tokens", 0)),
            ),
            finish_reason=finish if finish in ("stop", "length") else "other",
        )


def synthetic_tokens(text: str) -> int:
    """Stable stand-in token count: ceil(chars / 4)."""
    return math.ceil(len(text) / 4)


@dataclass
class ScriptEntry:
    matcher: str  # substring that must appear in the request text
    reply: str


class ScriptedBackend(Backend):
    """Deterministic transcript-driven backend for offline tests.

    Each call consumes the first remaining entry whose matcher substring
    appears in the request's concatenated message contents. A rejected
    request (no remaining entry matches) raises ScriptMismatchError, which
    is how prompt drift surfaces in tests.
    """

    def __init__(self, transcript: Sequence[Union[ScriptEntry, tuple]]):
        super().__init__()
        if not transcript:
            raise ValueError("transcript must be non-empty")
        self._entries = [
            e if isinstance(e, ScriptEntry) else ScriptEntry(*e) for e in transcript
        ]
        self._lock = threading.Lock()

    def remaining(self) -> int:
        with self._lock:
            return len(self._entries)

    def complete(self, req: ChatRequest) -> ChatResponse:
        text = req.text()
        with self._lock:
            if not self._entries:
                raise ScriptExhaustedError("transcript exhausted")
            for i, entry in enumerate(self._entries):
                if entry.matcher in text:
                    self._entries.pop(i)
                    return ChatResponse(
                        content=entry.reply,
                        usage=UsageStats(
                            input_tokens=synthetic_tokens(text),
                            output_tokens=synthetic_tokens(entry.reply),
                        ),
                    )
            heads = [e.matcher for e in self._entries[:3]]
            raise ScriptMismatchError(
                f"no transcript entry matches request; next matchers: {heads!r}"
            )


def scripted_backend(transcript: Sequence[Union[ScriptEntry, tuple]]) -> ScriptedBackend:
    return ScriptedBackend(transcript)
