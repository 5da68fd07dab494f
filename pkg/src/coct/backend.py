"""Uniform chat-completion access.

Two backend kinds behind one ``complete`` call: a live client speaking the
OpenAI-compatible wire format, and a scripted mock whose answers are a pure
function of request content (so bounded-parallel runs stay deterministic).
Also houses context-window truncation and the request fingerprint.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, NamedTuple, Sequence

import requests

ROLE_SYSTEM = "system"
ROLE_USER = "user"
ROLE_ASSISTANT = "assistant"
_ROLES = (ROLE_SYSTEM, ROLE_USER, ROLE_ASSISTANT)

API_KEY_ENV = "COCT_API_KEY"
ENDPOINT_ENV = "COCT_ENDPOINT"


class BackendError(Exception):
    """Base class for completion failures."""


class TransportError(BackendError):
    """Network failure or retryable HTTP status, after retries exhausted."""


class ProtocolError(BackendError):
    """The endpoint answered, but not with a parseable completion."""


class RefusalError(BackendError):
    """The model returned empty content."""


class MockMissError(BackendError):
    """No scripted entry and the script's fallback is fail."""


@dataclass(frozen=True)
class ChatMessage:
    role: str
    content: str

    def __post_init__(self):
        if self.role not in _ROLES:
            raise ValueError(f"role must be one of {_ROLES}, got {self.role!r}")
        if self.role != ROLE_SYSTEM and not self.content:
            raise ValueError(f"{self.role} message content must be non-empty")


@dataclass(frozen=True)
class ChatRequest:
    model: str
    messages: tuple[ChatMessage, ...]
    temperature: float = 0.0
    max_tokens: int = 512
    seed: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "messages", tuple(self.messages))
        if not self.messages:
            raise ValueError("request must contain at least one message")
        for i, m in enumerate(self.messages):
            if m.role == ROLE_SYSTEM and i != 0:
                raise ValueError("a system message is only allowed at index 0")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.max_tokens <= 0:
            raise ValueError("max_tokens must be positive")


class Usage(NamedTuple):
    prompt_tokens: int
    completion_tokens: int


class Completion(NamedTuple):
    content: str
    usage: Usage


def estimate_tokens(text: str) -> int:
    """Whitespace-token count scaled by 1.3, rounded up. A deliberately
    model-free estimate: it only gates context truncation."""
    return math.ceil(len(text.split()) * 1.3)


def fingerprint_messages(messages: Sequence[ChatMessage]) -> str:
    """Stable content hash over the (role, content) sequence.

    Model, temperature and decoding parameters are excluded on purpose so
    one script can drive several configurations.
    """
    h = hashlib.sha256()
    for m in messages:
        h.update(m.role.encode("utf-8"))
        h.update(b"\x00")
        h.update(m.content.encode("utf-8"))
        h.update(b"\x01")
    return h.hexdigest()[:32]


def fingerprint(request: ChatRequest) -> str:
    return fingerprint_messages(request.messages)


FALLBACK_ECHO = "echo-last-user"
FALLBACK_FIXED = "fixed"
FALLBACK_FAIL = "fail"
_FALLBACKS = (FALLBACK_ECHO, FALLBACK_FIXED, FALLBACK_FAIL)


@dataclass(frozen=True)
class MockScript:
    """Fingerprint-keyed response table with a fallback rule.

    Lookup is a pure function of request content, independent of call
    order and of any concurrency schedule.
    """

    entries: Mapping[str, str] = field(default_factory=dict)
    fallback: str = FALLBACK_ECHO
    fallback_text: str = ""

    def __post_init__(self):
        if self.fallback not in _FALLBACKS:
            raise ValueError(f"fallback must be one of {_FALLBACKS}")

    def resolve(self, request: ChatRequest) -> str:
        hit = self.entries.get(fingerprint(request))
        if hit is not None:
            return hit
        if self.fallback == FALLBACK_ECHO:
            for m in reversed(request.messages):
                if m.role == ROLE_USER:
                    return m.content
            raise MockMissError("echo fallback found no user message")
        if self.fallback == FALLBACK_FIXED:
            return self.fallback_text
        raise MockMissError(f"no scripted response for fingerprint {fingerprint(request)}")

    @classmethod
    def from_exchanges(cls, exchanges: Sequence[tuple[Sequence[ChatMessage], str]],
                       fallback: str = FALLBACK_FAIL, fallback_text: str = "") -> MockScript:
        entries = {fingerprint_messages(msgs): resp for msgs, resp in exchanges}
        return cls(entries, fallback, fallback_text)

    def to_dict(self) -> dict:
        out = {"entries": dict(self.entries), "fallback": self.fallback}
        if self.fallback == FALLBACK_FIXED:
            out["fallback_text"] = self.fallback_text
        return out

    @classmethod
    def from_dict(cls, data: Mapping) -> MockScript:
        return cls(
            entries=dict(data.get("entries", {})),
            fallback=data.get("fallback", FALLBACK_ECHO),
            fallback_text=data.get("fallback_text", ""),
        )

    @classmethod
    def from_file(cls, path: str | Path) -> MockScript:
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def to_file(self, path: str | Path) -> None:
        Path(path).write_text(
            json.dumps(self.to_dict(), indent=2, ensure_ascii=False, sort_keys=True) + "\n",
            encoding="utf-8",
        )


@dataclass(frozen=True)
class RetryPolicy:
    max_attempts: int = 3
    backoff_s: float = 0.2

    def __post_init__(self):
        if not 1 <= self.max_attempts <= 5:
            raise ValueError("max_attempts must be between 1 and 5")


@dataclass
class BackendHandle:
    """Shareable handle to either a live endpoint or a mock script.

    Exactly one of ``endpoint`` / ``script`` is set. The handle owns the
    max-in-flight gate for the live path, so it is safe to share across
    worker threads.
    """

    endpoint: str | None = None
    script: MockScript | None = None
    model: str = "default"
    token_budget: int = 4096
    api_key_env: str = API_KEY_ENV
    timeout_s: float = 60.0
    retry: RetryPolicy = field(default_factory=RetryPolicy)
    max_in_flight: int = 4

    def __post_init__(self):
        if (self.endpoint is None) == (self.script is None):
            raise ValueError("exactly one of endpoint/script must be configured")
        if self.token_budget <= 0:
            raise ValueError("token_budget must be positive")
        if self.max_in_flight < 1:
            raise ValueError("max_in_flight must be >= 1")
        self._gate = threading.Semaphore(self.max_in_flight)

    @property
    def is_mock(self) -> bool:
        return self.script is not None

    @classmethod
    def mock(cls, script: MockScript, **kwargs) -> BackendHandle:
        return cls(script=script, **kwargs)

    @classmethod
    def live(cls, endpoint: str, **kwargs) -> BackendHandle:
        return cls(endpoint=endpoint, **kwargs)


def _usage_estimate(request: ChatRequest, content: str) -> Usage:
    prompt = sum(estimate_tokens(m.content) for m in request.messages)
    return Usage(prompt_tokens=prompt, completion_tokens=estimate_tokens(content))


def _complete_live(handle: BackendHandle, request: ChatRequest) -> Completion:
    url = handle.endpoint.rstrip("/") + "/chat/completions"
    body = {
        "model": request.model,
        "messages": [{"role": m.role, "content": m.content} for m in request.messages],
        "temperature": request.temperature,
        "max_tokens": request.max_tokens,
    }
    if request.seed is not None:
        body["seed"] = request.seed
    headers = {"Content-Type": "application/json"}
    api_key = os.environ.get(handle.api_key_env)
    if api_key:
        headers["Authorization"] = f"Bearer {api_key}"

    attempts = handle.retry.max_attempts
    last_error: Exception | None = None
    with handle._gate:
        for attempt in range(attempts):
            if attempt:
                time.sleep(handle.retry.backoff_s * attempt)
            try:
                resp = requests.post(url, json=body, headers=headers, timeout=handle.timeout_s)
            except requests.RequestException as exc:
                last_error = exc
                continue
            if resp.status_code == 429 or resp.status_code >= 500:
                last_error = TransportError(f"HTTP {resp.status_code} from {url}")
                continue
            if resp.status_code != 200:
                raise ProtocolError(f"HTTP {resp.status_code} from {url}: {resp.text[:200]}")
            try:
                payload = resp.json()
                message = payload["choices"][0]["message"]
                content = message.get("content")
            except (ValueError, KeyError, IndexError, TypeError) as exc:
                raise ProtocolError(f"malformed completion body: {exc}") from exc
            if not content:
                raise RefusalError("completion contained empty content")
            usage_raw = payload.get("usage") or {}
            usage = Usage(
                prompt_tokens=int(usage_raw.get("prompt_tokens", 0)) or
                _usage_estimate(request, content).prompt_tokens,
                completion_tokens=int(usage_raw.get("completion_tokens", 0)) or
                estimate_tokens(content),
            )
            return Completion(content, usage)
    raise TransportError(f"request failed after {attempts} attempts: {last_error}")


def complete(handle: BackendHandle, request: ChatRequest) -> Completion:
    """Resolve one chat completion. Mock handles answer from the script;
    live handles POST the OpenAI-compatible body and read the first choice."""
    if handle.is_mock:
        content = handle.script.resolve(request)
        if not content:
            raise RefusalError("scripted completion is empty")
        return Completion(content, _usage_estimate(request, content))
    return _complete_live(handle, request)


def _tail_truncate(message: ChatMessage, budget: int) -> ChatMessage:
    keep = max(1, math.floor(budget / 1.3))
    tokens = message.content.split()
    return ChatMessage(message.role, " ".join(tokens[:keep]))


def truncate_history(messages: Sequence[ChatMessage], budget: int) -> list[ChatMessage]:
    """Fit a conversation into ``budget`` estimated tokens.

    The leading system message (if any) is always kept; of the remaining
    messages the longest suffix that fits is kept. The final message is
    never dropped: if it alone exceeds the budget its content is truncated
    at the tail to fit.
    """
    if budget <= 0:
        raise ValueError("budget must be positive")
    msgs = list(messages)
    head: list[ChatMessage] = []
    if msgs and msgs[0].role == ROLE_SYSTEM:
        head = [msgs[0]]
        msgs = msgs[1:]
    if not msgs:
        return head

    kept: list[ChatMessage] = []
    total = 0
    for m in reversed(msgs):
        cost = estimate_tokens(m.content)
        if total + cost > budget:
            break
        kept.append(m)
        total += cost
    kept.reverse()
    if not kept:
        kept = [_tail_truncate(msgs[-1], budget)]
    return head + kept
