"""Chat-completion backends: a scripted one for tests and an OpenAI-compatible HTTP client."""

from __future__ import annotations

import logging
import math
import os
import threading
import time
from dataclasses import dataclass
from typing import Callable, Optional, Protocol, Sequence

import httpx

from .errors import BackendUnavailable, ContextOverflow, RateLimited, ScriptAssertionError

logger = logging.getLogger(__name__)

ROLES = ("system", "user", "assistant")


@dataclass(frozen=True)
class ChatMessage:
    role: str
    content: str

    def __post_init__(self):
        if self.role not in ROLES:
            raise ValueError(f"bad role {self.role!r}")
        if self.content is None:
            raise ValueError("message content must not be None")

    def to_dict(self) -> dict:
        return {"role": self.role, "content": self.content}


@dataclass(frozen=True)
class SamplingParams:
    temperature: float = 0.6
    top_p: float = 0.95
    max_output_tokens: int = 4096
    model_id: str = "default"

    def __post_init__(self):
        if self.temperature < 0:
            raise ValueError("temperature must be non-negative")
        if not 0 < self.top_p <= 1:
            raise ValueError("top_p must lie in (0, 1]")
        if self.max_output_tokens <= 0:
            raise ValueError("max_output_tokens must be positive")

    @classmethod
    def runtime(cls, model_id="default", **kw) -> "SamplingParams":
        return cls(temperature=0.6, top_p=0.95, model_id=model_id, **kw)

    @classmethod
    def exploration(cls, model_id="default", **kw) -> "SamplingParams":
        """Sampling profile used when collecting trajectories for preference labelling."""
        return cls(temperature=0.7, top_p=0.9, model_id=model_id, **kw)


@dataclass(frozen=True)
class Completion:
    text: str
    token_logprobs: Optional[tuple] = None  # ((token, logprob), ...)
    prompt_tokens: int = 0
    output_tokens: int = 0

    def __post_init__(self):
        if self.token_logprobs is not None:
            object.__setattr__(self, "token_logprobs", tuple(tuple(p) for p in self.token_logprobs))
            if any(lp > 0 for _, lp in self.token_logprobs):
                raise ValueError("token log-probabilities must be <= 0")

    @property
    def logprob(self) -> Optional[float]:
        if self.token_logprobs is None:
            return None
        return math.fsum(lp for _, lp in self.token_logprobs)


# -- token counting ------------------------------------------------------------


class TokenCounter(Protocol):
    def count(self, text: str) -> int: ...


class ApproxTokenCounter:
    """ceil(chars / 4); the default when no tokenizer is configured."""

    chars_per_token = 4

    def count(self, text: str) -> int:
        return -(-len(text) // self.chars_per_token)


class CallableTokenCounter:
    """Wraps an exact tokenizer, e.g. ``lambda s: len(tok.encode(s))``."""

    def __init__(self, fn: Callable[[str], int]):
        self._fn = fn

    def count(self, text: str) -> int:
        return int(self._fn(text))


DEFAULT_COUNTER = ApproxTokenCounter()


def count_tokens(text: str, counter: Optional[TokenCounter] = None) -> int:
    return (counter or DEFAULT_COUNTER).count(text)


def count_message_tokens(messages: Sequence[ChatMessage], counter: Optional[TokenCounter] = None) -> int:
    return sum(count_tokens(m.content, counter) for m in messages)


# -- backends ------------------------------------------------------------------


class Backend(Protocol):
    def complete(self, messages: Sequence[ChatMessage], params: SamplingParams) -> Completion: ...


def _check_messages(messages: Sequence[ChatMessage]) -> None:
    if not messages:
        raise ValueError("messages must be non-empty")
    if messages[0].role != "system":
        raise ValueError("first message must have role 'system'")


@dataclass
class ScriptEntry:
    """One scripted completion.

    ``expect`` lists substrings that must appear in the prompt (all messages
    joined); ``reject`` lists substrings that must not.
    """

    text: str
    expect: tuple = ()
    reject: tuple = ()
    token_logprobs: Optional[tuple] = None

    @classmethod
    def coerce(cls, item) -> "ScriptEntry":
        if isinstance(item, ScriptEntry):
            return item
        if isinstance(item, str):
            return cls(item)
        return cls(
            text=item["text"],
            expect=tuple(item.get("expect", ())),
            reject=tuple(item.get("reject", ())),
            token_logprobs=tuple(map(tuple, item["token_logprobs"])) if item.get("token_logprobs") else None,
        )


class ScriptedBackend:
    """Replays completions by call ordinal.

    After the script runs out, ``default`` is returned if given, otherwise
    :class:`BackendUnavailable` is raised.
    """

    def __init__(
        self,
        script: Sequence = (),
        name: str = "scripted",
        default: Optional[str] = None,
        counter: Optional[TokenCounter] = None,
        context_limit: Optional[int] = None,
    ):
        self.name = name
        self.script = [ScriptEntry.coerce(s) for s in script]
        self.default = default
        self.counter = counter
        self.context_limit = context_limit
        self.calls: list = []  # list of (messages, params)
        self._lock = threading.Lock()

    @property
    def position(self) -> int:
        return len(self.calls)

    def complete(self, messages: Sequence[ChatMessage], params: SamplingParams) -> Completion:
        _check_messages(messages)
        prompt_tokens = count_message_tokens(messages, self.counter)
        if self.context_limit is not None and prompt_tokens > self.context_limit:
            raise ContextOverflow(prompt_tokens, self.context_limit)
        with self._lock:
            ordinal = len(self.calls)
            self.calls.append((list(messages), params))
        if ordinal >= len(self.script):
            if self.default is None:
                raise BackendUnavailable(f"script {self.name!r} exhausted after {len(self.script)} completions")
            entry = ScriptEntry(self.default)
        else:
            entry = self.script[ordinal]
        prompt = "\n".join(m.content for m in messages)
        for needle in entry.expect:
            if needle not in prompt:
                raise ScriptAssertionError(f"{self.name}[{ordinal}]: prompt lacks expected text {needle!r}")
        for needle in entry.reject:
            if needle in prompt:
                raise ScriptAssertionError(f"{self.name}[{ordinal}]: prompt contains rejected text {needle!r}")
        return Completion(
            text=entry.text,
            token_logprobs=entry.token_logprobs,
            prompt_tokens=prompt_tokens,
            output_tokens=count_tokens(entry.text, self.counter),
        )


class OpenAICompatBackend:
    """Client for an OpenAI-compatible ``/chat/completions`` endpoint.

    RateLimited responses are retried with exponential backoff up to
    ``max_retries`` times; the next failure propagates.
    """

    def __init__(
        self,
        base_url: str,
        api_key_env: str = "OPENAI_API_KEY",
        request_logprobs: bool = False,
        timeout: float = 120.0,
        max_retries: int = 3,
        backoff: float = 1.0,
        context_limit: Optional[int] = None,
        counter: Optional[TokenCounter] = None,
        transport: Optional[httpx.BaseTransport] = None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        self.base_url = base_url.rstrip("/")
        self.api_key_env = api_key_env
        self.request_logprobs = request_logprobs
        self.max_retries = max_retries
        self.backoff = backoff
        self.context_limit = context_limit
        self.counter = counter
        self._sleep = sleep
        headers = {"Content-Type": "application/json"}
        key = os.environ.get(api_key_env) if api_key_env else None
        if key:
            headers["Authorization"] = f"Bearer {key}"
        self._client = httpx.Client(timeout=timeout, headers=headers, transport=transport)

    def close(self):
        self._client.close()

    def request_body(self, messages: Sequence[ChatMessage], params: SamplingParams) -> dict:
        body = {
            "model": params.model_id,
            "messages": [m.to_dict() for m in messages],
            "temperature": params.temperature,
            "top_p": params.top_p,
            "max_tokens": params.max_output_tokens,
        }
        if self.request_logprobs:
            body["logprobs"] = True
        return body

    def complete(self, messages: Sequence[ChatMessage], params: SamplingParams) -> Completion:
        _check_messages(messages)
        if self.context_limit is not None:
            n = count_message_tokens(messages, self.counter)
            if n > self.context_limit:
                raise ContextOverflow(n, self.context_limit)
        body = self.request_body(messages, params)
        attempt = 0
        while True:
            try:
                return self._post(body)
            except RateLimited as exc:
                if attempt >= self.max_retries:
                    raise
                delay = exc.retry_after if exc.retry_after is not None else self.backoff * 2**attempt
                logger.warning("rate limited, retrying in %.1fs (attempt %d)", delay, attempt + 1)
                self._sleep(delay)
                attempt += 1

    def _post(self, body: dict) -> Completion:
        try:
            resp = self._client.post(f"{self.base_url}/chat/completions", json=body)
        except httpx.HTTPError as exc:
            raise BackendUnavailable(f"{self.base_url}: {exc}") from exc
        if resp.status_code == 429:
            retry_after = resp.headers.get("retry-after")
            raise RateLimited(float(retry_after) if retry_after else None)
        if resp.status_code == 400 and "context" in resp.text.lower():
            raise ContextOverflow(-1, -1)
        if resp.status_code >= 400:
            raise BackendUnavailable(f"HTTP {resp.status_code}: {resp.text[:200]}")
        try:
            data = resp.json()
            choice = data["choices"][0]
            text = choice["message"]["content"] or ""
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise BackendUnavailable(f"unexpected response body: {exc}") from exc
        logprobs = None
        content_lp = (choice.get("logprobs") or {}).get("content")
        if content_lp:
            logprobs = tuple((t.get("token", ""), min(0.0, float(t["logprob"]))) for t in content_lp)
        usage = data.get("usage") or {}
        return Completion(
            text=text,
            token_logprobs=logprobs,
            prompt_tokens=int(usage.get("prompt_tokens", 0)),
            output_tokens=int(usage.get("completion_tokens", 0)),
        )
