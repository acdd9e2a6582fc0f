"""Uniform dispatch over task tools, with a deterministic mock environment."""

from __future__ import annotations

import json
import shutil
import tempfile
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from concurrent.futures import TimeoutError as FutureTimeout
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional

from ..codec import ToolCall, ToolSchema, validate_call
from ..errors import CallValidationError, ToolFailure, ToolNotRegistered, ToolTimeout

DEFAULT_TIMEOUT = 120.0
GRACE = 5.0  # self-timed adapters (shell, kernel) report their own timeout first


@dataclass(frozen=True)
class Observation:
    body: str
    truncated: bool = False
    source_tool: str = ""
    latency_ms: int = 0

    def to_dict(self) -> dict:
        return {
            "body": self.body,
            "truncated": self.truncated,
            "source_tool": self.source_tool,
            "latency_ms": self.latency_ms,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Observation":
        return cls(data["body"], data.get("truncated", False), data.get("source_tool", ""), data.get("latency_ms", 0))


class ToolSession:
    """Per-run mutable tool state: workspace, shell cwd, python kernel, edit history.

    Owned by exactly one running agent.
    """

    def __init__(self, workspace=None):
        self._own_workspace = workspace is None
        self.workspace = Path(workspace) if workspace else Path(tempfile.mkdtemp(prefix="toolself-"))
        self.cwd = self.workspace
        self.kernel = None
        self.edit_history: list = []

    def close(self):
        if self.kernel is not None:
            self.kernel.close()
            self.kernel = None
        if self._own_workspace:
            shutil.rmtree(self.workspace, ignore_errors=True)

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


@dataclass
class ToolAdapter:
    schema: ToolSchema
    kind: str  # "mock" | "live"
    execute: Callable  # (call, session) -> str; raises ToolFailure

    @property
    def name(self) -> str:
        return self.schema.name


@dataclass
class MockResponse:
    """A scripted tool reply.

    Matches when the tool name agrees, every key in ``args`` equals the call's
    argument, and ``contains`` (if set) is a substring of the JSON-encoded
    arguments. Matched entries are consumed unless ``repeat`` is set.
    """

    tool: str
    body: str
    args: Optional[dict] = None
    contains: Optional[str] = None
    repeat: bool = False

    def matches(self, call: ToolCall) -> bool:
        if call.name != self.tool:
            return False
        if self.args is not None:
            for key, value in self.args.items():
                if call.arguments.get(key) != value:
                    return False
        if self.contains is not None:
            if self.contains not in json.dumps(call.arguments, ensure_ascii=False, sort_keys=True):
                return False
        return True

    @classmethod
    def from_dict(cls, data: dict) -> "MockResponse":
        return cls(
            tool=data["tool"],
            body=data["body"],
            args=data.get("args"),
            contains=data.get("contains"),
            repeat=data.get("repeat", False),
        )


class MockEnvironment:
    """Scripted observations; once nothing matches, ``default_body`` is returned."""

    def __init__(self, responses=(), default_body: str = "No results found."):
        self.responses = [r if isinstance(r, MockResponse) else MockResponse.from_dict(r) for r in responses]
        self.default_body = default_body
        self._used = [False] * len(self.responses)
        self._lock = threading.Lock()
        self.log: list = []

    def respond(self, call: ToolCall) -> str:
        with self._lock:
            body = self.default_body
            for i, resp in enumerate(self.responses):
                if self._used[i] or not resp.matches(call):
                    continue
                if not resp.repeat:
                    self._used[i] = True
                body = resp.body
                break
            self.log.append((call, body))
            return body

    def reset(self):
        with self._lock:
            self._used = [False] * len(self.responses)
            self.log.clear()


def error_text(exc: Exception) -> str:
    return f"Error: {exc}"


class ToolRegistry:
    """Name-keyed adapters. Read-mostly; safe to share between runs."""

    def __init__(self, adapters=(), timeout: float = DEFAULT_TIMEOUT):
        self._adapters = {}
        self.timeout = timeout
        for adapter in adapters:
            self.register(adapter)

    def register(self, adapter: ToolAdapter) -> None:
        self._adapters[adapter.name] = adapter

    def __contains__(self, name):
        return name in self._adapters

    def get(self, name: str) -> ToolAdapter:
        try:
            return self._adapters[name]
        except KeyError:
            raise ToolNotRegistered(name) from None

    @property
    def names(self) -> tuple:
        return tuple(self._adapters)

    @classmethod
    def mock(cls, schemas, env: MockEnvironment, timeout: float = DEFAULT_TIMEOUT) -> "ToolRegistry":
        """One mock adapter per schema, all answering from ``env``."""
        return cls([ToolAdapter(s, "mock", lambda call, session: env.respond(call)) for s in schemas], timeout)

    def dispatch(self, call: ToolCall, session: Optional[ToolSession] = None, timeout: Optional[float] = None) -> Observation:
        """Run one call. Failures come back as ``Error: ...`` observations, never as exceptions."""
        start = time.monotonic()
        try:
            adapter = self.get(call.name)
            validate_call(call, adapter.schema)
            if adapter.kind == "mock":
                body = adapter.execute(call, session)
            else:
                limit = timeout if timeout is not None else self._call_timeout(call)
                body = _run_with_timeout(adapter, call, session, limit + GRACE)
        except (ToolNotRegistered, ToolTimeout, ToolFailure, CallValidationError) as exc:
            body = error_text(exc)
        except Exception as exc:  # adapter bug or environment fault; the agent still gets told
            body = error_text(ToolFailure(f"{type(exc).__name__}: {exc}"))
        latency = 0
        if call.name in self._adapters and self._adapters[call.name].kind == "live":
            latency = int((time.monotonic() - start) * 1000)
        return Observation(body=body, source_tool=call.name, latency_ms=latency)

    def _call_timeout(self, call: ToolCall) -> float:
        requested = call.arguments.get("timeout")
        if isinstance(requested, (int, float)) and not isinstance(requested, bool) and requested > 0:
            return float(requested)
        return self.timeout


def _run_with_timeout(adapter: ToolAdapter, call: ToolCall, session, limit: float) -> str:
    pool = ThreadPoolExecutor(max_workers=1)
    future = pool.submit(adapter.execute, call, session)
    try:
        return future.result(timeout=limit)
    except FutureTimeout:
        raise ToolTimeout(call.name, limit) from None
    finally:
        pool.shutdown(wait=False)


def fan_out(fn: Callable, items, max_workers: int = 8) -> list:
    """Apply ``fn`` to each item concurrently; results come back in input order."""
    items = list(items)
    if len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=min(max_workers, len(items))) as pool:
        return list(pool.map(fn, items))
