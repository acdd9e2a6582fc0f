"""Live adapters for the six task tools.

search and visit talk HTTP to configurable endpoints; code_interpreter and
execute_bash run local subprocesses; str_replace_editor and file_analyzer work
inside the session workspace. None of this is a sandbox: point it at a
container if the agent is untrusted.
"""

from __future__ import annotations

import json
import os
import queue
import re
import subprocess
import sys
import threading
from pathlib import Path
from typing import Callable, Optional

import httpx

from ..codec import ToolCall
from ..errors import ToolFailure, ToolTimeout
from ..llm import ChatMessage, SamplingParams
from .registry import DEFAULT_TIMEOUT, ToolAdapter, ToolRegistry, ToolSession, fan_out
from .truncation import truncate_message

OUTPUT_CAP = 8000
EXTRACT_INPUT_CAP = 24000
TEXT_SUFFIXES = {".txt", ".md", ".csv", ".tsv", ".json", ".jsonl", ".xml", ".html", ".htm", ".py", ".log", ".yaml", ".yml"}
IMAGE_SUFFIXES = {".jpg", ".jpeg", ".png", ".gif", ".bmp", ".webp"}

BLOCKED_COMMANDS = [
    re.compile(r"\brm\s+-[a-zA-Z]*r[a-zA-Z]*f?\s+/(\s|$)"),
    re.compile(r"\bmkfs(\.\w+)?\b"),
    re.compile(r"\b(shutdown|reboot|halt|poweroff)\b"),
    re.compile(r":\(\)\s*\{\s*:\|:&\s*\};:"),
    re.compile(r"\bdd\s+.*of=/dev/(sd|nvme|hd)"),
]

EXTRACT_SYSTEM = (
    "You extract information from a document for a research agent. "
    "Return only the evidence relevant to the stated goal, then a short summary."
)


class Extractor:
    """Goal-directed extraction through a chat backend (used by visit and file_analyzer)."""

    def __init__(self, backend, params: Optional[SamplingParams] = None):
        self.backend = backend
        self.params = params or SamplingParams.runtime()

    def __call__(self, content: str, goal: str) -> str:
        content = truncate_message(content, EXTRACT_INPUT_CAP)
        messages = [
            ChatMessage("system", EXTRACT_SYSTEM),
            ChatMessage("user", f"Goal: {goal}\n\nContent:\n{content}"),
        ]
        return self.backend.complete(messages, self.params).text


def _passthrough(content: str, goal: str) -> str:
    return truncate_message(content, OUTPUT_CAP)


# -- search / visit --------------------------------------------------------------


def make_search(base_url: str, transport=None, max_results: int = 10, timeout: float = 30.0) -> Callable:
    """SearxNG-style JSON search: ``GET {base_url}/search?q=...&format=json``."""
    client = httpx.Client(timeout=timeout, transport=transport)

    def one(query: str) -> str:
        try:
            resp = client.get(f"{base_url.rstrip('/')}/search", params={"q": query, "format": "json"})
            resp.raise_for_status()
            results = resp.json().get("results", [])[:max_results]
        except (httpx.HTTPError, ValueError) as exc:
            return f"## Search: {query}\nError: {exc}"
        lines = [f"## Search: {query}", f"{len(results)} results found"]
        for i, r in enumerate(results, 1):
            lines.append(f"{i}. {r.get('title', '')}\n   link: {r.get('url', '')}\n   summary: {r.get('content', '')}")
            extra = [f"{k}: {r[k]}" for k in ("publishedDate", "engine") if r.get(k)]
            if extra:
                lines.append("   " + "; ".join(extra))
        return "\n".join(lines)

    def execute(call: ToolCall, session) -> str:
        return "\n\n".join(fan_out(one, call.arguments["query"]))

    return execute


def make_visit(reader_url: str, extractor: Optional[Callable] = None, transport=None, timeout: float = 60.0) -> Callable:
    """Fetch pages through a reader endpoint (``{reader_url}/{page_url}``) and extract goal-relevant content."""
    client = httpx.Client(timeout=timeout, transport=transport, follow_redirects=True)
    extract = extractor or _passthrough

    def one(url: str, goal: str) -> str:
        try:
            resp = client.get(f"{reader_url.rstrip('/')}/{url}")
            resp.raise_for_status()
        except httpx.HTTPError as exc:
            return f"## {url}\nError: failed to fetch page: {exc}"
        return f"## {url}\n{extract(resp.text, goal)}"

    def execute(call: ToolCall, session) -> str:
        urls = call.arguments["url"]
        urls = [urls] if isinstance(urls, str) else urls
        goal = call.arguments["goal"]
        return "\n\n".join(fan_out(lambda u: one(u, goal), urls))

    return execute


# -- python kernel -----------------------------------------------------------------

_KERNEL_DRIVER = r"""
import contextlib, io, json, sys, traceback
ns = {"__name__": "__main__"}
proto = sys.stdout
for line in sys.stdin:
    code = json.loads(line)["code"]
    buf = io.StringIO()
    with contextlib.redirect_stdout(buf), contextlib.redirect_stderr(buf):
        try:
            exec(compile(code, "<cell>", "exec"), ns)
        except BaseException:
            traceback.print_exc()
    proto.write(json.dumps({"output": buf.getvalue()}) + "\n")
    proto.flush()
"""


class PythonKernel:
    """A long-lived interpreter subprocess; variables persist across calls."""

    def __init__(self, cwd=None, python: str = sys.executable):
        self._cmd = [python, "-u", "-c", _KERNEL_DRIVER]
        self._cwd = cwd
        self._start()

    def _start(self):
        self.proc = subprocess.Popen(
            self._cmd,
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            stderr=subprocess.DEVNULL,
            text=True,
            cwd=self._cwd,
        )
        self._lines: queue.Queue = queue.Queue()
        threading.Thread(target=self._pump, args=(self.proc, self._lines), daemon=True).start()

    @staticmethod
    def _pump(proc, lines):
        for line in proc.stdout:
            lines.put(line)
        lines.put(None)

    def run(self, code: str, timeout: float = DEFAULT_TIMEOUT) -> str:
        self.proc.stdin.write(json.dumps({"code": code}) + "\n")
        self.proc.stdin.flush()
        try:
            line = self._lines.get(timeout=timeout)
        except queue.Empty:
            self.close()
            self._start()
            raise ToolTimeout("code_interpreter", timeout) from None
        if line is None:
            self._start()
            raise ToolFailure("python kernel died; state was reset")
        return json.loads(line)["output"]

    def close(self):
        if self.proc.poll() is None:
            self.proc.kill()
            self.proc.wait()


def make_code_interpreter(timeout: float = DEFAULT_TIMEOUT) -> Callable:
    def execute(call: ToolCall, session: ToolSession) -> str:
        if session.kernel is None:
            session.kernel = PythonKernel(cwd=session.workspace)
        out = session.kernel.run(call.arguments["code"], timeout=timeout)
        return truncate_message(out or "(no output)", OUTPUT_CAP)

    return execute


# -- shell ---------------------------------------------------------------------------


def make_bash(default_timeout: float = DEFAULT_TIMEOUT) -> Callable:
    def execute(call: ToolCall, session: ToolSession) -> str:
        command = call.arguments["command"]
        for pattern in BLOCKED_COMMANDS:
            if pattern.search(command):
                raise ToolFailure(f"command blocked by safety policy: {command!r}")
        timeout = call.arguments.get("timeout") or default_timeout
        cwd = call.arguments.get("cwd") or session.cwd
        try:
            proc = subprocess.run(
                ["bash", "-c", command],
                cwd=cwd,
                capture_output=True,
                text=True,
                timeout=timeout,
            )
        except subprocess.TimeoutExpired:
            raise ToolTimeout("execute_bash", timeout) from None
        except OSError as exc:
            raise ToolFailure(str(exc)) from exc
        out = proc.stdout + (proc.stderr if proc.stderr else "")
        if proc.returncode:
            out += f"\n[exit code {proc.returncode}]"
        return truncate_message(out or "(no output)", OUTPUT_CAP)

    return execute


# -- editor ----------------------------------------------------------------------------


def _resolve(session: ToolSession, path: str) -> Path:
    p = Path(path)
    return p if p.is_absolute() else session.workspace / p


def _numbered(lines, start: int = 1) -> str:
    return "\n".join(f"{i:6d}\t{line}" for i, line in enumerate(lines, start))


def editor_execute(call: ToolCall, session: ToolSession) -> str:
    args = call.arguments
    cmd = args["command"]
    path = _resolve(session, args["path"])

    if cmd == "view":
        if path.is_dir():
            entries = sorted(p.relative_to(path).as_posix() for p in path.rglob("*") if len(p.relative_to(path).parts) <= 2)
            return "\n".join(entries) or "(empty directory)"
        if not path.exists():
            raise ToolFailure(f"{path} does not exist")
        lines = path.read_text().expandtabs().splitlines()
        start, end = 1, len(lines)
        if "view_range" in args:
            rng = args["view_range"]
            if len(rng) != 2:
                raise ToolFailure("view_range must be [start, end]")
            start, end = rng[0], (len(lines) if rng[1] == -1 else rng[1])
            if not 1 <= start <= max(end, 1) or end > len(lines):
                raise ToolFailure(f"invalid view_range {rng} for a {len(lines)}-line file")
        return truncate_message(_numbered(lines[start - 1 : end], start), OUTPUT_CAP)

    if cmd == "create":
        if "file_text" not in args:
            raise ToolFailure("'create' requires file_text")
        if path.exists():
            raise ToolFailure(f"{path} already exists; create cannot overwrite")
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(args["file_text"])
        session.edit_history.append((path, None))
        return f"File created: {path}"

    if cmd == "str_replace":
        if "old_str" not in args:
            raise ToolFailure("'str_replace' requires old_str")
        text = path.read_text() if path.exists() else None
        if text is None:
            raise ToolFailure(f"{path} does not exist")
        count = text.count(args["old_str"])
        if count != 1:
            raise ToolFailure(f"old_str must appear exactly once, found {count} occurrences")
        new = text.replace(args["old_str"], args.get("new_str", ""), 1)
        session.edit_history.append((path, text))
        path.write_text(new)
        at = text[: text.index(args["old_str"])].count("\n")
        snippet = new.splitlines()[max(0, at - 3) : at + 4 + args.get("new_str", "").count("\n")]
        return f"Edited {path}:\n" + _numbered(snippet, max(1, at - 2))

    if cmd == "insert":
        if "insert_line" not in args or "new_str" not in args:
            raise ToolFailure("'insert' requires insert_line and new_str")
        if not path.exists():
            raise ToolFailure(f"{path} does not exist")
        text = path.read_text()
        lines = text.splitlines(keepends=True)
        n = args["insert_line"]
        if not 0 <= n <= len(lines):
            raise ToolFailure(f"insert_line {n} out of range 0..{len(lines)}")
        addition = args["new_str"] if args["new_str"].endswith("\n") else args["new_str"] + "\n"
        session.edit_history.append((path, text))
        path.write_text("".join(lines[:n]) + addition + "".join(lines[n:]))
        return f"Inserted {addition.count(chr(10))} line(s) into {path} after line {n}"

    if cmd == "undo_edit":
        for i in range(len(session.edit_history) - 1, -1, -1):
            hist_path, previous = session.edit_history[i]
            if hist_path == path:
                del session.edit_history[i]
                if previous is None:
                    path.unlink(missing_ok=True)
                    return f"Undid creation of {path}"
                path.write_text(previous)
                return f"Reverted last edit to {path}"
        raise ToolFailure(f"no edit history for {path}")

    raise ToolFailure(f"unknown editor command {cmd!r}")


# -- file analyzer -------------------------------------------------------------------


def make_file_analyzer(extractor: Optional[Callable] = None, vision: Optional[Callable] = None) -> Callable:
    """``vision(path, goal) -> str`` handles images; without it images are reported as unsupported."""
    extract = extractor or _passthrough

    def execute(call: ToolCall, session: ToolSession) -> str:
        path = _resolve(session, call.arguments["file_path"])
        goal = call.arguments["goal"]
        if not path.is_file():
            raise ToolFailure(f"file not found: {path}")
        suffix = path.suffix.lower()
        if suffix in IMAGE_SUFFIXES:
            if vision is None:
                raise ToolFailure("image analysis backend not configured")
            return vision(path, goal)
        if suffix in TEXT_SUFFIXES or not suffix:
            return extract(path.read_text(errors="replace"), goal)
        raise ToolFailure(f"unsupported file type {suffix!r}")

    return execute


def live_registry(
    pool,
    search_url: Optional[str] = None,
    reader_url: Optional[str] = None,
    extractor: Optional[Callable] = None,
    vision: Optional[Callable] = None,
    timeout: float = DEFAULT_TIMEOUT,
    transport=None,
) -> ToolRegistry:
    """Registry with a live adapter for every pool tool that can be built from the given endpoints."""
    search_url = search_url or os.environ.get("TOOLSELF_SEARCH_URL")
    reader_url = reader_url or os.environ.get("TOOLSELF_READER_URL")
    builders = {
        "code_interpreter": lambda: make_code_interpreter(timeout),
        "execute_bash": lambda: make_bash(timeout),
        "str_replace_editor": lambda: editor_execute,
        "file_analyzer": lambda: make_file_analyzer(extractor, vision),
    }
    if search_url:
        builders["search"] = lambda: make_search(search_url, transport=transport)
    if reader_url:
        builders["visit"] = lambda: make_visit(reader_url, extractor, transport=transport)
    adapters = [ToolAdapter(pool.tools[name], "live", build()) for name, build in builders.items() if name in pool.tools]
    return ToolRegistry(adapters, timeout=timeout)
