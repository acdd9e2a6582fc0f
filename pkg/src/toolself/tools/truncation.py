"""Observation-size policies for verbose (code-task) runs."""

from __future__ import annotations

import re
from dataclasses import replace

OLD_OUTPUT_RE = re.compile(r"^Old environment output: \(\d+ lines omitted\)$")


def truncation_marker(removed: int) -> str:
    return f"\n... (truncated {removed} characters) ..."


def truncate_message(body: str, char_cap: int = 8000) -> str:
    """Keep the head of ``body`` so that head plus marker fits in ``char_cap``.

    The marker states exactly how many characters were cut.
    """
    if char_cap <= len(truncation_marker(10 ** len(str(len(body))))):
        raise ValueError("char_cap too small to hold the truncation marker")
    if len(body) <= char_cap:
        return body
    removed = len(body) - char_cap  # lower bound; grows by the marker length
    while True:
        head = char_cap - len(truncation_marker(removed))
        actual = len(body) - head
        if actual == removed:
            return body[:head] + truncation_marker(removed)
        removed = actual


def old_output_marker(body: str) -> str:
    return f"Old environment output: ({len(body.splitlines())} lines omitted)"


def compress_old_observations(steps, keep: int = 10) -> list:
    """Replace all but the last ``keep`` observation bodies with a one-line line-count marker.

    Works on any step record exposing ``observation.body`` (dataclasses).
    Thoughts and calls are left alone; step count and order are preserved.
    """
    steps = list(steps)
    cut = max(0, len(steps) - keep)
    out = []
    for i, step in enumerate(steps):
        body = step.observation.body
        if i < cut and not OLD_OUTPUT_RE.match(body):
            obs = replace(step.observation, body=old_output_marker(body), truncated=True)
            step = replace(step, observation=obs)
        out.append(step)
    return out
