"""A deliberately plain single-loop ReAct agent with one fixed configuration.

It shares only the prompt template and the tool backends with the package;
parsing, observation wrapping, and the loop itself are written out here so the
comparison in the acceptance tests is between two implementations.
"""

import json
import re

from toolself.config import StageConfiguration
from toolself.llm import ChatMessage
from toolself.prompts import inference_schemas, render_inference_prompt

TOOL_CALL = re.compile(r"<tool_call>(.*?)</tool_call>", re.S)
THINK = re.compile(r"<think>(.*?)</think>", re.S)


def wrap(body: str) -> str:
    body = re.sub(r"<(\\*)/tool_response>", lambda m: "<\\" + m.group(1) + "/tool_response>", body)
    return "<tool_response>\n" + body + "\n</tool_response>"


def run_react(task, strategy, pool, backend, env, params, max_steps=200):
    """Returns ``(steps, final)`` where steps are dicts of thought, call, observation, raw."""
    config = StageConfiguration(0, task, strategy, pool.names, "")
    bundle = render_inference_prompt(task, config, inference_schemas(config, pool, include_reconfigure=False))
    messages = bundle.messages()
    steps = []
    for _ in range(max_steps):
        text = backend.complete(messages, params).text
        payload = json.loads(TOOL_CALL.findall(text)[0].strip())
        thoughts = THINK.findall(text)
        thought = thoughts[-1].strip() if thoughts else ""
        if payload["name"] == "finish":
            return steps, payload["arguments"]["final_result"]
        body = env.respond_raw(payload["name"], payload["arguments"])
        steps.append({"thought": thought, "call": {"name": payload["name"], "arguments": payload["arguments"]}, "observation": body, "raw": text})
        messages = messages + [ChatMessage("assistant", text), ChatMessage("user", wrap(body))]
    return steps, None


class ReferenceEnv:
    """Same matching rule as the package's mock environment, restated: first unused entry with equal args."""

    def __init__(self, responses, default_body):
        self.responses = [dict(r) for r in responses]
        self.used = [False] * len(self.responses)
        self.default_body = default_body

    def respond_raw(self, name, arguments):
        for i, r in enumerate(self.responses):
            if self.used[i] or r["tool"] != name:
                continue
            if any(arguments.get(k) != v for k, v in (r.get("args") or {}).items()):
                continue
            if not r.get("repeat"):
                self.used[i] = True
            return r["body"]
        return self.default_body
