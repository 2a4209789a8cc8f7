"""Robust JSON extraction from model output.

Three strategies, first success wins:
1. parse the whole text,
2. strip markdown fences and parse,
3. scan for the first balanced top-level bracket of the expected shape.
"""
from __future__ import annotations

import json
import re
from typing import Any

from ..errors import Unparseable

_FENCE_RE = re.compile(r"```(?:[a-zA-Z0-9_-]+)?\s*\n(.*?)```", re.DOTALL)

_OPENERS = {"object": "{", "array": "["}
_CLOSERS = {"{": "}", "[": "]"}


def _matches(value: Any, expectation: str) -> bool:
    if expectation == "object":
        return isinstance(value, dict)
    if expectation == "array":
        return isinstance(value, list)
    raise ValueError(f"expectation must be 'object' or 'array', got {expectation!r}")


def _scan_balanced(text: str, opener: str) -> str | None:
    """Return the first balanced bracket span, honouring string literals."""
    closer = _CLOSERS[opener]
    start = text.find(opener)
    while start != -1:
        depth = 0
        in_string = False
        escaped = False
        for i in range(start, len(text)):
            ch = text[i]
            if in_string:
                if escaped:
                    escaped = False
                elif ch == "\\":
                    escaped = True
                elif ch == '"':
                    in_string = False
                continue
            if ch == '"':
                in_string = True
            elif ch == opener:
                depth += 1
            elif ch == closer:
                depth -= 1
                if depth == 0:
                    return text[start:i + 1]
        start = text.find(opener, start + 1)
    return None


def extract_json(text: str, expectation: str = "object") -> Any:
    """Extract one JSON value of the expected shape from model output."""
    if not text or not text.strip():
        raise Unparseable("empty backend output")
    trace: list[str] = []

    try:
        value = json.loads(text)
        if _matches(value, expectation):
            return value
        trace.append(f"whole-text parse produced {type(value).__name__}")
    except json.JSONDecodeError as exc:
        trace.append(f"whole-text parse failed: {exc.msg} at {exc.pos}")

    for fenced in _FENCE_RE.findall(text):
        try:
            value = json.loads(fenced)
            if _matches(value, expectation):
                return value
            trace.append(f"fenced block parse produced {type(value).__name__}")
        except json.JSONDecodeError as exc:
            trace.append(f"fenced block parse failed: {exc.msg}")

    remaining = text
    while True:
        candidate = _scan_balanced(remaining, _OPENERS[expectation])
        if candidate is None:
            trace.append("no balanced candidate found")
            break
        try:
            value = json.loads(candidate)
            if _matches(value, expectation):
                return value
            trace.append("balanced candidate parsed to wrong shape")
        except json.JSONDecodeError as exc:
            trace.append(f"balanced candidate parse failed: {exc.msg}")
        cut = remaining.find(candidate)
        remaining = remaining[cut + 1:]

    raise Unparseable(f"no {expectation} found in backend output; tried: {'; '.join(trace)}")
