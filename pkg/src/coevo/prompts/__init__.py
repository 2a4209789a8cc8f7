"""Prompt templates shipped as data files, plus the placeholder renderer.

Templates contain literal JSON braces, so rendering replaces only the
named placeholders it is given instead of using str.format. Required
placeholders that are absent (or duplicated, when exactly-once is
demanded) raise MissingPlaceholder so template drift fails loudly.
"""
from __future__ import annotations

from functools import lru_cache
from importlib import resources
from typing import Mapping

from ..errors import MissingPlaceholder

TEMPLATE_NAMES = (
    "planning",
    "assess_tool_need",
    "tool_spec",
    "tool_creation",
    "agent_creation",
    "react",
    "react_format_example",
    "aggregation",
    "judge",
    "test_synthesis",
    "tool_revision",
    "agent_revision",
    "tool_memory",
    "agent_memory_success",
    "agent_memory_failure",
)


@lru_cache(maxsize=None)
def load_template(name: str) -> str:
    if name not in TEMPLATE_NAMES:
        raise KeyError(f"unknown template {name!r}; known: {TEMPLATE_NAMES}")
    ref = resources.files(__package__).joinpath(f"templates/{name}.txt")
    return ref.read_text(encoding="utf-8")


def render(template: str, values: Mapping[str, str], *, exactly_once: bool = False) -> str:
    """Substitute {name} markers for every provided value.

    Every provided placeholder must occur in the template; with
    exactly_once each must occur exactly one time.
    """
    out = template
    for name, value in values.items():
        marker = "{" + name + "}"
        count = out.count(marker)
        if count == 0:
            raise MissingPlaceholder(name)
        if exactly_once and count != 1:
            raise MissingPlaceholder(name, detail=f"occurs {count} times, expected exactly once")
        out = out.replace(marker, str(value))
    return out


def render_template(name: str, values: Mapping[str, str], *, exactly_once: bool = False) -> str:
    return render(load_template(name), values, exactly_once=exactly_once)
