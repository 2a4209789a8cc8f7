from __future__ import annotations

import json

import pytest

from coevo.backends.chat import Cassette, CassetteEntry, ChatSession, ScriptedChatBackend
from coevo.backends.sandbox import SandboxRunner
from coevo.memory import AgentSpec, AssetMemory, ExperienceItem, Origin, ToolEntry
from coevo.retrieval import HashingEmbedder

FIXED_TS = "2026-02-03T04:05:06.000000Z"

ECHO_TOOL_SOURCE = '''\
def echo_payload(x):
    """Return the input untouched, for wiring tests."""
    return {"echo": x}


TOOL_CONFIG = {
    "name": "echo_payload",
    "description": "Echoes its single argument back inside an object.",
    "function": echo_payload,
    "input_schema": {
        "type": "object",
        "properties": {"x": {"type": "integer", "description": "Any integer."}},
        "required": ["x"],
    },
    "returns": {"type": "object", "description": "Object with key 'echo'."},
}
'''

SLEEP_TOOL_SOURCE = '''\
import time


def sleep_then_echo(seconds):
    time.sleep(seconds)
    return {"slept": seconds}


TOOL_CONFIG = {
    "name": "sleep_then_echo",
    "description": "Sleeps for the requested number of seconds, then echoes it.",
    "function": sleep_then_echo,
    "input_schema": {
        "type": "object",
        "properties": {"seconds": {"type": "number", "description": "Sleep duration."}},
        "required": ["seconds"],
    },
    "returns": {"type": "object", "description": "Object with key 'slept'."},
}
'''


def make_tool(
    name: str = "echo_payload",
    description: str = "Echoes its single argument back inside an object.",
    source: str | None = None,
    schema: dict | None = None,
    created_at: str = FIXED_TS,
    origin: Origin | None = None,
) -> ToolEntry:
    return ToolEntry(
        name=name,
        description=description,
        input_schema=schema
        or {
            "type": "object",
            "properties": {"x": {"type": "integer", "description": "Any integer."}},
            "required": ["x"],
        },
        returns={"type": "object", "description": "Echo object."},
        impl_source=source if source is not None else ECHO_TOOL_SOURCE,
        runtime="python3",
        doc_refs=(),
        created_at=created_at,
        origin=origin or Origin("seeded"),
    )


def make_agent(
    role: str = "Widget Wrangler",
    tools: tuple[str, ...] = ("echo_payload",),
    agent_id: str | None = None,
    expertise: str = "Handles widget-shaped data with methodical care and structured checks.",
    created_at: str = FIXED_TS,
) -> AgentSpec:
    return AgentSpec(
        id=agent_id or f"agent-{role.lower().replace(' ', '-')}",
        role=role,
        expertise=expertise,
        suggestions=(
            "Inspect the payload structure before transforming it.",
            "Validate each field against the declared schema.",
            "Report discrepancies with concrete examples.",
        ),
        tool_names=tools,
        created_at=created_at,
        origin=Origin("seeded"),
    )


def make_experience(
    item_id: str,
    kind: str = "agent",
    polarity: str = "success",
    title: str | None = None,
    subject: str = "Widget Wrangler",
    body: str = "Checked structure before transforming and avoided schema drift.",
    created_at: str = FIXED_TS,
) -> ExperienceItem:
    if title is None:
        title = "How to Echo Payloads Without Losing Fields?" if kind == "tool" else f"Lessons from {item_id}"
    content = f"## {title}\n\n### Description\n{body}\n\n### Use Cases\n- wiring tests\n"
    return ExperienceItem(
        id=item_id,
        kind=kind,
        polarity=polarity,
        title=title,
        description=body,
        use_cases=("wiring tests",),
        content=content.rstrip("\n"),
        subject=subject,
        source_task="task-fixture",
        created_at=created_at,
    )


def scripted_session(entries: list[tuple[str | None, str]]) -> ChatSession:
    """Session over a cassette of (substring matcher, response) pairs."""
    cassette = Cassette([CassetteEntry(response=response, match=match) for match, response in entries])
    return ChatSession(ScriptedChatBackend(cassette))


def json_response(payload) -> str:
    return json.dumps(payload)


@pytest.fixture
def embedder() -> HashingEmbedder:
    return HashingEmbedder(dim=512)


@pytest.fixture
def sandbox() -> SandboxRunner:
    return SandboxRunner()


@pytest.fixture
def asset_memory() -> AssetMemory:
    memory = AssetMemory()
    memory.insert([make_tool(), make_agent()])
    return memory
