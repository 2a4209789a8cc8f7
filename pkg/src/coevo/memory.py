"""Dual memory: the asset banks (agents + tools) and the experience store.

The asset side holds execution-ready capabilities keyed by id (agents) and
name (tools); the experience side is an append-only list of distilled
lessons. All mutation goes through batch inserts with set-union semantics:
duplicates are rejected, never overwritten, and a failed batch leaves the
store untouched.
"""
from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from types import MappingProxyType
from typing import Any, Collection, Iterable, Mapping, Union

from .errors import (
    BadName,
    DuplicateId,
    DuplicateKey,
    DuplicateRole,
    MalformedMemoryEntry,
    MissingField,
    MissingToolConfig,
    SchemaInconsistent,
    SuggestionCountOutOfRange,
    UnexpectedField,
    UnknownTool,
    ValidationError,
)

TOOL_NAME_RE = re.compile(r"^[a-z][a-z0-9_]*$")
SUGGESTION_MIN, SUGGESTION_MAX = 3, 5

ORIGIN_KINDS = ("seeded", "created")
EXPERIENCE_KINDS = ("tool", "agent")
POLARITIES = ("success", "failure")

_TOOL_CONFIG_RE = re.compile(r"^TOOL_CONFIG\s*=", re.MULTILINE)


def utc_now_iso() -> str:
    return datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%S.%fZ")


def stable_agent_id(role: str) -> str:
    digest = hashlib.sha256(role.strip().lower().encode("utf-8")).hexdigest()
    return f"agent-{digest[:12]}"


@dataclass(frozen=True)
class Origin:
    kind: str  # "seeded" | "created"
    source_task: str | None = None

    def __post_init__(self) -> None:
        if self.kind not in ORIGIN_KINDS:
            raise ValidationError(f"origin kind must be one of {ORIGIN_KINDS}, got {self.kind!r}")

    def to_dict(self) -> dict[str, Any]:
        return {"kind": self.kind, "source_task": self.source_task}

    @classmethod
    def from_dict(cls, raw: Mapping[str, Any]) -> "Origin":
        return cls(kind=raw["kind"], source_task=raw.get("source_task"))


@dataclass(frozen=True)
class AgentSpec:
    """An expert agent: role identity, domain expertise, behaviour hints, and its toolbox."""

    id: str
    role: str
    expertise: str
    suggestions: tuple[str, ...]
    tool_names: tuple[str, ...]
    created_at: str
    origin: Origin

    def key_text(self) -> str:
        """Retrieval key: role, expertise, and suggestions joined by single newlines."""
        return "\n".join((self.role, self.expertise, *self.suggestions))

    def to_dict(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "role": self.role,
            "expertise": self.expertise,
            "suggestions": list(self.suggestions),
            "tool_names": list(self.tool_names),
            "created_at": self.created_at,
            "origin": self.origin.to_dict(),
        }

    @classmethod
    def from_dict(cls, raw: Mapping[str, Any]) -> "AgentSpec":
        return cls(
            id=raw["id"],
            role=raw["role"],
            expertise=raw["expertise"],
            suggestions=tuple(raw["suggestions"]),
            tool_names=tuple(raw["tool_names"]),
            created_at=raw["created_at"],
            origin=Origin.from_dict(raw["origin"]),
        )


@dataclass(frozen=True)
class ToolEntry:
    """An executable tool: manifest plus the verbatim module source it ships with."""

    name: str
    description: str
    input_schema: Mapping[str, Any]
    returns: Mapping[str, Any]
    impl_source: str
    runtime: str
    doc_refs: tuple[str, ...]
    created_at: str
    origin: Origin

    def key_text(self) -> str:
        """Retrieval key: name and functional description joined by a newline."""
        return f"{self.name}\n{self.description}"

    def manifest_dict(self) -> dict[str, Any]:
        return {
            "name": self.name,
            "description": self.description,
            "input_schema": dict(self.input_schema),
            "returns": dict(self.returns),
            "runtime": self.runtime,
            "doc_refs": list(self.doc_refs),
            "created_at": self.created_at,
            "origin": self.origin.to_dict(),
        }

    def to_dict(self) -> dict[str, Any]:
        data = self.manifest_dict()
        data["impl_source"] = self.impl_source
        return data

    @classmethod
    def from_dict(cls, raw: Mapping[str, Any]) -> "ToolEntry":
        return cls(
            name=raw["name"],
            description=raw["description"],
            input_schema=dict(raw["input_schema"]),
            returns=dict(raw["returns"]),
            impl_source=raw["impl_source"],
            runtime=raw["runtime"],
            doc_refs=tuple(raw["doc_refs"]),
            created_at=raw["created_at"],
            origin=Origin.from_dict(raw["origin"]),
        )


@dataclass(frozen=True)
class ExperienceItem:
    """One distilled lesson: a titled markdown body with polarity and provenance."""

    id: str
    kind: str  # "tool" | "agent"
    polarity: str  # "success" | "failure"
    title: str
    description: str
    use_cases: tuple[str, ...]
    content: str
    subject: str
    source_task: str
    created_at: str

    def key_text(self) -> str:
        return f"{self.title}\n{self.description}"

    def rendered(self) -> str:
        """Full markdown body; first line is the '## ' title heading."""
        return self.content

    def to_dict(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "kind": self.kind,
            "polarity": self.polarity,
            "title": self.title,
            "description": self.description,
            "use_cases": list(self.use_cases),
            "content": self.content,
            "subject": self.subject,
            "source_task": self.source_task,
            "created_at": self.created_at,
        }

    @classmethod
    def from_dict(cls, raw: Mapping[str, Any]) -> "ExperienceItem":
        return cls(
            id=raw["id"],
            kind=raw["kind"],
            polarity=raw["polarity"],
            title=raw["title"],
            description=raw["description"],
            use_cases=tuple(raw["use_cases"]),
            content=raw["content"],
            subject=raw["subject"],
            source_task=raw["source_task"],
            created_at=raw["created_at"],
        )


AssetRecord = Union[AgentSpec, ToolEntry]


# --- validation -------------------------------------------------------------

_AGENT_RAW_FIELDS = {
    "id", "role", "expertise", "suggestions", "tools", "tool_names",
    "created_at", "origin", "source_task",
}


def validate_agent_spec(
    raw: Mapping[str, Any],
    tools: Collection[str],
    existing_roles: Collection[str] = (),
    *,
    origin: Origin | None = None,
    created_at: str | None = None,
) -> AgentSpec:
    """Normalize a raw agent record (backend output or seed file) into an AgentSpec.

    `tools` is a view of known tool names; `existing_roles` the roles already
    in the bank. Unknown extra fields are rejected rather than ignored.
    """
    if not isinstance(raw, Mapping):
        raise ValidationError(f"agent record must be an object, got {type(raw).__name__}")
    extra = set(raw) - _AGENT_RAW_FIELDS
    if extra:
        raise UnexpectedField(f"unexpected agent fields: {sorted(extra)}")
    for name in ("role", "expertise"):
        value = raw.get(name)
        if not isinstance(value, str) or not value.strip():
            raise MissingField(f"agent field {name!r} missing or empty")
    role = raw["role"].strip()

    suggestions_raw = raw.get("suggestions")
    if suggestions_raw is None:
        raise MissingField("agent field 'suggestions' missing")
    suggestions = [str(s).strip() for s in suggestions_raw]
    if not SUGGESTION_MIN <= len(suggestions) <= SUGGESTION_MAX:
        raise SuggestionCountOutOfRange(
            f"suggestions must have {SUGGESTION_MIN}-{SUGGESTION_MAX} entries, got {len(suggestions)}"
        )
    if any(not s for s in suggestions):
        raise SuggestionCountOutOfRange("suggestions must all be non-empty")

    tool_names_raw = raw.get("tools", raw.get("tool_names"))
    if tool_names_raw is None:
        raise MissingField("agent field 'tools' missing")
    tool_names = [str(t) for t in tool_names_raw]
    for name in tool_names:
        if name not in tools:
            raise UnknownTool(name)

    lowered = {r.strip().lower() for r in existing_roles}
    if role.lower() in lowered:
        raise DuplicateRole(f"role {role!r} already present in the agent bank")

    origin_value = origin
    if origin_value is None:
        origin_value = Origin.from_dict(raw["origin"]) if "origin" in raw else Origin("created", raw.get("source_task"))
    return AgentSpec(
        id=raw.get("id") or stable_agent_id(role),
        role=role,
        expertise=raw["expertise"].strip(),
        suggestions=tuple(suggestions),
        tool_names=tuple(tool_names),
        created_at=raw.get("created_at") or created_at or utc_now_iso(),
        origin=origin_value,
    )


def _check_tool_config_declares(name: str, source: str) -> None:
    """String-level check only: the store never executes untrusted tool code."""
    if not _TOOL_CONFIG_RE.search(source):
        raise MissingToolConfig("impl_source does not declare a top-level TOOL_CONFIG")
    name_pattern = re.compile(r"""["']name["']\s*:\s*["']%s["']""" % re.escape(name))
    if not name_pattern.search(source):
        raise MissingToolConfig(f"TOOL_CONFIG does not name the tool {name!r}")


def validate_tool_entry(
    raw: Mapping[str, Any],
    *,
    origin: Origin | None = None,
    created_at: str | None = None,
) -> ToolEntry:
    """Normalize a raw tool record plus module source into a ToolEntry."""
    if not isinstance(raw, Mapping):
        raise ValidationError(f"tool record must be an object, got {type(raw).__name__}")
    for field_name in ("name", "description", "input_schema", "returns"):
        if field_name not in raw:
            raise MissingField(f"tool field {field_name!r} missing")
    name = raw["name"]
    if not isinstance(name, str) or not TOOL_NAME_RE.match(name):
        raise BadName(f"tool name must match [a-z][a-z0-9_]*, got {name!r}")
    description = raw["description"]
    if not isinstance(description, str) or not description.strip():
        raise MissingField("tool description missing or empty")

    schema = raw["input_schema"]
    if not isinstance(schema, Mapping):
        raise SchemaInconsistent("input_schema must be an object")
    properties = schema.get("properties", {})
    if not isinstance(properties, Mapping):
        raise SchemaInconsistent("input_schema.properties must be an object")
    required = schema.get("required", [])
    if not isinstance(required, (list, tuple)):
        raise SchemaInconsistent("input_schema.required must be a list")
    for param in required:
        if param not in properties:
            raise SchemaInconsistent(f"required parameter {param!r} absent from properties")

    returns = raw["returns"]
    if not isinstance(returns, Mapping):
        raise SchemaInconsistent("returns must be an object")

    source = raw.get("module_code", raw.get("impl_source"))
    if not isinstance(source, str) or not source.strip():
        raise MissingToolConfig("tool module source missing or empty")
    _check_tool_config_declares(name, source)

    origin_value = origin
    if origin_value is None:
        origin_value = Origin.from_dict(raw["origin"]) if "origin" in raw else Origin("created", raw.get("source_task"))
    return ToolEntry(
        name=name,
        description=description.strip(),
        input_schema=dict(schema),
        returns=dict(returns),
        impl_source=source,
        runtime=raw.get("runtime", "python3"),
        doc_refs=tuple(raw.get("doc_refs", ())),
        created_at=raw.get("created_at") or created_at or utc_now_iso(),
        origin=origin_value,
    )


_TOOL_TITLE_PREFIXES = ("How to", "How can I")


def validate_experience_item(item: ExperienceItem) -> ExperienceItem:
    """Check the structural invariants of one experience item."""
    if item.kind not in EXPERIENCE_KINDS:
        raise MalformedMemoryEntry(f"experience kind must be one of {EXPERIENCE_KINDS}, got {item.kind!r}")
    if item.polarity not in POLARITIES:
        raise MalformedMemoryEntry(f"experience polarity must be one of {POLARITIES}, got {item.polarity!r}")
    if not item.title.strip():
        raise MalformedMemoryEntry("experience title must be non-empty")
    if item.kind == "tool" and not item.title.startswith(_TOOL_TITLE_PREFIXES):
        raise MalformedMemoryEntry(
            f"tool experience title must begin with one of {_TOOL_TITLE_PREFIXES}, got {item.title!r}"
        )
    first_line = item.content.split("\n", 1)[0]
    if first_line.strip() != f"## {item.title}".strip():
        raise MalformedMemoryEntry("experience content must begin with its '## ' title line")
    if "### Description" not in item.content:
        raise MalformedMemoryEntry("experience content must contain a '### Description' heading")
    return item


# --- stores -----------------------------------------------------------------

class AssetMemory:
    """Agent bank keyed by id plus tool bank keyed by name, with referential integrity."""

    def __init__(self) -> None:
        self._agents: dict[str, AgentSpec] = {}
        self._tools: dict[str, ToolEntry] = {}

    @property
    def agents(self) -> Mapping[str, AgentSpec]:
        return MappingProxyType(self._agents)

    @property
    def tools(self) -> Mapping[str, ToolEntry]:
        return MappingProxyType(self._tools)

    def roles(self) -> set[str]:
        return {a.role for a in self._agents.values()}

    def agent_by_role(self, role: str) -> AgentSpec | None:
        wanted = role.strip().lower()
        for agent in self._agents.values():
            if agent.role.lower() == wanted:
                return agent
        return None

    def insert(self, finals: Iterable[AssetRecord]) -> list[str]:
        """Batch insert with union semantics: all-or-nothing, duplicates rejected.

        Agents may reference tools that appear earlier in the same batch.
        Returns the inserted keys (tool names and agent ids) in order.
        """
        staged_tools = dict(self._tools)
        staged_agents = dict(self._agents)
        staged_roles = {a.role.lower() for a in staged_agents.values()}
        inserted: list[str] = []
        for record in finals:
            if isinstance(record, ToolEntry):
                if record.name in staged_tools:
                    raise DuplicateKey(f"tool {record.name!r} already in the tool bank")
                staged_tools[record.name] = record
                inserted.append(record.name)
            elif isinstance(record, AgentSpec):
                if record.id in staged_agents:
                    raise DuplicateKey(f"agent id {record.id!r} already in the agent bank")
                if record.role.lower() in staged_roles:
                    raise DuplicateRole(f"role {record.role!r} already in the agent bank")
                for name in record.tool_names:
                    if name not in staged_tools:
                        raise UnknownTool(name)
                staged_agents[record.id] = record
                staged_roles.add(record.role.lower())
                inserted.append(record.id)
            else:
                raise ValidationError(f"cannot insert {type(record).__name__} into asset memory")
        self._tools = staged_tools
        self._agents = staged_agents
        return inserted

    def check_integrity(self) -> None:
        roles_seen: set[str] = set()
        for agent in self._agents.values():
            lowered = agent.role.lower()
            if lowered in roles_seen:
                raise DuplicateRole(f"role {agent.role!r} duplicated in the agent bank")
            roles_seen.add(lowered)
            for name in agent.tool_names:
                if name not in self._tools:
                    raise UnknownTool(name)


class ExperienceMemory:
    """Append-only experience store; prior items are never mutated or removed."""

    def __init__(self) -> None:
        self._items: list[ExperienceItem] = []
        self._ids: set[str] = set()

    @property
    def items(self) -> tuple[ExperienceItem, ...]:
        return tuple(self._items)

    def __len__(self) -> int:
        return len(self._items)

    def insert(self, items: Iterable[ExperienceItem]) -> list[str]:
        """Batch append; all-or-nothing; returns inserted ids in order."""
        batch = list(items)
        seen = set(self._ids)
        for item in batch:
            validate_experience_item(item)
            if item.id in seen:
                raise DuplicateId(f"experience id {item.id!r} already stored")
            seen.add(item.id)
        self._items.extend(batch)
        self._ids = seen
        return [item.id for item in batch]


@dataclass
class Memories:
    """The two stores a task run reads from and evolution writes back to."""

    assets: AssetMemory = field(default_factory=AssetMemory)
    experiences: ExperienceMemory = field(default_factory=ExperienceMemory)


class AssetView:
    """Read view over asset memory plus this task's not-yet-merged creations.

    Newly created assets stay out of the banks until backward evolution
    validates them, but forward inference must already resolve and recruit
    them; this overlay provides that window.
    """

    def __init__(
        self,
        memory: AssetMemory,
        pending_tools: Mapping[str, ToolEntry] | None = None,
        pending_agents: Mapping[str, AgentSpec] | None = None,
    ) -> None:
        self._memory = memory
        self._pending_tools = dict(pending_tools or {})
        self._pending_agents = dict(pending_agents or {})

    @property
    def tools(self) -> dict[str, ToolEntry]:
        merged = dict(self._memory.tools)
        merged.update(self._pending_tools)
        return merged

    @property
    def agents(self) -> dict[str, AgentSpec]:
        merged = dict(self._memory.agents)
        merged.update(self._pending_agents)
        return merged

    def roles(self) -> set[str]:
        return {a.role for a in self.agents.values()}

    def tool_names(self) -> set[str]:
        return set(self.tools)


def clone_with_created_at(record: AssetRecord, created_at: str) -> AssetRecord:
    return replace(record, created_at=created_at)
