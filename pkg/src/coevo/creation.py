"""Experience-guided creation of missing capabilities.

Tool synthesis runs in three stages: a formal spec draft, a grounding pass
(web search plus relevant stored experience), and the implementation call
conditioned on both. Agent synthesis follows tool synthesis so a new agent
can reference tools created for the same sub-task. The requested tool name
must survive every stage byte-identically; a rename is a hard failure.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from typing import Any, Collection, Mapping, Sequence

from .backends.chat import ChatSession
from .backends.search import SearchClient, SearchResult, web_search
from .config import GroundingCaps, RetrievalConfig
from .errors import (
    ContractViolation,
    InputError,
    NameMutated,
    SearchUnavailable,
)
from .memory import (
    TOOL_NAME_RE,
    AgentSpec,
    ExperienceItem,
    Origin,
    ToolEntry,
    validate_agent_spec,
    validate_tool_entry,
)
from .planner import TaskPlan
from .prompts import render_template
from .retrieval import EmbeddingIndex, rank_experiences

logger = logging.getLogger(__name__)

NONE_MARKER = "(none)"


def render_tool_listing(tools: Mapping[str, ToolEntry]) -> str:
    if not tools:
        return NONE_MARKER
    return "\n".join(f"- {name}: {tools[name].description}" for name in sorted(tools))


@dataclass(frozen=True)
class MissingToolStub:
    name: str
    description: str
    reason: str
    example_input_output: str = ""

    def to_dict(self) -> dict[str, str]:
        return {
            "name": self.name,
            "description": self.description,
            "reason": self.reason,
            "example_input_output": self.example_input_output,
        }


@dataclass
class ToolNeedAssessment:
    need_creation: bool
    required_capabilities: tuple[str, ...]
    matching_tools: tuple[str, ...]
    missing_tools: tuple[MissingToolStub, ...]
    justification: str
    warnings: tuple[str, ...] = ()


@dataclass(frozen=True)
class ToolSpecDraft:
    tool_name: str
    tool_description: str
    input_parameters: tuple[Mapping[str, Any], ...]
    output_format: Mapping[str, Any]
    core_logic: tuple[str, ...]

    def spec_text(self) -> str:
        return f"{self.tool_name}\n{self.tool_description}"


@dataclass
class GroundingBundle:
    web_snippets: tuple[SearchResult, ...]
    experience_items: tuple[tuple[str, float], ...]  # (experience id, score)
    experience_texts: tuple[str, ...]  # rendered markdown, aligned with experience_items
    search_degraded: bool = False

    def citations(self) -> tuple[str, ...]:
        urls = tuple(snippet.url for snippet in self.web_snippets)
        ids = tuple(item_id for item_id, _ in self.experience_items)
        return urls + ids

    def render(self) -> str:
        sections: list[str] = []
        if self.web_snippets:
            lines = [f"- {s.url}\n  {s.excerpt}" for s in self.web_snippets]
            sections.append("Web references:\n" + "\n".join(lines))
        elif self.search_degraded:
            sections.append("Web references: unavailable (search disabled).")
        if self.experience_texts:
            sections.append("Prior implementation experience:\n\n" + "\n\n".join(self.experience_texts))
        return "\n\n".join(sections) if sections else NONE_MARKER


def _require_type(value: Any, expected: type, name: str) -> Any:
    if expected is bool:
        if not isinstance(value, bool):
            raise ContractViolation(f"field {name!r} must be a boolean, got {type(value).__name__}")
    elif not isinstance(value, expected) or isinstance(value, bool) and expected is not bool:
        raise ContractViolation(f"field {name!r} must be {expected.__name__}, got {type(value).__name__}")
    return value


def _string_list(value: Any, name: str) -> tuple[str, ...]:
    _require_type(value, list, name)
    out = []
    for entry in value:
        if not isinstance(entry, str):
            raise ContractViolation(f"field {name!r} must contain only strings")
        out.append(entry)
    return tuple(out)


def assess_tool_need(
    plan: TaskPlan,
    tools: Mapping[str, ToolEntry],
    session: ChatSession,
) -> ToolNeedAssessment:
    """Decide, reuse-first, whether the plan needs tools that do not exist yet."""
    prompt = render_template(
        "assess_tool_need",
        {"task": plan.describe(), "available_tools": render_tool_listing(tools)},
    )
    raw = session.complete_json("", prompt, expectation="object")

    need_creation = _require_type(raw.get("need_creation"), bool, "need_creation")
    capabilities = _string_list(raw.get("required_capabilities", []), "required_capabilities")
    matching = _string_list(raw.get("matching_tools", []), "matching_tools")
    justification = _require_type(raw.get("justification", ""), str, "justification")

    missing_raw = raw.get("missing_tools", [])
    _require_type(missing_raw, list, "missing_tools")
    stubs: list[MissingToolStub] = []
    seen_names: set[str] = set()
    for entry in missing_raw:
        if not isinstance(entry, Mapping):
            raise ContractViolation("missing_tools entries must be objects")
        name = entry.get("name")
        if not isinstance(name, str) or not TOOL_NAME_RE.match(name):
            raise ContractViolation(f"missing tool name must be snake_case, got {name!r}")
        if name in seen_names:
            raise ContractViolation(f"missing tool name {name!r} duplicated")
        seen_names.add(name)
        stubs.append(
            MissingToolStub(
                name=name,
                description=_require_type(entry.get("description", ""), str, "missing_tools.description"),
                reason=_require_type(entry.get("reason", ""), str, "missing_tools.reason"),
                example_input_output=str(entry.get("example_input_output", "")),
            )
        )

    if need_creation != bool(stubs):
        raise ContractViolation(
            f"need_creation={need_creation} inconsistent with {len(stubs)} missing tool(s)"
        )

    warnings: list[str] = []
    kept_matching = []
    for name in matching:
        if name in tools:
            kept_matching.append(name)
        else:
            message = f"assessment matched unknown tool {name!r}; dropped"
            warnings.append(message)
            logger.warning(message)

    return ToolNeedAssessment(
        need_creation=need_creation,
        required_capabilities=capabilities,
        matching_tools=tuple(kept_matching),
        missing_tools=tuple(stubs),
        justification=justification,
        warnings=tuple(warnings),
    )


def generate_tool_spec(
    missing: MissingToolStub,
    session: ChatSession,
    tools: Mapping[str, ToolEntry] | None = None,
) -> ToolSpecDraft:
    """Expand a missing-tool stub into a formal implementable specification."""
    if not missing.name or not missing.description.strip():
        raise InputError("missing-tool stub needs both a name and a description")
    stub_text = (
        f"Create exactly one tool for this gap:\n"
        f"- name: {missing.name}\n"
        f"- description: {missing.description}\n"
        f"- reason: {missing.reason}\n"
        f"- example: {missing.example_input_output}"
    )
    prompt = render_template(
        "tool_spec",
        {"task": stub_text, "available_tools": render_tool_listing(tools or {})},
    )
    raw = session.complete_json("", prompt, expectation="object")
    specs = raw.get("tool_creation_specs")
    if not isinstance(specs, list) or not specs:
        raise ContractViolation("tool spec output must contain a non-empty 'tool_creation_specs' array")
    chosen = next((s for s in specs if isinstance(s, Mapping) and s.get("tool_name") == missing.name), None)
    if chosen is None:
        produced = [s.get("tool_name") for s in specs if isinstance(s, Mapping)]
        raise NameMutated(f"spec stage renamed {missing.name!r}; produced {produced}")

    core_logic = _string_list(chosen.get("core_logic", []), "core_logic")
    if not core_logic:
        raise ContractViolation("core_logic must be a non-empty list of steps")
    params_raw = chosen.get("input_parameters", [])
    _require_type(params_raw, list, "input_parameters")
    names_seen: set[str] = set()
    params: list[Mapping[str, Any]] = []
    for param in params_raw:
        if not isinstance(param, Mapping) or "name" not in param:
            raise ContractViolation("input_parameters entries must be objects with a name")
        if param["name"] in names_seen:
            raise ContractViolation(f"parameter {param['name']!r} duplicated")
        names_seen.add(param["name"])
        params.append(dict(param))
    output_format = chosen.get("output_format", {})
    if not isinstance(output_format, Mapping):
        raise ContractViolation("output_format must be an object")

    return ToolSpecDraft(
        tool_name=missing.name,
        tool_description=_require_type(chosen.get("tool_description", ""), str, "tool_description"),
        input_parameters=tuple(params),
        output_format=dict(output_format),
        core_logic=core_logic,
    )


def collect_grounding(
    spec: ToolSpecDraft,
    search: SearchClient,
    experiences: Sequence[ExperienceItem],
    index: EmbeddingIndex,
    caps: GroundingCaps,
    retrieval: RetrievalConfig,
) -> GroundingBundle:
    """Gather web snippets and prior tool experience for the implementation call.

    Search failure degrades to an experience-only bundle; the degradation is
    recorded so the rendered prompt says so instead of silently omitting it.
    """
    query = f"{spec.tool_name} {spec.tool_description}".strip()
    degraded = False
    snippets: list[SearchResult] = []
    try:
        snippets, degraded = web_search(query, search, top_n=caps.web_snippets)
    except SearchUnavailable as exc:
        logger.warning("web search unavailable, continuing with experience only: %s", exc)
        degraded = True

    tool_items = [item for item in experiences if item.kind == "tool"]
    ranked = rank_experiences(spec.spec_text(), tool_items, index)
    above = [(item, score) for item, score in ranked if score > retrieval.delta]
    kept = above[: caps.experience_items]

    return GroundingBundle(
        web_snippets=tuple(snippets[: caps.web_snippets]),
        experience_items=tuple((item.id, score) for item, score in kept),
        experience_texts=tuple(item.rendered() for item, _ in kept),
        search_degraded=degraded,
    )


def implement_tool(
    spec: ToolSpecDraft,
    grounding: GroundingBundle,
    session: ChatSession,
    original_query: str = "",
    source_task: str | None = None,
    created_at: str | None = None,
) -> ToolEntry:
    """Generate the MCP-format module conditioned on the spec and its grounding."""
    core_logic = "\n".join(spec.core_logic)
    prompt = render_template(
        "tool_creation",
        {
            "original_query": original_query or spec.tool_description,
            "tool_name": spec.tool_name,
            "tool_description": spec.tool_description,
            "core_logic": core_logic,
            "input_parameters": json.dumps([dict(p) for p in spec.input_parameters], indent=2),
            "output_format": json.dumps(dict(spec.output_format), indent=2),
            "grounding": grounding.render(),
        },
    )
    raw = session.complete_json("", prompt, expectation="object")
    name = raw.get("name")
    if name != spec.tool_name:
        raise NameMutated(f"implementation renamed tool: expected {spec.tool_name!r}, got {name!r}")
    record = dict(raw)
    record["doc_refs"] = list(grounding.citations())
    return validate_tool_entry(
        record,
        origin=Origin("created", source_task),
        created_at=created_at,
    )


def synthesize_tool(
    missing: MissingToolStub,
    session: ChatSession,
    search: SearchClient,
    experiences: Sequence[ExperienceItem],
    index: EmbeddingIndex,
    caps: GroundingCaps,
    retrieval: RetrievalConfig,
    tools: Mapping[str, ToolEntry] | None = None,
    original_query: str = "",
    source_task: str | None = None,
) -> tuple[ToolEntry, ToolSpecDraft, GroundingBundle]:
    """Run the full three-stage pipeline for one missing tool."""
    spec = generate_tool_spec(missing, session, tools)
    grounding = collect_grounding(spec, search, experiences, index, caps, retrieval)
    entry = implement_tool(
        spec, grounding, session, original_query=original_query, source_task=source_task
    )
    return entry, spec, grounding


def create_agent(
    subtask_text: str,
    candidate_tools: Mapping[str, ToolEntry],
    session: ChatSession,
    existing_roles: Collection[str] = (),
    source_task: str | None = None,
    created_at: str | None = None,
) -> AgentSpec:
    """Synthesize a specialist agent whose toolbox is a subset of the candidates."""
    prompt = render_template(
        "agent_creation",
        {"sub_task": subtask_text, "tools": render_tool_listing(candidate_tools)},
    )
    raw = session.complete_json("", prompt, expectation="object")
    record = dict(raw)
    requested = record.get("tools", [])
    kept = []
    for name in requested:
        if name in candidate_tools:
            kept.append(name)
        else:
            logger.warning("agent creation requested tool %r outside candidates; dropped", name)
    record["tools"] = kept
    return validate_agent_spec(
        record,
        tools=set(candidate_tools),
        existing_roles=existing_roles,
        origin=Origin("created", source_task),
        created_at=created_at,
    )
