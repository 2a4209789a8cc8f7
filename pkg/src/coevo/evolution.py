"""Backward evolution: judge the trajectory, validate and improve the assets
created during the run, distill experience items, and merge survivors into
the two memories.

A task-level success does not exempt new assets from validation; a failed
validation triggers the bounded revise-and-retest loop, and assets that
exhaust it are discarded rather than stored.
"""
from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field
from typing import Any, Mapping, Sequence, Union

from .backends.chat import ChatSession
from .backends.sandbox import SandboxRunner
from .config import EvolutionConfig
from .errors import (
    ContractViolation,
    MalformedMemoryEntry,
    NameMutated,
    SandboxError,
    SchemaViolation,
)
from .executor import (
    Finish,
    ToolInvocation,
    TrajectoryRecord,
    check_arguments,
    run_tool_process,
)
from .memory import (
    SUGGESTION_MAX,
    SUGGESTION_MIN,
    AgentSpec,
    ExperienceItem,
    Memories,
    ToolEntry,
    utc_now_iso,
    validate_agent_spec,
    validate_experience_item,
    validate_tool_entry,
)
from .prompts import render_template

logger = logging.getLogger(__name__)

NONE_MARKER = "(none)"

Asset = Union[ToolEntry, AgentSpec]


# --- judging ------------------------------------------------------------------

@dataclass
class Verdict:
    r: int  # 1 success, 0 failure
    critique: str
    completion_quality: str
    agent_evaluations: list[dict[str, Any]]
    tool_evaluations: list[dict[str, Any]]
    warnings: list[str] = field(default_factory=list)

    def to_dict(self) -> dict[str, Any]:
        return {
            "r": self.r,
            "critique": self.critique,
            "completion_quality": self.completion_quality,
            "agent_evaluations": self.agent_evaluations,
            "tool_evaluations": self.tool_evaluations,
            "warnings": self.warnings,
        }

    def evaluation_for_agent(self, agent_id: str, role: str) -> dict[str, Any] | None:
        for entry in self.agent_evaluations:
            if entry.get("agent_id") == agent_id or entry.get("agent_role") == role:
                return entry
        return None


def _format_steps(trace) -> str:
    lines = []
    for step in trace.result.steps:
        if isinstance(step.action, Finish):
            lines.append(f"Thought: {step.thought}\nAction: finish -> {step.action.result_text}")
        else:
            lines.append(
                f"Thought: {step.thought}\n"
                f"Action: {step.action.tool_name}({json.dumps(dict(step.action.arguments), sort_keys=True)})\n"
                f"Observation: {step.observation}"
            )
    return "\n".join(lines) if lines else NONE_MARKER


def render_judge_prompt(trajectory: TrajectoryRecord) -> str:
    assignments = "\n".join(
        f"Sub-task {trace.subtask.index}: {trace.agent_role} (id {trace.agent_id}), "
        f"tools: {', '.join(trace.agent_tools) or '(none)'}"
        for trace in trajectory.subtask_traces
    )
    processes = "\n\n".join(
        f"Sub-task {trace.subtask.index} ({trace.agent_role}) [{trace.result.status}]:\n{_format_steps(trace)}"
        for trace in trajectory.subtask_traces
    )
    results_summary = "\n".join(
        f"Sub-task {trace.subtask.index} [{trace.result.status}]: {trace.result.result_text}"
        for trace in trajectory.subtask_traces
    )
    created = trajectory.created_tool_entries
    created_text = (
        "\n".join(f"- {name}: {entry['description']}" for name, entry in sorted(created.items()))
        if created
        else NONE_MARKER
    )
    return render_template(
        "judge",
        {
            "query": trajectory.query,
            "subtasks": trajectory.plan.describe(),
            "agent_assignments": assignments or NONE_MARKER,
            "agent_processes": processes or NONE_MARKER,
            "aggregation_process": f"Combined the sub-task results below into one answer:\n{results_summary}",
            "final_result": trajectory.final_answer,
            "created_tools": created_text,
        },
    )


def judge_trajectory(
    query: str,
    trajectory: TrajectoryRecord,
    answer: str,
    session: ChatSession,
) -> Verdict:
    """LLM-as-judge over the full trajectory; evaluations of assets that never
    appeared in the run are dropped with a warning."""
    raw = session.complete_json("", render_judge_prompt(trajectory), expectation="object")
    completed = raw.get("task_completed")
    if not isinstance(completed, bool):
        raise ContractViolation(f"judge field 'task_completed' must be boolean, got {completed!r}")
    critique = str(raw.get("overall_assessment", "")).strip()

    known_agents = trajectory.participating_agents()
    known_roles = {role.lower() for role in known_agents.values()}
    known_tools = trajectory.used_tool_names() | set(trajectory.created_tool_entries)
    warnings: list[str] = []

    agent_evaluations = []
    for entry in raw.get("agent_evaluations", []) or []:
        if not isinstance(entry, Mapping):
            continue
        agent_id = entry.get("agent_id")
        role = str(entry.get("agent_role", "")).lower()
        if agent_id in known_agents or role in known_roles:
            agent_evaluations.append(dict(entry))
        else:
            message = f"judge evaluated unknown agent {agent_id or entry.get('agent_role')!r}; dropped"
            warnings.append(message)
            logger.warning(message)

    tool_evaluations = []
    for entry in raw.get("tool_evaluations", []) or []:
        if not isinstance(entry, Mapping):
            continue
        if entry.get("tool_name") in known_tools:
            tool_evaluations.append(dict(entry))
        else:
            message = f"judge evaluated unknown tool {entry.get('tool_name')!r}; dropped"
            warnings.append(message)
            logger.warning(message)

    return Verdict(
        r=1 if completed else 0,
        critique=critique,
        completion_quality=str(raw.get("completion_quality", "")),
        agent_evaluations=agent_evaluations,
        tool_evaluations=tool_evaluations,
        warnings=warnings,
    )


# --- validation ---------------------------------------------------------------

@dataclass
class TestCase:
    input: dict[str, Any]
    expected_behavior: str
    expect_contains: str | None = None


@dataclass
class TestOutcome:
    input: dict[str, Any]
    expected_behavior: str
    passed: bool
    log: str

    def to_dict(self) -> dict[str, Any]:
        return {
            "input": self.input,
            "expected_behavior": self.expected_behavior,
            "passed": self.passed,
            "log": self.log,
        }


@dataclass
class ValidationReport:
    asset_key: str
    tests: list[TestOutcome]
    passed: bool

    def failing(self) -> list[TestOutcome]:
        return [t for t in self.tests if not t.passed]


def synthesize_tests(
    entry: ToolEntry,
    critique: str,
    session: ChatSession,
    num_tests: int,
) -> list[TestCase]:
    prompt = render_template(
        "test_synthesis",
        {
            "tool_name": entry.name,
            "tool_description": entry.description,
            "input_schema": json.dumps(dict(entry.input_schema), indent=2, sort_keys=True),
            "critique": critique or NONE_MARKER,
            "num_tests": str(num_tests),
        },
    )
    raw = session.complete_json("", prompt, expectation="array")
    cases: list[TestCase] = []
    for item in raw:
        if not isinstance(item, Mapping) or not isinstance(item.get("input"), Mapping):
            raise ContractViolation("each test case must be an object with an 'input' object")
        expect = item.get("expect_contains")
        cases.append(
            TestCase(
                input=dict(item["input"]),
                expected_behavior=str(item.get("expected_behavior", "")),
                expect_contains=str(expect) if isinstance(expect, str) and expect else None,
            )
        )
    if not cases:
        raise ContractViolation("test synthesis returned zero cases")
    return cases


def _run_test(entry: ToolEntry, case: TestCase, sandbox: SandboxRunner, timeout_s: float) -> TestOutcome:
    try:
        check_arguments(entry, case.input)
        outcome = run_tool_process(entry, case.input, sandbox, timeout_s)
    except (SchemaViolation, SandboxError) as exc:
        return TestOutcome(case.input, case.expected_behavior, False, f"{type(exc).__name__}: {exc}")
    if not outcome.ok:
        return TestOutcome(case.input, case.expected_behavior, False, f"tool error: {outcome.error}")
    serialized = json.dumps(outcome.result, sort_keys=True, default=str)
    if case.expect_contains and case.expect_contains not in serialized:
        return TestOutcome(
            case.input,
            case.expected_behavior,
            False,
            f"result missing expected content {case.expect_contains!r}; got: {serialized[:500]}",
        )
    return TestOutcome(case.input, case.expected_behavior, True, serialized[:500])


def validate_tool(
    entry: ToolEntry,
    critique: str,
    session: ChatSession,
    sandbox: SandboxRunner,
    cfg: EvolutionConfig,
    timeout_s: float = 20.0,
) -> ValidationReport:
    """Synthesize test cases from the critique and run each in the sandbox;
    the tool passes only if it clears all of them."""
    cases = synthesize_tests(entry, critique, session, cfg.tests_per_round)
    outcomes = [_run_test(entry, case, sandbox, timeout_s) for case in cases]
    return ValidationReport(
        asset_key=entry.name,
        tests=outcomes,
        passed=all(t.passed for t in outcomes),
    )


def validate_agent(agent: AgentSpec, known_good_tools: set[str]) -> ValidationReport:
    """Structural validation: spec invariants, plus every referenced tool must
    exist and have passed its own validation."""
    tests: list[TestOutcome] = []
    count_ok = SUGGESTION_MIN <= len(agent.suggestions) <= SUGGESTION_MAX and all(agent.suggestions)
    tests.append(
        TestOutcome(
            {"check": "spec_invariants"},
            f"role non-empty and {SUGGESTION_MIN}-{SUGGESTION_MAX} non-empty suggestions",
            bool(agent.role.strip()) and count_ok,
            f"role={agent.role!r}, suggestions={len(agent.suggestions)}",
        )
    )
    bad = [name for name in agent.tool_names if name not in known_good_tools]
    tests.append(
        TestOutcome(
            {"check": "tools_validated"},
            "every referenced tool exists and passed validation",
            not bad,
            f"unvalidated tools: {bad}" if bad else "all referenced tools validated",
        )
    )
    return ValidationReport(asset_key=agent.id, tests=tests, passed=all(t.passed for t in tests))


def validate_asset(
    asset: Asset,
    critique: str,
    session: ChatSession,
    sandbox: SandboxRunner,
    cfg: EvolutionConfig,
    known_good_tools: set[str] | None = None,
    timeout_s: float = 20.0,
) -> ValidationReport:
    if isinstance(asset, ToolEntry):
        return validate_tool(asset, critique, session, sandbox, cfg, timeout_s)
    return validate_agent(asset, known_good_tools or set())


# --- the self-correction loop ---------------------------------------------------

@dataclass
class ImproveOutcome:
    final: Asset
    iterations: int
    reports: list[ValidationReport]
    exhausted: bool


def _format_failures(report: ValidationReport) -> str:
    failing = report.failing()
    if not failing:
        return NONE_MARKER
    return "\n".join(
        f"- input: {json.dumps(t.input, sort_keys=True)}\n"
        f"  expected: {t.expected_behavior}\n"
        f"  failure: {t.log}"
        for t in failing
    )


def revise_tool(entry: ToolEntry, critique: str, last_report: ValidationReport, session: ChatSession) -> ToolEntry:
    prompt = render_template(
        "tool_revision",
        {
            "tool_name": entry.name,
            "manifest": json.dumps(entry.manifest_dict(), indent=2, sort_keys=True),
            "module_code": entry.impl_source,
            "critique": critique or NONE_MARKER,
            "failing_tests": _format_failures(last_report),
        },
    )
    raw = session.complete_json("", prompt, expectation="object")
    if raw.get("name") != entry.name:
        raise NameMutated(f"revision renamed tool: expected {entry.name!r}, got {raw.get('name')!r}")
    record = dict(raw)
    record["doc_refs"] = list(entry.doc_refs)
    record["runtime"] = entry.runtime
    return validate_tool_entry(record, origin=entry.origin, created_at=entry.created_at)


def revise_agent(
    agent: AgentSpec,
    critique: str,
    last_report: ValidationReport,
    session: ChatSession,
    known_good_tools: set[str],
    existing_roles: set[str],
) -> AgentSpec:
    spec_json = json.dumps(
        {
            "role": agent.role,
            "suggestions": list(agent.suggestions),
            "tools": list(agent.tool_names),
            "expertise": agent.expertise,
        },
        indent=2,
        sort_keys=True,
    )
    prompt = render_template(
        "agent_revision",
        {
            "agent_json": spec_json,
            "critique": critique or NONE_MARKER,
            "issues": _format_failures(last_report),
            "available_tools": "\n".join(f"- {name}" for name in sorted(known_good_tools)) or NONE_MARKER,
        },
    )
    raw = session.complete_json("", prompt, expectation="object")
    record = dict(raw)
    record["tools"] = [name for name in record.get("tools", []) if name in known_good_tools]
    record["id"] = agent.id  # the revision keeps the asset's identity
    roles_except_self = {r for r in existing_roles if r.lower() != agent.role.lower()}
    return validate_agent_spec(
        record,
        tools=known_good_tools,
        existing_roles=roles_except_self,
        origin=agent.origin,
        created_at=agent.created_at,
    )


def improve_asset(
    asset: Asset,
    critique: str,
    first_report: ValidationReport,
    session: ChatSession,
    sandbox: SandboxRunner,
    cfg: EvolutionConfig,
    known_good_tools: set[str] | None = None,
    existing_roles: set[str] | None = None,
    timeout_s: float = 20.0,
) -> ImproveOutcome:
    """Bounded revise-and-retest loop; always performs at least one revision.

    Tests are regenerated on every cycle. Assets that never pass within the
    iteration budget come back exhausted and must not be merged.
    """
    current = asset
    last_report = first_report
    reports: list[ValidationReport] = []
    for iteration in range(1, cfg.max_iterations + 1):
        if isinstance(current, ToolEntry):
            current = revise_tool(current, critique, last_report, session)
        else:
            current = revise_agent(
                current, critique, last_report, session,
                known_good_tools or set(), existing_roles or set(),
            )
        report = validate_asset(
            current, critique, session, sandbox, cfg,
            known_good_tools=known_good_tools, timeout_s=timeout_s,
        )
        reports.append(report)
        last_report = report
        if report.passed:
            return ImproveOutcome(final=current, iterations=iteration, reports=reports, exhausted=False)
    return ImproveOutcome(final=current, iterations=cfg.max_iterations, reports=reports, exhausted=True)


@dataclass
class FinalizedAsset:
    original: Asset
    kind: str  # "tool" | "agent"
    key: str
    first_report: ValidationReport
    improve: ImproveOutcome | None  # None when the asset passed straight through

    @property
    def final(self) -> Asset:
        return self.improve.final if self.improve is not None else self.original

    @property
    def exhausted(self) -> bool:
        return self.improve is not None and self.improve.exhausted

    @property
    def iterations(self) -> int:
        return self.improve.iterations if self.improve is not None else 0


def finalize_assets(
    new_assets: Sequence[Asset],
    verdict: Verdict,
    session: ChatSession,
    sandbox: SandboxRunner,
    cfg: EvolutionConfig,
    known_good_tools: set[str] | None = None,
    existing_roles: set[str] | None = None,
    timeout_s: float = 20.0,
) -> list[FinalizedAsset]:
    """Keep assets as-is only when the task succeeded and their first
    validation passed; otherwise run the self-correction loop. Tools are
    finalized before agents so agent checks see which tools survived."""
    good_tools = set(known_good_tools or set())
    ordered = [a for a in new_assets if isinstance(a, ToolEntry)] + [
        a for a in new_assets if isinstance(a, AgentSpec)
    ]
    finalized: list[FinalizedAsset] = []
    for asset in ordered:
        kind = "tool" if isinstance(asset, ToolEntry) else "agent"
        key = asset.name if isinstance(asset, ToolEntry) else asset.id
        first_report = validate_asset(
            asset, verdict.critique, session, sandbox, cfg,
            known_good_tools=good_tools, timeout_s=timeout_s,
        )
        if verdict.r == 1 and first_report.passed:
            outcome = None
        else:
            outcome = improve_asset(
                asset, verdict.critique, first_report, session, sandbox, cfg,
                known_good_tools=good_tools, existing_roles=existing_roles, timeout_s=timeout_s,
            )
        record = FinalizedAsset(asset, kind, key, first_report, outcome)
        finalized.append(record)
        if kind == "tool" and not record.exhausted:
            good_tools.add(key)
    return finalized


# --- reflection -----------------------------------------------------------------

@dataclass
class ReflectionOutput:
    items: list[ExperienceItem]


def experience_id(content: str, subject: str, source_task: str, polarity: str) -> str:
    digest = hashlib.sha256(f"{source_task}\n{subject}\n{polarity}\n{content}".encode("utf-8")).hexdigest()
    return f"exp-{digest[:12]}"


def parse_experience_markdown(
    text: str,
    kind: str,
    polarity: str,
    subject: str,
    source_task: str,
    created_at: str,
) -> ExperienceItem:
    body = text.strip()
    if not body.startswith("##"):
        raise MalformedMemoryEntry("memory entry must start with a '## ' title line")
    first_line, _, _ = body.partition("\n")
    title = first_line.lstrip("#").strip()

    description = ""
    use_cases: list[str] = []
    lines = body.splitlines()
    section = None
    collected: list[str] = []
    for line in lines[1:]:
        if line.startswith("### "):
            if section == "description":
                description = " ".join(collected).strip()
            section = line[4:].strip().lower()
            collected = []
            continue
        if section == "description" and line.strip():
            collected.append(line.strip())
        elif section == "use cases" and line.strip().startswith("- "):
            use_cases.append(line.strip()[2:].strip())
    if section == "description" and not description:
        description = " ".join(collected).strip()

    item = ExperienceItem(
        id=experience_id(body, subject, source_task, polarity),
        kind=kind,
        polarity=polarity,
        title=title,
        description=description,
        use_cases=tuple(use_cases),
        content=body,
        subject=subject,
        source_task=source_task,
        created_at=created_at,
    )
    return validate_experience_item(item)


def _tool_usage_examples(trajectory: TrajectoryRecord, tool_name: str) -> str:
    examples = []
    for trace in trajectory.subtask_traces:
        for step in trace.result.steps:
            if isinstance(step.action, ToolInvocation) and step.action.tool_name == tool_name:
                examples.append(
                    f"Input: {json.dumps(dict(step.action.arguments), sort_keys=True)} "
                    f"-> Observation: {step.observation[:300]}"
                )
    return "\n".join(examples) if examples else NONE_MARKER


def _tool_capabilities(trajectory: TrajectoryRecord, tool_name: str) -> str:
    for trace in trajectory.subtask_traces:
        for stub in trace.recruitment.get("missing_tool_requests", []):
            if stub.get("name") == tool_name:
                return stub.get("reason") or stub.get("description") or NONE_MARKER
    return NONE_MARKER


def _agent_polarity(verdict: Verdict, evaluation: Mapping[str, Any] | None) -> str:
    if evaluation is not None and evaluation.get("performance") in ("success", "failure"):
        return evaluation["performance"]
    return "success" if verdict.r == 1 else "failure"


def reflect(
    trajectory: TrajectoryRecord,
    verdict: Verdict,
    session: ChatSession,
    final_tools: Mapping[str, ToolEntry] | None = None,
    improve_iterations: Mapping[str, int] | None = None,
) -> ReflectionOutput:
    """Distill experience items: one per participating agent (template chosen
    by its performance), one per created tool, plus an extra failure-diagnosis
    item for any tool that needed debugging even on a successful task."""
    created_at = utc_now_iso()
    items: list[ExperienceItem] = []

    for trace in trajectory.subtask_traces:
        evaluation = verdict.evaluation_for_agent(trace.agent_id, trace.agent_role)
        polarity = _agent_polarity(verdict, evaluation)
        strengths = ", ".join((evaluation or {}).get("strengths", [])) or NONE_MARKER
        issues = ", ".join((evaluation or {}).get("issues", [])) or NONE_MARKER
        common = {
            "agent_role": trace.agent_role,
            "agent_skills": ", ".join(trace.agent_tools) or NONE_MARKER,
            "subtask_description": trace.subtask.description,
            "task_context": trajectory.query,
            "tools_used": ", ".join(sorted(_trace_tools(trace))) or NONE_MARKER,
            "execution_process": _format_steps(trace),
            "performance_rating": polarity,
        }
        if polarity == "success":
            prompt = render_template(
                "agent_memory_success",
                {
                    **common,
                    "final_result": trace.result.result_text,
                    "strengths": strengths,
                    "success_patterns": verdict.critique or NONE_MARKER,
                },
            )
        else:
            prompt = render_template(
                "agent_memory_failure",
                {
                    **common,
                    "failure_outcome": trace.result.result_text,
                    "issues": issues,
                    "root_cause": verdict.critique or NONE_MARKER,
                    "suggested_fixes": issues,
                },
            )
        exchange = session.complete("", prompt)
        items.append(
            parse_experience_markdown(
                exchange.response_text,
                kind="agent",
                polarity=polarity,
                subject=trace.agent_role,
                source_task=trajectory.task_id,
                created_at=created_at,
            )
        )

    iteration_map = dict(improve_iterations or {})
    for name in sorted(trajectory.created_tool_entries):
        entry_dict = dict(trajectory.created_tool_entries[name])
        final = (final_tools or {}).get(name)
        code = final.impl_source if final is not None else entry_dict["impl_source"]
        description = final.description if final is not None else entry_dict["description"]
        tool_polarity = "success" if verdict.r == 1 else "failure"
        polarities = [tool_polarity]
        # Substantial debugging: a tool that needed revisions also yields a
        # failure-diagnosis item even when the task succeeded.
        if verdict.r == 1 and iteration_map.get(name, 0) >= 1:
            polarities.append("failure")
        for polarity in polarities:
            prompt = render_template(
                "tool_memory",
                {
                    "tool_name": name,
                    "tool_description": description,
                    "required_capabilities": _tool_capabilities(trajectory, name),
                    "usage_examples": _tool_usage_examples(trajectory, name),
                    "tool_code": code,
                },
            )
            exchange = session.complete("", prompt)
            items.append(
                parse_experience_markdown(
                    exchange.response_text,
                    kind="tool",
                    polarity=polarity,
                    subject=name,
                    source_task=trajectory.task_id,
                    created_at=created_at,
                )
            )

    return ReflectionOutput(items=items)


def _trace_tools(trace) -> set[str]:
    used: set[str] = set()
    for step in trace.result.steps:
        if isinstance(step.action, ToolInvocation):
            used.add(step.action.tool_name)
    return used


# --- the full backward pass -------------------------------------------------------

@dataclass
class ToolCreationRecord:
    """Per-created-tool facts the evolution metrics are computed from."""

    tool: str
    first_validation_passed: bool
    improve_iterations: int
    exhausted: bool
    task_id: str

    def to_dict(self) -> dict[str, Any]:
        return {
            "tool": self.tool,
            "first_validation_passed": self.first_validation_passed,
            "improve_iterations": self.improve_iterations,
            "exhausted": self.exhausted,
            "task_id": self.task_id,
        }


@dataclass
class EvolutionDelta:
    assets_inserted: list[str]
    experiences_inserted: list[str]
    exhausted: list[str]
    tool_creation_records: list[ToolCreationRecord]

    def to_dict(self) -> dict[str, Any]:
        return {
            "assets_inserted": self.assets_inserted,
            "experiences_inserted": self.experiences_inserted,
            "exhausted": self.exhausted,
            "tool_creation_records": [r.to_dict() for r in self.tool_creation_records],
        }


def evolve(
    trajectory: TrajectoryRecord,
    verdict: Verdict,
    memories: Memories,
    session: ChatSession,
    sandbox: SandboxRunner,
    cfg: EvolutionConfig,
    timeout_s: float = 20.0,
) -> EvolutionDelta:
    """Finalize this task's new assets into asset memory and distill its
    experience items into experience memory; each merge commits atomically."""
    new_tools = [
        ToolEntry.from_dict(trajectory.created_tool_entries[name])
        for name in sorted(trajectory.created_tool_entries)
    ]
    new_agents = [
        AgentSpec.from_dict(trajectory.created_agent_specs[agent_id])
        for agent_id in sorted(trajectory.created_agent_specs)
    ]

    finalized = finalize_assets(
        [*new_tools, *new_agents],
        verdict,
        session,
        sandbox,
        cfg,
        known_good_tools=set(memories.assets.tools),
        existing_roles=memories.assets.roles(),
        timeout_s=timeout_s,
    )

    creation_records = [
        ToolCreationRecord(
            tool=f.key,
            first_validation_passed=f.first_report.passed,
            improve_iterations=f.iterations,
            exhausted=f.exhausted,
            task_id=trajectory.task_id,
        )
        for f in finalized
        if f.kind == "tool"
    ]

    survivors = [f for f in finalized if not f.exhausted]
    exhausted_keys = [f.key for f in finalized if f.exhausted]
    inserted = memories.assets.insert([f.final for f in survivors]) if survivors else []

    final_tools = {f.key: f.final for f in finalized if f.kind == "tool"}
    iteration_map = {f.key: f.iterations for f in finalized if f.kind == "tool"}
    reflection = reflect(
        trajectory, verdict, session,
        final_tools=final_tools, improve_iterations=iteration_map,
    )
    experience_ids = memories.experiences.insert(reflection.items) if reflection.items else []

    delta = EvolutionDelta(
        assets_inserted=inserted,
        experiences_inserted=experience_ids,
        exhausted=exhausted_keys,
        tool_creation_records=creation_records,
    )
    logger.info(
        "evolution for %s: %d asset(s) merged, %d experience item(s), %d exhausted",
        trajectory.task_id, len(inserted), len(experience_ids), len(exhausted_keys),
    )
    return delta
