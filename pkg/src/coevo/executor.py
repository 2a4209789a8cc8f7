"""Forward inference: run each sub-task through its recruited agent in a
templated think/act/observe loop with sandboxed tool calls, then aggregate
sub-task results into the final answer.

Tool calls never leave the loop: unavailable tools, schema violations, and
sandbox failures all come back as observation text so the agent can react,
while the step budget bounds the whole exchange.
"""
from __future__ import annotations

import json
import logging
import re
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping, Sequence, Union

import jsonschema

from .backends.chat import ChatExchange, ChatSession
from .backends.sandbox import SandboxRequest, SandboxRunner
from .backends.search import SearchClient
from .config import EngineConfig
from .creation import assess_tool_need, create_agent, synthesize_tool
from .errors import (
    CorruptTrajectory,
    InputError,
    SandboxCrash,
    SandboxError,
    SandboxTimeout,
    SchemaViolation,
    StepParseError,
)
from .memory import AgentSpec, AssetView, ExperienceItem, Memories, ToolEntry, utc_now_iso
from .planner import SubTask, TaskPlan, plan_task, schedule
from .prompts import load_template, render_template
from .retrieval import (
    Create,
    EmbeddingIndex,
    EmbeddingProvider,
    RecruitmentDecision,
    Reuse,
    rank_experiences,
    recruit,
)

logger = logging.getLogger(__name__)

NONE_MARKER = "(none)"
FINISH_ACTION = "finish"

TOOL_RUNNER_FILENAME = "run_tool.py"

# Entry shim materialized next to the tool module; reads a JSON argument
# document on stdin and writes one JSON result document to stdout.
TOOL_RUNNER_SOURCE = '''\
import importlib.util
import json
import sys


def main():
    module_path = sys.argv[1]
    spec = importlib.util.spec_from_file_location("tool_module", module_path)
    module = importlib.util.module_from_spec(spec)
    spec.loader.exec_module(module)
    config = getattr(module, "TOOL_CONFIG")
    arguments = json.load(sys.stdin)
    try:
        result = config["function"](**arguments)
    except Exception as exc:
        print(json.dumps({"ok": False, "error": str(exc), "error_type": type(exc).__name__}))
        return 0
    print(json.dumps({"ok": True, "result": result}, default=str))
    return 0


if __name__ == "__main__":
    sys.exit(main())
'''


@dataclass(frozen=True)
class ToolInvocation:
    tool_name: str
    arguments: Mapping[str, Any]

    def to_dict(self) -> dict[str, Any]:
        return {"type": "tool", "tool_name": self.tool_name, "arguments": dict(self.arguments)}


@dataclass(frozen=True)
class Finish:
    result_text: str

    def to_dict(self) -> dict[str, Any]:
        return {"type": "finish", "result_text": self.result_text}


Action = Union[ToolInvocation, Finish]


def _action_from_dict(raw: Mapping[str, Any]) -> Action:
    if raw["type"] == "finish":
        return Finish(raw["result_text"])
    return ToolInvocation(raw["tool_name"], dict(raw["arguments"]))


@dataclass(frozen=True)
class ReActStep:
    thought: str
    action: Action
    observation: str  # empty for Finish steps

    def to_dict(self) -> dict[str, Any]:
        return {"thought": self.thought, "action": self.action.to_dict(), "observation": self.observation}

    @classmethod
    def from_dict(cls, raw: Mapping[str, Any]) -> "ReActStep":
        return cls(raw["thought"], _action_from_dict(raw["action"]), raw["observation"])


STATUS_FINISHED = "finished"
STATUS_STEP_LIMIT = "step_limit"
STATUS_ERROR = "error"


@dataclass(frozen=True)
class SubTaskResult:
    subtask_index: int
    result_text: str
    steps: tuple[ReActStep, ...]
    status: str

    def to_dict(self) -> dict[str, Any]:
        return {
            "subtask_index": self.subtask_index,
            "result_text": self.result_text,
            "steps": [s.to_dict() for s in self.steps],
            "status": self.status,
        }

    @classmethod
    def from_dict(cls, raw: Mapping[str, Any]) -> "SubTaskResult":
        return cls(
            subtask_index=raw["subtask_index"],
            result_text=raw["result_text"],
            steps=tuple(ReActStep.from_dict(s) for s in raw["steps"]),
            status=raw["status"],
        )


# --- prompt rendering ---------------------------------------------------------

def render_tool_docs(tools: Mapping[str, ToolEntry]) -> str:
    if not tools:
        return NONE_MARKER
    blocks = []
    for name in sorted(tools):
        entry = tools[name]
        blocks.append(
            f"## {name}\n"
            f"{entry.description}\n"
            f"Input schema: {json.dumps(dict(entry.input_schema), sort_keys=True)}\n"
            f"Returns: {json.dumps(dict(entry.returns), sort_keys=True)}"
        )
    return "\n\n".join(blocks)


def _render_previous(previous: Mapping[int, str]) -> str:
    if not previous:
        return NONE_MARKER
    parts = [f"Sub-task {i} result:\n{previous[i]}" for i in sorted(previous)]
    return "\n\n".join(parts)


def _render_experiences(items: Sequence[str]) -> str:
    return "\n\n".join(items) if items else NONE_MARKER


def render_react_prompt(
    agent: AgentSpec,
    subtask: SubTask,
    previous: Mapping[int, str],
    success_experiences: Sequence[str],
    failure_experiences: Sequence[str],
    tools: Mapping[str, ToolEntry],
) -> str:
    """Fill every template placeholder exactly once; empty sections say '(none)'."""
    prompt = render_template(
        "react",
        {
            "role": agent.role,
            "suggestions": "\n".join(f"- {s}" for s in agent.suggestions),
            "previous": _render_previous(previous),
            "success_experiences": _render_experiences(success_experiences),
            "failure_experiences": _render_experiences(failure_experiences),
            "tool": render_tool_docs(tools),
            "format_example": load_template("react_format_example").strip(),
        },
        exactly_once=True,
    )
    return prompt + f"\n# Current Sub-Task\n{subtask.description}\n"


# --- step parsing -------------------------------------------------------------

_FENCED_BLOCK_RE = re.compile(r"```[a-zA-Z0-9_-]*\s*\n(.*?)```", re.DOTALL)
_ACTION_RE = re.compile(r"^Action:\s*(\S+)\s*$", re.MULTILINE)
_ACTION_INPUT_RE = re.compile(r"^Action Input:\s*(.*)$", re.MULTILINE | re.DOTALL)
_THOUGHT_RE = re.compile(r"Thought:\s*(.*?)(?:\nAction:)", re.DOTALL)


class _StepFormat(Exception):
    """Internal: one step reply did not follow the required block format."""


def parse_step(text: str) -> tuple[str, Action]:
    """Parse one backend reply into (thought, action)."""
    fenced = _FENCED_BLOCK_RE.search(text)
    body = fenced.group(1) if fenced else text

    action_match = _ACTION_RE.search(body)
    if not action_match:
        raise _StepFormat("no 'Action:' line found")
    action_name = action_match.group(1).strip()

    thought_match = _THOUGHT_RE.search(body)
    thought = thought_match.group(1).strip() if thought_match else ""

    input_match = _ACTION_INPUT_RE.search(body)
    if not input_match:
        raise _StepFormat("no 'Action Input:' line found")
    input_text = input_match.group(1).strip()
    try:
        arguments = json.loads(_first_json_object(input_text))
    except (json.JSONDecodeError, ValueError) as exc:
        raise _StepFormat(f"Action Input is not a JSON object: {exc}") from exc
    if not isinstance(arguments, dict):
        raise _StepFormat("Action Input must be a JSON object")

    if action_name.lower() == FINISH_ACTION:
        result = arguments.get("result", "")
        if not isinstance(result, str):
            result = json.dumps(result)
        return thought, Finish(result)
    return thought, ToolInvocation(action_name, arguments)


def _first_json_object(text: str) -> str:
    start = text.find("{")
    if start == -1:
        raise ValueError("no object opener")
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
        elif ch == "{":
            depth += 1
        elif ch == "}":
            depth -= 1
            if depth == 0:
                return text[start:i + 1]
    raise ValueError("unbalanced object")


# --- tool invocation ----------------------------------------------------------

@dataclass(frozen=True)
class ToolRunOutcome:
    ok: bool
    result: Any
    error: str
    stdout: str
    stderr: str


def run_tool_process(
    entry: ToolEntry,
    arguments: Mapping[str, Any],
    sandbox: SandboxRunner,
    timeout_s: float,
    file_quota_bytes: int | None = None,
) -> ToolRunOutcome:
    """Materialize the tool module plus the entry shim and run one invocation."""
    module_file = f"{entry.name}.py"
    hints = {"file_size_bytes": file_quota_bytes} if file_quota_bytes else {}
    request = SandboxRequest(
        files={module_file: entry.impl_source, TOOL_RUNNER_FILENAME: TOOL_RUNNER_SOURCE},
        entry=tuple(sandbox.runtime_argv(entry.runtime) + [TOOL_RUNNER_FILENAME, module_file]),
        stdin_doc=json.dumps(dict(arguments)),
        timeout_s=timeout_s,
        resource_hints=hints,
    )
    result = sandbox.run(request)
    if result.timed_out:
        raise SandboxTimeout(timeout_s)
    if result.exit_code != 0:
        raise SandboxCrash(result.exit_code or -1, result.stderr.strip()[-500:])
    try:
        payload = json.loads(result.stdout.strip().splitlines()[-1])
    except (json.JSONDecodeError, IndexError) as exc:
        raise SandboxCrash(0, f"tool runner produced no result document: {exc}") from exc
    return ToolRunOutcome(
        ok=bool(payload.get("ok")),
        result=payload.get("result"),
        error=str(payload.get("error", "")),
        stdout=result.stdout,
        stderr=result.stderr,
    )


def check_arguments(entry: ToolEntry, arguments: Mapping[str, Any]) -> None:
    """Schema check before any sandbox dispatch."""
    try:
        jsonschema.validate(instance=dict(arguments), schema=dict(entry.input_schema))
    except jsonschema.ValidationError as exc:
        raise SchemaViolation(f"arguments rejected for {entry.name!r}: {exc.message}") from exc
    except jsonschema.SchemaError as exc:
        raise SchemaViolation(f"input schema of {entry.name!r} is itself invalid: {exc.message}") from exc


def truncate_observation(text: str, cap_bytes: int) -> str:
    encoded = text.encode("utf-8")
    if len(encoded) <= cap_bytes:
        return text
    clipped = encoded[:cap_bytes].decode("utf-8", errors="ignore")
    return clipped + f"\n...[observation truncated; {len(encoded)} bytes total]"


def invoke_tool(
    invocation: ToolInvocation,
    entry: ToolEntry,
    sandbox: SandboxRunner,
    timeout_s: float,
    observation_cap_bytes: int,
    file_quota_bytes: int | None = None,
) -> str:
    """Validate, run, and serialize one tool call into observation text."""
    check_arguments(entry, invocation.arguments)
    outcome = run_tool_process(entry, invocation.arguments, sandbox, timeout_s, file_quota_bytes)
    if outcome.ok:
        observation = json.dumps(outcome.result, sort_keys=True, default=str)
    else:
        observation = f"Tool error: {outcome.error}"
    return truncate_observation(observation, observation_cap_bytes)


# --- the ReAct loop -----------------------------------------------------------

STEP_REASK_NOTE = (
    "\n\nYour previous reply could not be parsed as a step: {error}\n"
    "Reply again with exactly one fenced block in the required format."
)


def _format_history(steps: Sequence[ReActStep]) -> str:
    parts = []
    for step in steps:
        if isinstance(step.action, Finish):
            action_line = f"Action: {FINISH_ACTION}\nAction Input: {json.dumps({'result': step.action.result_text})}"
        else:
            action_line = (
                f"Action: {step.action.tool_name}\n"
                f"Action Input: {json.dumps(dict(step.action.arguments), sort_keys=True)}"
            )
        parts.append(f"Thought: {step.thought}\n{action_line}\nObservation: {step.observation}")
    return "\n\n".join(parts)


def execute_subtask(
    subtask: SubTask,
    agent: AgentSpec,
    tools: Mapping[str, ToolEntry],
    success_experiences: Sequence[str],
    failure_experiences: Sequence[str],
    previous: Mapping[int, str],
    session: ChatSession,
    sandbox: SandboxRunner,
    cfg: EngineConfig,
) -> SubTaskResult:
    """Drive one sub-task to Finish, the step limit, or a parse failure."""
    base_prompt = render_react_prompt(
        agent, subtask, previous, success_experiences, failure_experiences, tools
    )
    steps: list[ReActStep] = []
    for _ in range(cfg.limits.max_steps):
        prompt = base_prompt
        if steps:
            prompt += f"\n# Execution History\n{_format_history(steps)}\n\nContinue with the next step."
        exchange = session.complete("", prompt)
        try:
            thought, action = parse_step(exchange.response_text)
        except _StepFormat as first_error:
            retry = session.complete("", prompt + STEP_REASK_NOTE.format(error=first_error))
            try:
                thought, action = parse_step(retry.response_text)
            except _StepFormat as exc:
                raise StepParseError(f"step reply unparseable after re-ask: {exc}") from exc

        if isinstance(action, Finish):
            steps.append(ReActStep(thought, action, ""))
            return SubTaskResult(
                subtask_index=subtask.index,
                result_text=action.result_text,
                steps=tuple(steps),
                status=STATUS_FINISHED,
            )

        observation = _observe_tool_call(action, tools, sandbox, cfg)
        steps.append(ReActStep(thought, action, observation))

    return SubTaskResult(
        subtask_index=subtask.index,
        result_text=f"Step limit reached after {cfg.limits.max_steps} steps without a final answer.",
        steps=tuple(steps),
        status=STATUS_STEP_LIMIT,
    )


def _observe_tool_call(
    invocation: ToolInvocation,
    tools: Mapping[str, ToolEntry],
    sandbox: SandboxRunner,
    cfg: EngineConfig,
) -> str:
    # Availability guard: violations become observations, never executions.
    # `tools` is this sub-task's full available set (agent toolbox plus the
    # recruited top-K hits).
    if invocation.tool_name not in tools:
        return (
            f"Error: tool '{invocation.tool_name}' is not available to this agent. "
            f"Available tools: {', '.join(sorted(tools)) or '(none)'}."
        )
    entry = tools[invocation.tool_name]
    try:
        return invoke_tool(
            invocation, entry, sandbox,
            timeout_s=cfg.limits.tool_timeout_s,
            observation_cap_bytes=cfg.limits.observation_cap_bytes,
            file_quota_bytes=cfg.limits.tool_file_quota_bytes,
        )
    except SchemaViolation as exc:
        return f"Error: {exc}"
    except SandboxTimeout as exc:
        return f"Error: tool '{invocation.tool_name}' timed out: {exc}"
    except SandboxError as exc:
        return f"Error: tool '{invocation.tool_name}' failed: {exc}"


# --- aggregation ----------------------------------------------------------------

def _render_results(results: Sequence[SubTaskResult]) -> str:
    parts = []
    for result in sorted(results, key=lambda r: r.subtask_index):
        if result.status == STATUS_FINISHED:
            body = result.result_text
        else:
            body = f"[{result.status}] {result.result_text}"
        parts.append(f"Sub-task {result.subtask_index}:\n{body}")
    return "\n\n".join(parts) if parts else NONE_MARKER


def aggregate_results(query: str, results: Sequence[SubTaskResult], session: ChatSession) -> tuple[str, str]:
    """One backend call combining every sub-task result; returns (prompt, answer)."""
    prompt = render_template("aggregation", {"query": query, "results": _render_results(results)})
    exchange = session.complete("", prompt)
    return prompt, exchange.response_text.strip()


# --- trajectory record ----------------------------------------------------------

@dataclass
class SubTaskTrace:
    subtask: SubTask
    agent_id: str
    agent_role: str
    agent_tools: tuple[str, ...]
    recruitment: dict[str, Any]
    created_tools: tuple[str, ...]
    created_agent: str | None
    injected_experiences: dict[str, list[str]]
    result: SubTaskResult

    def to_dict(self) -> dict[str, Any]:
        return {
            "subtask": self.subtask.to_dict(),
            "agent_id": self.agent_id,
            "agent_role": self.agent_role,
            "agent_tools": list(self.agent_tools),
            "recruitment": self.recruitment,
            "created_tools": list(self.created_tools),
            "created_agent": self.created_agent,
            "injected_experiences": self.injected_experiences,
            "result": self.result.to_dict(),
        }

    @classmethod
    def from_dict(cls, raw: Mapping[str, Any]) -> "SubTaskTrace":
        return cls(
            subtask=SubTask.from_dict(raw["subtask"]),
            agent_id=raw["agent_id"],
            agent_role=raw["agent_role"],
            agent_tools=tuple(raw["agent_tools"]),
            recruitment=dict(raw["recruitment"]),
            created_tools=tuple(raw["created_tools"]),
            created_agent=raw["created_agent"],
            injected_experiences={k: list(v) for k, v in raw["injected_experiences"].items()},
            result=SubTaskResult.from_dict(raw["result"]),
        )


TIMESTAMP_KEYS = frozenset({"created_at", "started_at", "finished_at", "duration_s"})


def strip_timestamps(value: Any) -> Any:
    """Recursively drop wall-clock fields for modulo-timestamp comparisons."""
    if isinstance(value, dict):
        return {k: strip_timestamps(v) for k, v in value.items() if k not in TIMESTAMP_KEYS}
    if isinstance(value, list):
        return [strip_timestamps(v) for v in value]
    return value


@dataclass
class TrajectoryRecord:
    task_id: str
    query: str
    plan: TaskPlan
    batches: list[list[int]]
    subtask_traces: list[SubTaskTrace]
    created_tool_entries: dict[str, dict[str, Any]]
    created_agent_specs: dict[str, dict[str, Any]]
    aggregation_prompt: str
    final_answer: str
    exchanges: list[ChatExchange]
    config: dict[str, Any]
    started_at: str
    finished_at: str

    def to_dict(self) -> dict[str, Any]:
        return {
            "task_id": self.task_id,
            "query": self.query,
            "plan": self.plan.to_dict(),
            "batches": [list(batch) for batch in self.batches],
            "subtasks": [trace.to_dict() for trace in self.subtask_traces],
            "created_tool_entries": self.created_tool_entries,
            "created_agent_specs": self.created_agent_specs,
            "aggregation": {"prompt": self.aggregation_prompt, "answer": self.final_answer},
            "final_answer": self.final_answer,
            "exchanges": [e.to_dict() for e in self.exchanges],
            "config": self.config,
            "started_at": self.started_at,
            "finished_at": self.finished_at,
        }

    @classmethod
    def from_dict(cls, raw: Mapping[str, Any]) -> "TrajectoryRecord":
        try:
            return cls(
                task_id=raw["task_id"],
                query=raw["query"],
                plan=TaskPlan.from_dict(raw["plan"]),
                batches=[list(batch) for batch in raw["batches"]],
                subtask_traces=[SubTaskTrace.from_dict(t) for t in raw["subtasks"]],
                created_tool_entries={k: dict(v) for k, v in raw["created_tool_entries"].items()},
                created_agent_specs={k: dict(v) for k, v in raw["created_agent_specs"].items()},
                aggregation_prompt=raw["aggregation"]["prompt"],
                final_answer=raw["final_answer"],
                exchanges=[ChatExchange.from_dict(e) for e in raw["exchanges"]],
                config=dict(raw["config"]),
                started_at=raw["started_at"],
                finished_at=raw["finished_at"],
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise CorruptTrajectory(f"trajectory record malformed: {exc}") from exc

    def normalized(self) -> dict[str, Any]:
        return strip_timestamps(self.to_dict())

    def used_tool_names(self) -> set[str]:
        used: set[str] = set()
        for trace in self.subtask_traces:
            for step in trace.result.steps:
                if isinstance(step.action, ToolInvocation):
                    used.add(step.action.tool_name)
        return used

    def participating_agents(self) -> dict[str, str]:
        """agent_id -> role for every agent that executed a sub-task."""
        return {trace.agent_id: trace.agent_role for trace in self.subtask_traces}

    def save(self, runs_root: str | Path) -> Path:
        task_dir = Path(runs_root) / self.task_id
        task_dir.mkdir(parents=True, exist_ok=True)
        path = task_dir / "trajectory.json"
        path.write_text(
            json.dumps(self.to_dict(), indent=2, ensure_ascii=False, sort_keys=True) + "\n",
            encoding="utf-8",
        )
        return path

    @classmethod
    def load(cls, path: str | Path) -> "TrajectoryRecord":
        try:
            raw = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise CorruptTrajectory(f"cannot read trajectory {path}: {exc}") from exc
        return cls.from_dict(raw)


# --- the full forward pass ------------------------------------------------------

@dataclass
class BackendBundle:
    """Every effectful dependency a task run needs."""

    session: ChatSession
    search: SearchClient
    sandbox: SandboxRunner
    embedder: EmbeddingProvider


def select_experiences(
    subtask_text: str,
    agent_role: str,
    experiences: Sequence[ExperienceItem],
    index: EmbeddingIndex,
    per_polarity: int,
) -> tuple[list[ExperienceItem], list[ExperienceItem]]:
    """Top experiences per polarity for one sub-task, agent-kind only.

    Items about the executing agent's own role outrank others; within each
    group ordering follows embedding score against the sub-task text.
    """
    agent_items = [item for item in experiences if item.kind == "agent"]
    if not agent_items:
        return [], []
    ranked = rank_experiences(subtask_text, agent_items, index)
    role_lower = agent_role.lower()
    ranked.sort(key=lambda pair: (pair[0].subject.lower() != role_lower, -pair[1], pair[0].id))
    success = [item for item, _ in ranked if item.polarity == "success"][:per_polarity]
    failure = [item for item, _ in ranked if item.polarity == "failure"][:per_polarity]
    return success, failure


def _decision_dict(decision: RecruitmentDecision) -> dict[str, Any]:
    if isinstance(decision.agent, Reuse):
        agent = {"kind": "reuse", "agent_id": decision.agent.agent_id, "score": decision.agent.score}
    else:
        agent = {"kind": "create"}
    return {
        "agent": agent,
        "tools": [[name, score] for name, score in decision.tools],
        "missing_tool_requests": [stub.to_dict() for stub in decision.missing_tool_requests],
    }


class _TaskState:
    """Mutable per-run state shared across sub-tasks; single-writer via lock."""

    def __init__(self, memories: Memories, backends: BackendBundle, cfg: EngineConfig):
        self.memories = memories
        self.backends = backends
        self.cfg = cfg
        self.pending_tools: dict[str, ToolEntry] = {}
        self.pending_agents: dict[str, AgentSpec] = {}
        self.assessment = None
        self.lock = threading.Lock()
        self.index = EmbeddingIndex.build(
            backends.embedder, self.view(), memories.experiences.items
        )

    def view(self) -> AssetView:
        return AssetView(self.memories.assets, self.pending_tools, self.pending_agents)

    def refresh_index(self) -> None:
        self.index.refresh(self.view(), self.memories.experiences.items)


def _create_assets_for(
    state: _TaskState,
    plan: TaskPlan,
    subtask: SubTask,
    decision: RecruitmentDecision,
    session: ChatSession,
) -> tuple[AgentSpec, list[str], str]:
    """Create missing tools (once per task) and a specialist agent for this sub-task."""
    cfg = state.cfg
    created_tool_names: list[str] = []
    view = state.view()

    if state.assessment is None:
        state.assessment = assess_tool_need(plan, view.tools, session)
    assessment = state.assessment

    for stub in assessment.missing_tools:
        if stub.name in view.tools:
            continue
        decision.missing_tool_requests.append(stub)
        entry, _, _ = synthesize_tool(
            stub,
            session,
            state.backends.search,
            state.memories.experiences.items,
            state.index,
            cfg.grounding,
            cfg.retrieval,
            tools=view.tools,
            original_query=subtask.description,
            source_task=plan.task_id,
        )
        state.pending_tools[entry.name] = entry
        created_tool_names.append(entry.name)
        view = state.view()

    candidate_names = set(name for name, _ in decision.tools)
    candidate_names.update(assessment.matching_tools)
    candidate_names.update(created_tool_names)
    candidates = {name: view.tools[name] for name in sorted(candidate_names) if name in view.tools}

    agent = create_agent(
        subtask.description,
        candidates,
        session,
        existing_roles=view.roles(),
        source_task=plan.task_id,
    )
    state.pending_agents[agent.id] = agent
    state.refresh_index()
    return agent, created_tool_names, agent.id


def _run_one_subtask(
    state: _TaskState,
    plan: TaskPlan,
    subtask: SubTask,
    results_so_far: Mapping[int, SubTaskResult],
) -> SubTaskTrace:
    cfg = state.cfg
    session = state.backends.session

    with state.lock:
        view = state.view()
        decision = recruit(subtask.description, view, state.index, cfg.retrieval)
        created_tools: list[str] = []
        created_agent_id: str | None = None
        if isinstance(decision.agent, Create):
            agent, created_tools, created_agent_id = _create_assets_for(
                state, plan, subtask, decision, session
            )
        else:
            agent = view.agents[decision.agent.agent_id]
        view = state.view()
        # The sub-task's available toolset: the agent's own toolbox plus the
        # recruited top-K hits.
        available = set(agent.tool_names) | {name for name, _ in decision.tools}
        tools = {name: view.tools[name] for name in sorted(available) if name in view.tools}
        success_items, failure_items = select_experiences(
            subtask.description,
            agent.role,
            state.memories.experiences.items,
            state.index,
            cfg.experiences_per_polarity,
        )

    previous = {
        dep: results_so_far[dep].result_text
        for dep in subtask.dependencies
        if dep in results_so_far
    }
    try:
        result = execute_subtask(
            subtask,
            agent,
            tools,
            [item.rendered() for item in success_items],
            [item.rendered() for item in failure_items],
            previous,
            session,
            state.backends.sandbox,
            cfg,
        )
    except StepParseError as exc:
        result = SubTaskResult(
            subtask_index=subtask.index,
            result_text=f"[error] {exc}",
            steps=(),
            status=STATUS_ERROR,
        )

    return SubTaskTrace(
        subtask=subtask,
        agent_id=agent.id,
        agent_role=agent.role,
        agent_tools=tuple(sorted(tools)),
        recruitment=_decision_dict(decision),
        created_tools=tuple(created_tools),
        created_agent=created_agent_id,
        injected_experiences={
            "success": [item.id for item in success_items],
            "failure": [item.id for item in failure_items],
        },
        result=result,
    )


def run_task(
    query: str,
    memories: Memories,
    backends: BackendBundle,
    cfg: EngineConfig,
    task_id: str | None = None,
) -> tuple[str, TrajectoryRecord]:
    """Plan, recruit or create, execute, and aggregate one task end to end."""
    if not query or not query.strip():
        raise InputError("query must be non-empty")
    started_at = utc_now_iso()
    session = backends.session

    plan = plan_task(query, session, task_id=task_id)
    batches = schedule(plan)
    state = _TaskState(memories, backends, cfg)

    traces: dict[int, SubTaskTrace] = {}
    results: dict[int, SubTaskResult] = {}
    for batch in batches:
        subtasks = [plan.subtask(i) for i in batch]
        if cfg.parallel_batches and len(subtasks) > 1:
            with ThreadPoolExecutor(max_workers=len(subtasks)) as pool:
                batch_traces = list(
                    pool.map(lambda s: _run_one_subtask(state, plan, s, dict(results)), subtasks)
                )
        else:
            batch_traces = [_run_one_subtask(state, plan, s, dict(results)) for s in subtasks]
        for trace in batch_traces:
            traces[trace.subtask.index] = trace
            results[trace.subtask.index] = trace.result

    ordered_results = [results[i] for i in sorted(results)]
    aggregation_prompt, answer = aggregate_results(query, ordered_results, session)

    record = TrajectoryRecord(
        task_id=plan.task_id,
        query=query,
        plan=plan,
        batches=batches,
        subtask_traces=[traces[i] for i in sorted(traces)],
        created_tool_entries={name: entry.to_dict() for name, entry in state.pending_tools.items()},
        created_agent_specs={aid: agent.to_dict() for aid, agent in state.pending_agents.items()},
        aggregation_prompt=aggregation_prompt,
        final_answer=answer,
        exchanges=list(session.exchanges),
        config={
            "delta": cfg.retrieval.delta,
            "top_k_tools": cfg.retrieval.top_k_tools,
            "max_steps": cfg.limits.max_steps,
            "observation_cap_bytes": cfg.limits.observation_cap_bytes,
            "max_improve_iterations": cfg.evolution.max_iterations,
            "tests_per_round": cfg.evolution.tests_per_round,
        },
        started_at=started_at,
        finished_at=utc_now_iso(),
    )
    return answer, record
