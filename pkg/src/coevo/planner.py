"""Task decomposition into a validated dependency DAG plus its execution schedule.

Sub-task indices are assigned from array order rather than trusted from the
backend, so the only things that can go wrong are the dependency references
themselves: missing indices, dangling edges, or cycles.
"""
from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass
from typing import Any, Mapping

from .backends.chat import ChatSession
from .errors import Cycle, DanglingDependency, InputError, InvalidPlan, MissingIndex
from .prompts import render_template

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SubTask:
    index: int  # 1-based
    description: str
    dependencies: tuple[int, ...]

    def to_dict(self) -> dict[str, Any]:
        return {
            "index": self.index,
            "description": self.description,
            "dependencies": list(self.dependencies),
        }

    @classmethod
    def from_dict(cls, raw: Mapping[str, Any]) -> "SubTask":
        return cls(
            index=int(raw["index"]),
            description=raw["description"],
            dependencies=tuple(int(d) for d in raw["dependencies"]),
        )


@dataclass(frozen=True)
class TaskPlan:
    task_id: str
    query: str
    subtasks: tuple[SubTask, ...]

    def subtask(self, index: int) -> SubTask:
        return self.subtasks[index - 1]

    def to_dict(self) -> dict[str, Any]:
        return {
            "task_id": self.task_id,
            "query": self.query,
            "subtasks": [s.to_dict() for s in self.subtasks],
        }

    @classmethod
    def from_dict(cls, raw: Mapping[str, Any]) -> "TaskPlan":
        return cls(
            task_id=raw["task_id"],
            query=raw["query"],
            subtasks=tuple(SubTask.from_dict(s) for s in raw["subtasks"]),
        )

    def describe(self) -> str:
        lines = []
        for sub in self.subtasks:
            deps = f" (depends on {', '.join(map(str, sub.dependencies))})" if sub.dependencies else ""
            lines.append(f"{sub.index}. {sub.description}{deps}")
        return "\n".join(lines)


def task_id_for(query: str) -> str:
    return f"task-{hashlib.sha256(query.encode('utf-8')).hexdigest()[:12]}"


def validate_plan(plan: TaskPlan) -> None:
    """Check index contiguity, reference existence, and acyclicity."""
    indices = [s.index for s in plan.subtasks]
    expected = list(range(1, len(indices) + 1))
    if indices != expected:
        raise MissingIndex(f"sub-task indices must be exactly 1..{len(indices)}, got {indices}")
    known = set(indices)
    for sub in plan.subtasks:
        for dep in sub.dependencies:
            if dep not in known:
                raise DanglingDependency(sub.index, dep)

    # Iterative depth-first search with a path stack for the cycle witness.
    deps_of = {s.index: s.dependencies for s in plan.subtasks}
    WHITE, GRAY, BLACK = 0, 1, 2
    color = {i: WHITE for i in known}
    for root in sorted(known):
        if color[root] != WHITE:
            continue
        stack: list[tuple[int, int]] = [(root, 0)]
        path = [root]
        color[root] = GRAY
        while stack:
            node, cursor = stack[-1]
            deps = deps_of[node]
            if cursor < len(deps):
                stack[-1] = (node, cursor + 1)
                nxt = deps[cursor]
                if color[nxt] == GRAY:
                    witness = path[path.index(nxt):] + [nxt]
                    raise Cycle(witness)
                if color[nxt] == WHITE:
                    color[nxt] = GRAY
                    stack.append((nxt, 0))
                    path.append(nxt)
            else:
                color[node] = BLACK
                stack.pop()
                path.pop()


def schedule(plan: TaskPlan) -> list[list[int]]:
    """Deterministic topological layering.

    Batch n holds every sub-task whose dependencies were all satisfied by
    batches < n; within a batch, indices ascend. Independent sub-tasks may
    run concurrently within a batch; execution order across batches is fixed.
    """
    validate_plan(plan)
    remaining = {s.index: set(s.dependencies) for s in plan.subtasks}
    done: set[int] = set()
    batches: list[list[int]] = []
    while remaining:
        ready = sorted(i for i, deps in remaining.items() if deps <= done)
        if not ready:
            raise InvalidPlan("no schedulable sub-task; plan is cyclic")
        batches.append(ready)
        done.update(ready)
        for i in ready:
            del remaining[i]
    return batches


def _build_plan(task_id: str, query: str, raw: Mapping[str, Any]) -> TaskPlan:
    raw_tasks = raw.get("sub_tasks")
    if raw_tasks is None or not isinstance(raw_tasks, list):
        raise InvalidPlan("planner output must contain a 'sub_tasks' array")
    if not raw_tasks:
        # A planner that emits nothing still owes us a plan: the whole query
        # becomes the single sub-task.
        return TaskPlan(task_id=task_id, query=query, subtasks=(SubTask(1, query, ()),))
    subtasks = []
    for position, entry in enumerate(raw_tasks, start=1):
        if not isinstance(entry, Mapping) or "description" not in entry:
            raise InvalidPlan(f"sub-task {position} must be an object with a description")
        description = str(entry["description"]).strip()
        if not description:
            raise InvalidPlan(f"sub-task {position} has an empty description")
        deps_raw = entry.get("dependencies", [])
        try:
            deps = tuple(int(d) for d in deps_raw)
        except (TypeError, ValueError) as exc:
            raise InvalidPlan(f"sub-task {position} has non-integer dependencies: {deps_raw!r}") from exc
        subtasks.append(SubTask(index=position, description=description, dependencies=deps))
    return TaskPlan(task_id=task_id, query=query, subtasks=tuple(subtasks))


def plan_task(query: str, session: ChatSession, task_id: str | None = None) -> TaskPlan:
    """Decompose a query into a validated plan via the planning prompt."""
    if not query or not query.strip():
        raise InputError("query must be non-empty")
    prompt = render_template("planning", {"query": query})
    raw = session.complete_json("", prompt, expectation="object")
    plan = _build_plan(task_id or task_id_for(query), query, raw)
    validate_plan(plan)
    return plan
