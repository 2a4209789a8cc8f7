"""Command-line driver: run tasks, inspect and seed memory, replay
trajectories, and compute evolution metrics.

Exit codes: 0 success, 1 runtime failure (including partial batch failure),
2 usage error.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Sequence

from .backends.chat import Cassette, ChatSession, LiveChatBackend, ScriptedChatBackend
from .backends.sandbox import SandboxRunner
from .backends.search import DisabledSearch
from .backends.store import (
    export_memory,
    import_memory,
    load_memory,
    save_memory,
)
from .config import (
    EngineConfig,
    EvolutionConfig,
    ExecutionLimits,
    RetrievalConfig,
)
from .errors import CoevoError, CorruptTrajectory, InputError
from .evolution import evolve, judge_trajectory
from .executor import BackendBundle, Finish, ToolInvocation, TrajectoryRecord, run_task
from .memory import Memories
from .metrics import compute_metrics, read_creation_log, append_creation_log
from .retrieval import HashingEmbedder
from .seeds import seed_memories

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_USAGE = 2

UNAVAILABLE_MARKER = "is not available to this agent"


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="coevo", description="Co-evolving agent engine")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one task or a batch of tasks")
    run.add_argument("query", nargs="?", help="the task to run")
    run.add_argument("--batch", help="file with one task per line")
    run.add_argument("--backend", choices=["live", "scripted"], default="scripted")
    run.add_argument("--cassette", help="cassette file for the scripted backend")
    run.add_argument("--memory-root", default="memory", help="memory tree directory")
    run.add_argument("--runs-root", default="runs", help="directory for trajectory logs")
    run.add_argument("--delta", type=float, default=RetrievalConfig().delta)
    run.add_argument("--top-k", type=int, default=RetrievalConfig().top_k_tools)
    run.add_argument("--max-steps", type=int, default=ExecutionLimits().max_steps)
    run.add_argument("--max-improve-iters", type=int, default=EvolutionConfig().max_iterations)
    run.add_argument("--no-search", action="store_true", help="disable web search grounding")
    run.add_argument("--parallel-batches", action="store_true",
                     help="execute independent sub-tasks of a batch concurrently")
    run.add_argument("--no-timestamps", action="store_true", help="suppress timestamps in output")

    memory = sub.add_parser("memory", help="inspect, seed, export, or import memory")
    memory.add_argument("subcommand", choices=["ls", "show", "export", "import", "seed"])
    memory.add_argument("arg", nargs="?", help="key, archive path, or seed name")
    memory.add_argument("--memory-root", default="memory")

    replay = sub.add_parser("replay", help="re-render a recorded trajectory, no backend calls")
    replay.add_argument("trajectory", help="path to a trajectory.json")

    metrics = sub.add_parser("metrics", help="compute evolution metrics from creation logs")
    metrics.add_argument("--logs", action="append", required=True,
                         help="creation-log JSONL file; repeat per group (group = file stem)")
    metrics.add_argument("--baseline", action="append",
                         help="baseline creation-log JSONL file(s), matched by file stem order")

    return parser


def _load_memories(root: Path) -> Memories:
    if (root / "manifest.json").is_file():
        return load_memory(root)
    return Memories()


def _make_config(args: argparse.Namespace) -> EngineConfig:
    return EngineConfig(
        retrieval=RetrievalConfig(delta=args.delta, top_k_tools=args.top_k),
        limits=ExecutionLimits(max_steps=args.max_steps),
        evolution=EvolutionConfig(max_iterations=args.max_improve_iters),
        search_enabled=not args.no_search,
        parallel_batches=args.parallel_batches,
    )


def _make_backends(args: argparse.Namespace, cfg: EngineConfig) -> BackendBundle:
    if args.backend == "scripted":
        if not args.cassette:
            raise InputError("scripted backend requires --cassette")
        chat = ScriptedChatBackend(Cassette.load(args.cassette))
    else:
        chat = LiveChatBackend()
    # Live search is a deployment concern; the CLI ships with grounding
    # degraded unless a client is wired in programmatically.
    return BackendBundle(
        session=ChatSession(chat),
        search=DisabledSearch(),
        sandbox=SandboxRunner(),
        embedder=HashingEmbedder(cfg.retrieval.embedding_dim),
    )


def cmd_run(args: argparse.Namespace) -> int:
    if args.query and args.batch:
        print("error: give either a query or --batch, not both", file=sys.stderr)
        return EXIT_USAGE
    if args.batch:
        batch_path = Path(args.batch)
        if not batch_path.is_file():
            print(f"error: batch file not found: {batch_path}", file=sys.stderr)
            return EXIT_USAGE
        queries = [
            line.strip()
            for line in batch_path.read_text(encoding="utf-8").splitlines()
            if line.strip() and not line.strip().startswith("#")
        ]
        if not queries:
            print("error: batch file contains no tasks", file=sys.stderr)
            return EXIT_USAGE
    elif args.query:
        queries = [args.query]
    else:
        print("usage: coevo run <query> | --batch FILE", file=sys.stderr)
        return EXIT_USAGE

    cfg = _make_config(args)
    try:
        backends = _make_backends(args, cfg)
    except CoevoError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE

    memory_root = Path(args.memory_root)
    runs_root = Path(args.runs_root)
    memories = _load_memories(memory_root)

    failures = 0
    for query in queries:
        try:
            answer, trajectory = run_task(query, memories, backends, cfg)
            verdict = judge_trajectory(query, trajectory, answer, backends.session)
            delta = evolve(
                trajectory, verdict, memories, backends.session, backends.sandbox,
                cfg.evolution, timeout_s=cfg.limits.tool_timeout_s,
            )
            save_memory(memories.assets, memories.experiences, memory_root, backends.embedder)
            trajectory_path = trajectory.save(runs_root)
            (trajectory_path.parent / "verdict.json").write_text(
                json.dumps(verdict.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8"
            )
            (trajectory_path.parent / "evolution.json").write_text(
                json.dumps(delta.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8"
            )
            if delta.tool_creation_records:
                append_creation_log(
                    runs_root / "creation_log.jsonl",
                    (record.to_dict() for record in delta.tool_creation_records),
                )
            stamp = "" if args.no_timestamps else f" at {trajectory.finished_at}"
            print(f"task {trajectory.task_id}{stamp}")
            print(f"answer: {answer}")
            print(
                f"assets created: {len(delta.assets_inserted)}, "
                f"experiences added: {len(delta.experiences_inserted)}, "
                f"exhausted: {len(delta.exhausted)}"
            )
            print(f"trajectory: {trajectory_path}")
        except CoevoError as exc:
            failures += 1
            print(f"task failed: {exc}", file=sys.stderr)
            if not args.batch:
                return EXIT_RUNTIME
    return EXIT_RUNTIME if failures else EXIT_OK


def cmd_memory(args: argparse.Namespace) -> int:
    root = Path(args.memory_root)
    sub = args.subcommand

    if sub == "seed":
        name = args.arg or "starter"
        if root.exists() and any(root.iterdir()):
            print(f"error: memory root {root} exists and is not empty", file=sys.stderr)
            return EXIT_RUNTIME
        memories = seed_memories(name)
        save_memory(memories.assets, memories.experiences, root, HashingEmbedder())
        print(f"seeded {root} with {name!r}: "
              f"{len(memories.assets.agents)} agent(s), {len(memories.assets.tools)} tool(s), "
              f"{len(memories.experiences)} experience item(s)")
        return EXIT_OK

    if sub == "import":
        if not args.arg:
            print("usage: coevo memory import ARCHIVE --memory-root DIR", file=sys.stderr)
            return EXIT_USAGE
        memories = import_memory(args.arg, root)
        print(f"imported {args.arg} into {root}: "
              f"{len(memories.assets.agents)} agent(s), {len(memories.assets.tools)} tool(s), "
              f"{len(memories.experiences)} experience item(s)")
        return EXIT_OK

    memories = _load_memories(root)

    if sub == "ls":
        print(f"agents: {len(memories.assets.agents)}")
        for agent_id in sorted(memories.assets.agents):
            print(f"  {agent_id}  {memories.assets.agents[agent_id].role}")
        print(f"tools: {len(memories.assets.tools)}")
        for name in sorted(memories.assets.tools):
            print(f"  {name}")
        print(f"experiences: {len(memories.experiences)}")
        for item in memories.experiences.items:
            print(f"  {item.id}  [{item.kind}/{item.polarity}] {item.title}")
        return EXIT_OK

    if sub == "show":
        key = args.arg
        if not key:
            print("usage: coevo memory show KEY", file=sys.stderr)
            return EXIT_USAGE
        if key in memories.assets.agents:
            print(json.dumps(memories.assets.agents[key].to_dict(), indent=2, sort_keys=True))
            return EXIT_OK
        if key in memories.assets.tools:
            tool = memories.assets.tools[key]
            print(json.dumps(tool.manifest_dict(), indent=2, sort_keys=True))
            print("\n--- impl ---")
            print(tool.impl_source)
            return EXIT_OK
        for item in memories.experiences.items:
            if item.id == key:
                print(item.rendered())
                return EXIT_OK
        print(f"not found: {key}", file=sys.stderr)
        return EXIT_RUNTIME

    if sub == "export":
        if not args.arg:
            print("usage: coevo memory export ARCHIVE", file=sys.stderr)
            return EXIT_USAGE
        path = export_memory(root, args.arg)
        print(f"exported {root} -> {path}")
        return EXIT_OK

    raise AssertionError(f"unhandled memory subcommand {sub!r}")


def verify_trajectory(record: TrajectoryRecord) -> list[str]:
    """Re-check the recorded invariants: step budgets and the tool guard."""
    violations: list[str] = []
    max_steps = int(record.config.get("max_steps", 0) or 0)
    for trace in record.subtask_traces:
        steps = trace.result.steps
        if max_steps and len(steps) > max_steps:
            violations.append(
                f"sub-task {trace.subtask.index}: {len(steps)} steps exceed the budget of {max_steps}"
            )
        if steps:
            last_is_finish = isinstance(steps[-1].action, Finish)
            if (trace.result.status == "finished") != last_is_finish:
                violations.append(
                    f"sub-task {trace.subtask.index}: status {trace.result.status!r} "
                    f"inconsistent with final step"
                )
        for number, step in enumerate(steps, start=1):
            if isinstance(step.action, ToolInvocation):
                if step.action.tool_name not in trace.agent_tools:
                    if UNAVAILABLE_MARKER not in step.observation:
                        violations.append(
                            f"sub-task {trace.subtask.index} step {number}: tool "
                            f"{step.action.tool_name!r} outside the agent toolbox was executed"
                        )
    return violations


def cmd_replay(args: argparse.Namespace) -> int:
    try:
        record = TrajectoryRecord.load(args.trajectory)
    except CorruptTrajectory as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME

    print(f"task {record.task_id}: {record.query}")
    print(f"plan:\n{record.plan.describe()}")
    for exchange in record.exchanges:
        print(f"\n=== exchange {exchange.exchange_id} [{exchange.backend_tag}] ===")
        print(exchange.request.user)
        print(f"--- response ({exchange.finish_reason}) ---")
        print(exchange.response_text)
    print(f"\nfinal answer: {record.final_answer}")

    violations = verify_trajectory(record)
    if violations:
        print("\ninvariant violations:", file=sys.stderr)
        for violation in violations:
            print(f"  - {violation}", file=sys.stderr)
        return EXIT_RUNTIME
    print("\ninvariants verified: step budgets and tool guards hold")
    return EXIT_OK


def cmd_metrics(args: argparse.Namespace) -> int:
    treated = {Path(path).stem: read_creation_log(path) for path in args.logs}
    baseline = None
    if args.baseline:
        baseline = {Path(path).stem: read_creation_log(path) for path in args.baseline}
        # Group names must line up; when single files are given, align them.
        if len(treated) == 1 and len(baseline) == 1 and set(treated) != set(baseline):
            baseline = {next(iter(treated)): next(iter(baseline.values()))}
    report = compute_metrics(treated, baseline)
    for line in report.format_lines():
        print(line)
    return EXIT_OK


def main(argv: Sequence[str] | None = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "run":
            return cmd_run(args)
        if args.command == "memory":
            return cmd_memory(args)
        if args.command == "replay":
            return cmd_replay(args)
        if args.command == "metrics":
            return cmd_metrics(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except CoevoError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    raise AssertionError(f"unhandled command {args.command!r}")


if __name__ == "__main__":
    sys.exit(main())
