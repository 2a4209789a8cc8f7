"""Co-evolving agent engine.

Forward inference plans a task, recruits or creates the assets each
sub-task needs, and executes them in a templated think/act/observe loop;
backward evolution judges the trajectory, validates and repairs new assets,
distills experience, and merges both into persistent dual memory. Every
effectful edge (chat, search, sandbox, persistence) is a pluggable backend
with a deterministic scripted implementation.
"""
from .config import (
    EngineConfig,
    EvolutionConfig,
    ExecutionLimits,
    GroundingCaps,
    RetrievalConfig,
)
from .memory import (
    AgentSpec,
    AssetMemory,
    AssetView,
    ExperienceItem,
    ExperienceMemory,
    Memories,
    Origin,
    ToolEntry,
    validate_agent_spec,
    validate_experience_item,
    validate_tool_entry,
)
from .retrieval import (
    Create,
    EmbeddingIndex,
    HashingEmbedder,
    RecruitmentDecision,
    RemoteEmbedder,
    Reuse,
    cosine_similarity,
    recruit,
    recruit_agent,
    recruit_tools,
)
from .planner import SubTask, TaskPlan, plan_task, schedule, validate_plan
from .executor import (
    BackendBundle,
    Finish,
    ReActStep,
    SubTaskResult,
    ToolInvocation,
    TrajectoryRecord,
    aggregate_results,
    execute_subtask,
    invoke_tool,
    render_react_prompt,
    run_task,
)
from .evolution import (
    EvolutionDelta,
    ImproveOutcome,
    ReflectionOutput,
    ValidationReport,
    Verdict,
    evolve,
    finalize_assets,
    improve_asset,
    judge_trajectory,
    reflect,
    validate_asset,
)
from .metrics import GroupStats, MetricsReport, compute_metrics

__version__ = "0.1.0"

__all__ = [
    "AgentSpec",
    "AssetMemory",
    "AssetView",
    "BackendBundle",
    "Create",
    "EmbeddingIndex",
    "EngineConfig",
    "EvolutionConfig",
    "EvolutionDelta",
    "ExecutionLimits",
    "ExperienceItem",
    "ExperienceMemory",
    "Finish",
    "GroundingCaps",
    "GroupStats",
    "HashingEmbedder",
    "ImproveOutcome",
    "Memories",
    "MetricsReport",
    "Origin",
    "ReActStep",
    "RecruitmentDecision",
    "ReflectionOutput",
    "RemoteEmbedder",
    "RetrievalConfig",
    "Reuse",
    "SubTask",
    "SubTaskResult",
    "TaskPlan",
    "ToolEntry",
    "ToolInvocation",
    "TrajectoryRecord",
    "ValidationReport",
    "Verdict",
    "aggregate_results",
    "compute_metrics",
    "cosine_similarity",
    "evolve",
    "execute_subtask",
    "finalize_assets",
    "improve_asset",
    "invoke_tool",
    "judge_trajectory",
    "plan_task",
    "recruit",
    "recruit_agent",
    "recruit_tools",
    "reflect",
    "render_react_prompt",
    "run_task",
    "schedule",
    "validate_agent_spec",
    "validate_asset",
    "validate_experience_item",
    "validate_plan",
    "validate_tool_entry",
]
