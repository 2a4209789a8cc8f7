"""Engine configuration knobs and their defaults.

Every numeric default here is a tunable the loop itself never hardcodes:
the confidence threshold and top-K for recruitment, step and iteration
budgets, grounding caps, and sandbox limits.
"""
from __future__ import annotations

from dataclasses import dataclass, field

from .errors import InputError

DEFAULT_DELTA = 0.70
DEFAULT_TOP_K_TOOLS = 5
DEFAULT_EMBEDDING_DIM = 512

DEFAULT_MAX_STEPS = 10
DEFAULT_OBSERVATION_CAP_BYTES = 8 * 1024
DEFAULT_TOOL_TIMEOUT_S = 20.0
DEFAULT_TOOL_FILE_QUOTA_BYTES = 16 * 1024 * 1024

DEFAULT_WEB_SNIPPET_CAP = 5
DEFAULT_EXPERIENCE_CAP = 3

DEFAULT_MAX_IMPROVE_ITERATIONS = 3
DEFAULT_VALIDATION_TESTS = 3

DEFAULT_EXPERIENCES_PER_POLARITY = 3


@dataclass(frozen=True)
class RetrievalConfig:
    """Recruitment thresholds: one shared confidence cutoff for agents and tools."""

    delta: float = DEFAULT_DELTA
    top_k_tools: int = DEFAULT_TOP_K_TOOLS
    embedding_dim: int = DEFAULT_EMBEDDING_DIM

    def __post_init__(self) -> None:
        if not 0.0 < self.delta < 1.0:
            raise InputError(f"delta must be in (0,1), got {self.delta}")
        if self.top_k_tools < 1:
            raise InputError(f"top_k_tools must be >= 1, got {self.top_k_tools}")
        if self.embedding_dim < 1:
            raise InputError(f"embedding_dim must be >= 1, got {self.embedding_dim}")


@dataclass(frozen=True)
class ExecutionLimits:
    max_steps: int = DEFAULT_MAX_STEPS
    observation_cap_bytes: int = DEFAULT_OBSERVATION_CAP_BYTES
    tool_timeout_s: float = DEFAULT_TOOL_TIMEOUT_S
    tool_file_quota_bytes: int = DEFAULT_TOOL_FILE_QUOTA_BYTES

    def __post_init__(self) -> None:
        if self.max_steps < 1:
            raise InputError(f"max_steps must be >= 1, got {self.max_steps}")
        if self.observation_cap_bytes < 1:
            raise InputError("observation_cap_bytes must be positive")
        if self.tool_timeout_s <= 0:
            raise InputError("tool_timeout_s must be positive")
        if self.tool_file_quota_bytes < 1:
            raise InputError("tool_file_quota_bytes must be positive")


@dataclass(frozen=True)
class GroundingCaps:
    web_snippets: int = DEFAULT_WEB_SNIPPET_CAP
    experience_items: int = DEFAULT_EXPERIENCE_CAP


@dataclass(frozen=True)
class EvolutionConfig:
    max_iterations: int = DEFAULT_MAX_IMPROVE_ITERATIONS
    tests_per_round: int = DEFAULT_VALIDATION_TESTS

    def __post_init__(self) -> None:
        if self.max_iterations < 1:
            raise InputError("max_iterations must be >= 1")
        if self.tests_per_round < 1:
            raise InputError("tests_per_round must be >= 1")


@dataclass(frozen=True)
class EngineConfig:
    """Aggregate configuration for one task run."""

    retrieval: RetrievalConfig = field(default_factory=RetrievalConfig)
    limits: ExecutionLimits = field(default_factory=ExecutionLimits)
    grounding: GroundingCaps = field(default_factory=GroundingCaps)
    evolution: EvolutionConfig = field(default_factory=EvolutionConfig)
    experiences_per_polarity: int = DEFAULT_EXPERIENCES_PER_POLARITY
    search_enabled: bool = True
    parallel_batches: bool = False
