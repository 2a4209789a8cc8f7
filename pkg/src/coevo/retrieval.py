"""Embedding-based asset recruitment: reuse a stored asset when similarity
clears the confidence threshold, otherwise flag the sub-task for creation.

Banks stay at desk scale, so selection is an exact scan; the index is an
immutable snapshot rebuilt by the single writer after memory mutations.
"""
from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Protocol, Sequence, Union

import numpy as np

from .config import RetrievalConfig
from .errors import (
    DimensionMismatch,
    EmptyText,
    IndexStale,
    ProviderUnavailable,
    ZeroVector,
)
from .memory import AssetView, ExperienceItem

logger = logging.getLogger(__name__)

KIND_AGENT = "agent"
KIND_TOOL = "tool"
KIND_EXPERIENCE = "experience"


class EmbeddingProvider(Protocol):
    dim: int

    def embed(self, text: str) -> np.ndarray: ...


class HashingEmbedder:
    """Offline default: feature-hashed character 3-grams, L2-normalized.

    Deterministic and dependency-free; shared 3-grams between texts produce
    proportionally higher cosine, which is all the tests and desk-scale runs
    need. A remote embedding endpoint is a drop-in replacement.
    """

    def __init__(self, dim: int = 512) -> None:
        if dim < 1:
            raise ValueError("dim must be positive")
        self.dim = dim

    def embed(self, text: str) -> np.ndarray:
        if not text:
            raise EmptyText("cannot embed empty text")
        padded = f"\x01{text.lower()}\x01"
        vec = np.zeros(self.dim, dtype=np.float64)
        for i in range(len(padded) - 2):
            gram = padded[i:i + 3]
            digest = hashlib.blake2b(gram.encode("utf-8"), digest_size=8).digest()
            vec[int.from_bytes(digest, "big") % self.dim] += 1.0
        norm = float(np.linalg.norm(vec))
        return vec / norm


class RemoteEmbedder:
    """HTTP embedding provider speaking the common {model, input} JSON shape."""

    def __init__(self, endpoint: str, model: str, dim: int, api_key: str | None = None,
                 timeout_s: float = 30.0) -> None:
        self.endpoint = endpoint
        self.model = model
        self.dim = dim
        self.api_key = api_key
        self.timeout_s = timeout_s

    def embed(self, text: str) -> np.ndarray:
        if not text:
            raise EmptyText("cannot embed empty text")
        import requests

        from .backends.chat import count_network_call

        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        try:
            count_network_call()
            resp = requests.post(
                self.endpoint,
                json={"model": self.model, "input": [text]},
                headers=headers,
                timeout=self.timeout_s,
            )
            resp.raise_for_status()
            payload = resp.json()
            values = payload["data"][0]["embedding"]
        except Exception as exc:  # transport, HTTP, or shape errors all mean: no provider
            raise ProviderUnavailable(f"embedding endpoint failed: {exc}") from exc
        vec = np.asarray(values, dtype=np.float64)
        if vec.shape != (self.dim,):
            raise ProviderUnavailable(f"embedding endpoint returned dim {vec.shape}, expected {self.dim}")
        norm = float(np.linalg.norm(vec))
        if norm == 0.0:
            raise ProviderUnavailable("embedding endpoint returned a zero vector")
        return vec / norm


def cosine_similarity(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionMismatch(f"vector dims differ: {a.shape} vs {b.shape}")
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        raise ZeroVector("cosine undefined for zero vectors")
    return float(np.clip(np.dot(a, b) / (na * nb), -1.0, 1.0))


@dataclass(frozen=True)
class Reuse:
    agent_id: str
    score: float


@dataclass(frozen=True)
class Create:
    subtask_text: str


AgentDecision = Union[Reuse, Create]


@dataclass
class RecruitmentDecision:
    agent: AgentDecision
    tools: tuple[tuple[str, float], ...]
    missing_tool_requests: list = field(default_factory=list)

    @property
    def needs_creation(self) -> bool:
        return isinstance(self.agent, Create)


class EmbeddingIndex:
    """Snapshot of one vector per memory key, exact-scanned at query time."""

    def __init__(self, provider: EmbeddingProvider) -> None:
        self.provider = provider
        self._vectors: dict[tuple[str, str], np.ndarray] = {}

    @classmethod
    def build(
        cls,
        provider: EmbeddingProvider,
        assets: AssetView,
        experiences: Iterable[ExperienceItem] = (),
    ) -> "EmbeddingIndex":
        index = cls(provider)
        index.refresh(assets, experiences)
        return index

    def refresh(self, assets: AssetView, experiences: Iterable[ExperienceItem] = ()) -> None:
        vectors: dict[tuple[str, str], np.ndarray] = {}
        for agent_id, agent in assets.agents.items():
            vectors[(KIND_AGENT, agent_id)] = self.provider.embed(agent.key_text())
        for name, tool in assets.tools.items():
            vectors[(KIND_TOOL, name)] = self.provider.embed(tool.key_text())
        for item in experiences:
            vectors[(KIND_EXPERIENCE, item.id)] = self.provider.embed(item.key_text())
        self._vectors = vectors

    def set_vector(self, kind: str, key: str, vector: Sequence[float]) -> None:
        """Direct injection, used by loaders and synthetic-bank tests."""
        self._vectors[(kind, key)] = np.asarray(vector, dtype=np.float64)

    def keys(self, kind: str) -> set[str]:
        return {key for (k, key) in self._vectors if k == kind}

    def entries(self) -> dict[tuple[str, str], np.ndarray]:
        return dict(self._vectors)

    def scores(self, kind: str, query_vec: np.ndarray) -> list[tuple[str, float]]:
        """Cosine against every key of `kind`, sorted score desc then key asc."""
        scored = [
            (key, cosine_similarity(query_vec, vec))
            for (k, key), vec in self._vectors.items()
            if k == kind
        ]
        scored.sort(key=lambda pair: (-pair[1], pair[0]))
        return scored


def recruit_agent(
    subtask_text: str,
    agents: Mapping[str, object],
    index: EmbeddingIndex,
    cfg: RetrievalConfig,
) -> AgentDecision:
    """Top-1 agent above the threshold, else Create. Ties break by ascending id."""
    if not agents:
        return Create(subtask_text)
    query_vec = index.provider.embed(subtask_text)
    scored = [(key, score) for key, score in index.scores(KIND_AGENT, query_vec) if key in agents]
    if not scored:
        return Create(subtask_text)
    best_id, best_score = scored[0]
    if best_score > cfg.delta:
        return Reuse(best_id, best_score)
    return Create(subtask_text)


def recruit_tools(
    subtask_text: str,
    tools: Mapping[str, object],
    index: EmbeddingIndex,
    cfg: RetrievalConfig,
) -> tuple[tuple[str, float], ...]:
    """Top-K tools with score strictly above the threshold; may be empty."""
    if not tools:
        return ()
    query_vec = index.provider.embed(subtask_text)
    scored = [
        (key, score)
        for key, score in index.scores(KIND_TOOL, query_vec)
        if key in tools and score > cfg.delta
    ]
    return tuple(scored[: cfg.top_k_tools])


def recruit(
    subtask_text: str,
    assets: AssetView,
    index: EmbeddingIndex,
    cfg: RetrievalConfig,
) -> RecruitmentDecision:
    """Per-sub-task recruitment: reuse first, flag creation on demand."""
    agent_keys = set(assets.agents)
    tool_keys = set(assets.tools)
    if index.keys(KIND_AGENT) != agent_keys or index.keys(KIND_TOOL) != tool_keys:
        raise IndexStale(
            "embedding index and asset memory disagree: "
            f"agents {sorted(index.keys(KIND_AGENT) ^ agent_keys)}, "
            f"tools {sorted(index.keys(KIND_TOOL) ^ tool_keys)}"
        )
    agent_decision = recruit_agent(subtask_text, assets.agents, index, cfg)
    tool_hits = recruit_tools(subtask_text, assets.tools, index, cfg)
    return RecruitmentDecision(agent=agent_decision, tools=tool_hits)


def rank_experiences(
    query_text: str,
    items: Sequence[ExperienceItem],
    index: EmbeddingIndex,
) -> list[tuple[ExperienceItem, float]]:
    """Score experience items against a query; sorted score desc then id asc."""
    if not items:
        return []
    query_vec = index.provider.embed(query_text)
    by_id = {item.id: item for item in items}
    ranked = [
        (by_id[key], score)
        for key, score in index.scores(KIND_EXPERIENCE, query_vec)
        if key in by_id
    ]
    return ranked
