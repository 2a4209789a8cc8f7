"""Web search client contract with scripted and disabled implementations.

The engine treats search as optional grounding: a disabled client returns
an empty result list with a degradation flag instead of failing the run.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol, Sequence

from ..errors import SearchUnavailable


@dataclass(frozen=True)
class SearchResult:
    url: str
    excerpt: str

    def to_dict(self) -> dict[str, str]:
        return {"url": self.url, "excerpt": self.excerpt}


class SearchClient(Protocol):
    enabled: bool

    def search(self, query: str, top_n: int) -> list[SearchResult]: ...


class DisabledSearch:
    """Explicitly disabled search: always empty, never an error."""

    enabled = False

    def search(self, query: str, top_n: int) -> list[SearchResult]:
        return []


class ScriptedSearch:
    """Fixture search returning a fixed result list regardless of query."""

    enabled = True

    def __init__(self, results: Sequence[SearchResult] = (), fail: bool = False) -> None:
        self.results = list(results)
        self.fail = fail
        self.queries: list[str] = []

    def search(self, query: str, top_n: int) -> list[SearchResult]:
        self.queries.append(query)
        if self.fail:
            raise SearchUnavailable("scripted search configured to fail")
        return list(self.results[:top_n])


def web_search(query: str, client: SearchClient, top_n: int = 5) -> tuple[list[SearchResult], bool]:
    """Run one search; returns (results, degraded) where degraded means the
    client was disabled and the caller should proceed without web grounding."""
    if not client.enabled:
        return [], True
    return client.search(query, top_n)[:top_n], False
