"""Chat backends: a live HTTP client and a deterministic cassette player.

A cassette is an ordered list of entries, each optionally guarded by a
substring matcher. In replay mode every request must match the next entry;
an unmatched request is an error, never a silent live call. Every exchange
is appended to the session log so trajectories can be replayed.
"""
from __future__ import annotations

import json
import logging
import os
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Protocol

from ..errors import BackendError, CassetteMiss, Unparseable
from .jsonx import extract_json

logger = logging.getLogger(__name__)

DEFAULT_TEMPERATURE = 0.0
LIVE_RETRY_ATTEMPTS = 3
LIVE_BACKOFF_BASE_S = 0.5

ENV_BASE_URL = "COEVO_CHAT_BASE_URL"
ENV_MODEL = "COEVO_CHAT_MODEL"
ENV_API_KEY = "COEVO_CHAT_API_KEY"

_network_calls = 0
_network_lock = threading.Lock()


def count_network_call() -> None:
    global _network_calls
    with _network_lock:
        _network_calls += 1


def network_call_count() -> int:
    return _network_calls


def reset_network_call_count() -> None:
    global _network_calls
    with _network_lock:
        _network_calls = 0


@dataclass(frozen=True)
class ChatRequest:
    system: str
    user: str
    params: dict[str, Any] = field(default_factory=lambda: {"temperature": DEFAULT_TEMPERATURE})

    def match_text(self) -> str:
        return f"{self.system}\n{self.user}"

    def to_dict(self) -> dict[str, Any]:
        return {"system": self.system, "user": self.user, "params": dict(self.params)}

    @classmethod
    def from_dict(cls, raw: dict[str, Any]) -> "ChatRequest":
        return cls(system=raw["system"], user=raw["user"], params=dict(raw["params"]))


@dataclass(frozen=True)
class ChatExchange:
    exchange_id: int
    request: ChatRequest
    response_text: str
    finish_reason: str
    backend_tag: str  # "live" | "scripted"

    def to_dict(self) -> dict[str, Any]:
        return {
            "exchange_id": self.exchange_id,
            "request": self.request.to_dict(),
            "response": {"text": self.response_text, "finish_reason": self.finish_reason},
            "backend_tag": self.backend_tag,
        }

    @classmethod
    def from_dict(cls, raw: dict[str, Any]) -> "ChatExchange":
        return cls(
            exchange_id=raw["exchange_id"],
            request=ChatRequest.from_dict(raw["request"]),
            response_text=raw["response"]["text"],
            finish_reason=raw["response"]["finish_reason"],
            backend_tag=raw["backend_tag"],
        )


class ChatBackend(Protocol):
    tag: str

    def complete(self, request: ChatRequest) -> tuple[str, str]:
        """Return (response text, finish reason)."""
        ...


@dataclass
class CassetteEntry:
    response: str
    match: str | None = None  # substring guard; None matches any request

    def to_dict(self) -> dict[str, Any]:
        return {"match": self.match, "response": self.response}

    @classmethod
    def from_dict(cls, raw: dict[str, Any]) -> "CassetteEntry":
        return cls(response=raw["response"], match=raw.get("match"))


class Cassette:
    """Ordered, replayable sequence of scripted responses."""

    def __init__(self, entries: list[CassetteEntry] | None = None, mode: str = "replay") -> None:
        if mode not in ("record", "replay"):
            raise ValueError(f"cassette mode must be 'record' or 'replay', got {mode!r}")
        self.entries: list[CassetteEntry] = list(entries or [])
        self.mode = mode
        self._cursor = 0
        self._lock = threading.Lock()

    def __len__(self) -> int:
        return len(self.entries)

    def rewind(self) -> None:
        with self._lock:
            self._cursor = 0

    def next_response(self, request_text: str) -> str:
        with self._lock:
            if self._cursor >= len(self.entries):
                raise CassetteMiss(
                    f"cassette exhausted after {len(self.entries)} entries; "
                    f"request started: {request_text[:120]!r}"
                )
            entry = self.entries[self._cursor]
            if entry.match is not None and entry.match not in request_text:
                raise CassetteMiss(
                    f"cassette entry {self._cursor} expects {entry.match!r}; "
                    f"request started: {request_text[:120]!r}"
                )
            self._cursor += 1
            return entry.response

    def record(self, request_text: str, response: str, match: str | None = None) -> None:
        with self._lock:
            self.entries.append(CassetteEntry(response=response, match=match))

    def to_dict(self) -> dict[str, Any]:
        return {"entries": [entry.to_dict() for entry in self.entries]}

    def save(self, path: str | Path) -> None:
        Path(path).write_text(
            json.dumps(self.to_dict(), indent=2, ensure_ascii=False, sort_keys=True) + "\n",
            encoding="utf-8",
        )

    @classmethod
    def load(cls, path: str | Path, mode: str = "replay") -> "Cassette":
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls([CassetteEntry.from_dict(e) for e in raw["entries"]], mode=mode)


class ScriptedChatBackend:
    tag = "scripted"

    def __init__(self, cassette: Cassette) -> None:
        self.cassette = cassette

    def complete(self, request: ChatRequest) -> tuple[str, str]:
        return self.cassette.next_response(request.match_text()), "stop"


class LiveChatBackend:
    """OpenAI-compatible chat-completions client with bounded retries."""

    tag = "live"

    def __init__(
        self,
        base_url: str | None = None,
        model: str | None = None,
        api_key: str | None = None,
        timeout_s: float = 120.0,
        sleep: Callable[[float], None] = time.sleep,
    ) -> None:
        self.base_url = (base_url or os.environ.get(ENV_BASE_URL, "")).rstrip("/")
        self.model = model or os.environ.get(ENV_MODEL, "")
        self.api_key = api_key or os.environ.get(ENV_API_KEY)
        self.timeout_s = timeout_s
        self._sleep = sleep
        if not self.base_url or not self.model:
            raise BackendError(
                f"live backend needs {ENV_BASE_URL} and {ENV_MODEL} (or explicit arguments)"
            )

    def complete(self, request: ChatRequest) -> tuple[str, str]:
        import requests

        messages = []
        if request.system:
            messages.append({"role": "system", "content": request.system})
        messages.append({"role": "user", "content": request.user})
        payload = {"model": self.model, "messages": messages, **request.params}
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        last_error: Exception | None = None
        for attempt in range(LIVE_RETRY_ATTEMPTS):
            try:
                count_network_call()
                resp = requests.post(
                    f"{self.base_url}/chat/completions",
                    json=payload,
                    headers=headers,
                    timeout=self.timeout_s,
                )
                if resp.status_code >= 500:
                    raise BackendError(f"server error {resp.status_code}")
                resp.raise_for_status()
                body = resp.json()
                choice = body["choices"][0]
                return choice["message"]["content"], choice.get("finish_reason", "stop")
            except Exception as exc:
                last_error = exc
                if attempt < LIVE_RETRY_ATTEMPTS - 1:
                    self._sleep(LIVE_BACKOFF_BASE_S * (2 ** attempt))
        raise BackendError(f"live chat failed after {LIVE_RETRY_ATTEMPTS} attempts: {last_error}")


class RecordingBackend:
    """Pass-through wrapper that appends every exchange to a cassette."""

    def __init__(self, inner: ChatBackend, cassette: Cassette) -> None:
        self.inner = inner
        self.cassette = cassette
        self.tag = inner.tag

    def complete(self, request: ChatRequest) -> tuple[str, str]:
        text, finish = self.inner.complete(request)
        self.cassette.record(request.match_text(), text)
        return text, finish


def complete_chat(request: ChatRequest, backend: ChatBackend, exchange_id: int = 0) -> ChatExchange:
    """Single exchange against a backend, packaged for the trajectory log."""
    text, finish = backend.complete(request)
    return ChatExchange(
        exchange_id=exchange_id,
        request=request,
        response_text=text,
        finish_reason=finish,
        backend_tag=backend.tag,
    )


REASK_SUFFIX = (
    "\n\nYour previous reply could not be parsed: {error}\n"
    "Reply again following the required output format exactly."
)


class ChatSession:
    """Backend plus the monotonically numbered exchange log for one task."""

    def __init__(self, backend: ChatBackend, params: dict[str, Any] | None = None) -> None:
        self.backend = backend
        self.params = dict(params or {"temperature": DEFAULT_TEMPERATURE})
        self.exchanges: list[ChatExchange] = []
        self._next_id = 0
        self._lock = threading.Lock()

    def complete(self, system: str, user: str) -> ChatExchange:
        request = ChatRequest(system=system, user=user, params=dict(self.params))
        with self._lock:
            self._next_id += 1
            exchange_id = self._next_id
        exchange = complete_chat(request, self.backend, exchange_id)
        with self._lock:
            self.exchanges.append(exchange)
        return exchange

    def complete_json(self, system: str, user: str, expectation: str = "object") -> Any:
        """Ask once, and on unparseable output re-ask once with the error appended."""
        exchange = self.complete(system, user)
        try:
            return extract_json(exchange.response_text, expectation)
        except Unparseable as first_error:
            retry = self.complete(system, user + REASK_SUFFIX.format(error=first_error))
            try:
                return extract_json(retry.response_text, expectation)
            except Unparseable as exc:
                raise Unparseable(f"unparseable after re-ask: {exc}") from exc
