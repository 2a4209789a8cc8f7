"""Effectful edges of the engine: chat, search, sandbox, and persistence.

Everything here is a contract with at least one scripted implementation so
the orchestration loop stays deterministic under test.
"""
from .chat import (
    Cassette,
    ChatBackend,
    ChatExchange,
    ChatRequest,
    ChatSession,
    LiveChatBackend,
    RecordingBackend,
    ScriptedChatBackend,
    complete_chat,
    network_call_count,
    reset_network_call_count,
)
from .jsonx import extract_json
from .sandbox import SandboxRequest, SandboxResult, SandboxRunner
from .search import DisabledSearch, ScriptedSearch, SearchClient, SearchResult, web_search
from .store import (
    MemorySnapshot,
    export_memory,
    import_memory,
    load_memory,
    save_memory,
)

__all__ = [
    "Cassette",
    "ChatBackend",
    "ChatExchange",
    "ChatRequest",
    "ChatSession",
    "DisabledSearch",
    "LiveChatBackend",
    "MemorySnapshot",
    "RecordingBackend",
    "SandboxRequest",
    "SandboxResult",
    "SandboxRunner",
    "ScriptedChatBackend",
    "ScriptedSearch",
    "SearchClient",
    "SearchResult",
    "complete_chat",
    "export_memory",
    "extract_json",
    "import_memory",
    "load_memory",
    "network_call_count",
    "reset_network_call_count",
    "save_memory",
    "web_search",
]
