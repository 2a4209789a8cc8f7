from __future__ import annotations

import json
import re
import threading

import numpy as np
import pytest

from conftest import make_agent, make_tool
from coevo.backends.chat import ChatSession
from coevo.backends.sandbox import SandboxRunner
from coevo.backends.search import DisabledSearch
from coevo.config import EngineConfig, ExecutionLimits, RetrievalConfig
from coevo.errors import InputError, ProviderUnavailable
from coevo.executor import BackendBundle, run_task
from coevo.memory import Memories
from coevo.retrieval import HashingEmbedder, RemoteEmbedder


class RoutingBackend:
    """Thread-safe fake backend that answers by inspecting the request text."""

    tag = "scripted"

    def __init__(self):
        self.lock = threading.Lock()
        self.requests: list[str] = []

    def complete(self, request):
        text = request.match_text()
        with self.lock:
            self.requests.append(text)
        if "task planning expert" in text:
            return (
                json.dumps({
                    "sub_tasks": [
                        {"description": "inspect the widget payloads carefully", "dependencies": []},
                        {"description": "validate the widget payload schema fields", "dependencies": []},
                        {"description": "summarize the widget payload findings", "dependencies": [1, 2]},
                    ]
                }),
                "stop",
            )
        if "assembling the final answer" in text:
            return "all widget work compiled", "stop"
        match = re.search(r"# Current Sub-Task\n(.+)\n", text)
        sub = match.group(1) if match else "unknown"
        block = (
            "```\n"
            "Thought: nothing left to do here\n"
            "Action: finish\n"
            f'Action Input: {{"result": "finished: {sub}"}}\n'
            "```"
        )
        return block, "stop"


def widget_memories() -> Memories:
    memories = Memories()
    memories.assets.insert([
        make_tool(),
        make_agent(
            role="Widget Payload Generalist",
            expertise="Inspects, validates, and summarizes widget payloads and their schema fields.",
        ),
    ])
    return memories


def widget_config(parallel: bool) -> EngineConfig:
    return EngineConfig(
        retrieval=RetrievalConfig(delta=0.05, top_k_tools=3),
        limits=ExecutionLimits(max_steps=3),
        parallel_batches=parallel,
    )


class TestRunTaskOrchestration:
    def test_empty_query_rejected_before_planning(self):
        backend = RoutingBackend()
        bundle = BackendBundle(
            session=ChatSession(backend),
            search=DisabledSearch(),
            sandbox=SandboxRunner(),
            embedder=HashingEmbedder(128),
        )
        with pytest.raises(InputError):
            run_task("   ", widget_memories(), bundle, widget_config(parallel=False))
        assert backend.requests == []

    def test_sequential_three_subtask_run(self):
        backend = RoutingBackend()
        bundle = BackendBundle(
            session=ChatSession(backend),
            search=DisabledSearch(),
            sandbox=SandboxRunner(),
            embedder=HashingEmbedder(128),
        )
        answer, trajectory = run_task(
            "handle the widget payloads", widget_memories(), bundle, widget_config(parallel=False)
        )
        assert answer == "all widget work compiled"
        assert trajectory.batches == [[1, 2], [3]]
        assert all(t.recruitment["agent"]["kind"] == "reuse" for t in trajectory.subtask_traces)
        # Dependency data-flow: sub-task 3's prompt carries both results.
        final_prompt = [r for r in backend.requests if "summarize the widget payload" in r][-1]
        assert "finished: inspect the widget payloads carefully" in final_prompt
        assert "finished: validate the widget payload schema fields" in final_prompt

    def test_parallel_batches_join_results(self):
        backend = RoutingBackend()
        bundle = BackendBundle(
            session=ChatSession(backend),
            search=DisabledSearch(),
            sandbox=SandboxRunner(),
            embedder=HashingEmbedder(128),
        )
        answer, trajectory = run_task(
            "handle the widget payloads", widget_memories(), bundle, widget_config(parallel=True)
        )
        assert answer == "all widget work compiled"
        results = {t.subtask.index: t.result for t in trajectory.subtask_traces}
        assert results[1].status == "finished"
        assert results[2].status == "finished"
        # The dependent sub-task still sees both upstream results.
        assert "finished: inspect" in " ".join(
            r for r in backend.requests if "summarize the widget payload" in r
        )
        exchange_ids = [e.exchange_id for e in trajectory.exchanges]
        assert sorted(exchange_ids) == list(range(1, len(exchange_ids) + 1))

    def test_parallel_equals_sequential_modulo_exchange_order(self):
        def run(parallel: bool):
            backend = RoutingBackend()
            bundle = BackendBundle(
                session=ChatSession(backend),
                search=DisabledSearch(),
                sandbox=SandboxRunner(),
                embedder=HashingEmbedder(128),
            )
            _, trajectory = run_task(
                "handle the widget payloads", widget_memories(), bundle, widget_config(parallel)
            )
            normalized = trajectory.normalized()
            normalized.pop("exchanges")  # interleaving differs; content must not
            return normalized

        assert run(True) == run(False)


class TestRemoteEmbedder:
    def test_normalizes_response_vector(self, monkeypatch):
        import requests

        class _Resp:
            status_code = 200

            def raise_for_status(self):
                pass

            def json(self):
                return {"data": [{"embedding": [3.0, 4.0, 0.0, 0.0]}]}

        monkeypatch.setattr(requests, "post", lambda *a, **k: _Resp())
        provider = RemoteEmbedder("http://unit.test/embeddings", "embed-model", dim=4)
        vec = provider.embed("anything")
        assert vec == pytest.approx(np.array([0.6, 0.8, 0.0, 0.0]))

    def test_wrong_dimension_rejected(self, monkeypatch):
        import requests

        class _Resp:
            status_code = 200

            def raise_for_status(self):
                pass

            def json(self):
                return {"data": [{"embedding": [1.0, 2.0]}]}

        monkeypatch.setattr(requests, "post", lambda *a, **k: _Resp())
        provider = RemoteEmbedder("http://unit.test/embeddings", "embed-model", dim=4)
        with pytest.raises(ProviderUnavailable):
            provider.embed("anything")

    def test_transport_failure_is_provider_unavailable(self, monkeypatch):
        import requests

        def boom(*args, **kwargs):
            raise OSError("connection refused")

        monkeypatch.setattr(requests, "post", boom)
        provider = RemoteEmbedder("http://unit.test/embeddings", "embed-model", dim=4)
        with pytest.raises(ProviderUnavailable):
            provider.embed("anything")

    def test_request_shape(self, monkeypatch):
        import requests

        seen = {}

        class _Resp:
            status_code = 200

            def raise_for_status(self):
                pass

            def json(self):
                return {"data": [{"embedding": [1.0, 0.0, 0.0, 0.0]}]}

        def fake_post(url, json=None, headers=None, timeout=None):
            seen["url"] = url
            seen["payload"] = json
            seen["headers"] = headers
            return _Resp()

        monkeypatch.setattr(requests, "post", fake_post)
        provider = RemoteEmbedder("http://unit.test/embeddings", "embed-model", dim=4, api_key="sk-unit")
        provider.embed("hello world")
        assert seen["url"] == "http://unit.test/embeddings"
        assert seen["payload"] == {"model": "embed-model", "input": ["hello world"]}
        assert seen["headers"]["Authorization"] == "Bearer sk-unit"
