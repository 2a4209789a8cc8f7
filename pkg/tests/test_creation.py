from __future__ import annotations

import json

import pytest

from conftest import json_response, make_experience, make_tool, scripted_session
from coevo.backends.search import DisabledSearch, ScriptedSearch, SearchResult
from coevo.config import GroundingCaps, RetrievalConfig
from coevo.creation import (
    GroundingBundle,
    MissingToolStub,
    ToolSpecDraft,
    assess_tool_need,
    collect_grounding,
    create_agent,
    generate_tool_spec,
    implement_tool,
)
from coevo.errors import (
    ContractViolation,
    InputError,
    MissingToolConfig,
    NameMutated,
    SuggestionCountOutOfRange,
)
from coevo.planner import SubTask, TaskPlan
from coevo.retrieval import EmbeddingIndex, cosine_similarity

PLAN = TaskPlan(
    task_id="task-assess",
    query="simulate the game",
    subtasks=(SubTask(1, "Simulate the piston platform game and report per-ball win probability", ()),),
)


def assessment_payload(**overrides):
    payload = {
        "need_creation": True,
        "required_capabilities": ["simulate_piston_game"],
        "matching_tools": [],
        "missing_tools": [
            {
                "name": "simulate_piston_platform_game",
                "description": "Monte Carlo simulation of the piston platform game.",
                "reason": "Stateful Simulation/Iteration: repeated random draws with evolving state.",
                "example_input_output": 'Input: {"num_balls": 10} -> Output: {"win_probabilities": {}}',
            }
        ],
        "justification": "The game cannot be evaluated analytically in one step.",
    }
    payload.update(overrides)
    return payload


class TestAssessToolNeed:
    def test_consistent_no_creation(self):
        session = scripted_session([
            ("Principal Engineer", json_response(assessment_payload(need_creation=False, missing_tools=[]))),
        ])
        assessment = assess_tool_need(PLAN, {}, session)
        assert assessment.need_creation is False
        assert assessment.missing_tools == ()

    def test_inconsistent_flag_rejected(self):
        session = scripted_session([
            (None, json_response(assessment_payload(need_creation=False))),
        ])
        with pytest.raises(ContractViolation):
            assess_tool_need(PLAN, {}, session)

    def test_unknown_matching_tool_dropped_with_warning(self):
        tools = {"echo_payload": make_tool()}
        session = scripted_session([
            (None, json_response(assessment_payload(matching_tools=["echo_payload", "ghost_tool"]))),
        ])
        assessment = assess_tool_need(PLAN, tools, session)
        assert assessment.matching_tools == ("echo_payload",)
        assert any("ghost_tool" in w for w in assessment.warnings)

    def test_type_contract_enforced(self):
        session = scripted_session([
            (None, json_response(assessment_payload(required_capabilities="not-a-list"))),
        ])
        with pytest.raises(ContractViolation):
            assess_tool_need(PLAN, {}, session)

    def test_bad_missing_tool_name(self):
        bad = assessment_payload()
        bad["missing_tools"][0]["name"] = "Not-Snake"
        session = scripted_session([(None, json_response(bad))])
        with pytest.raises(ContractViolation):
            assess_tool_need(PLAN, {}, session)

    def test_prompt_carries_plan_and_bank(self):
        tools = {"echo_payload": make_tool()}
        session = scripted_session([
            (None, json_response(assessment_payload(need_creation=False, missing_tools=[]))),
        ])
        assess_tool_need(PLAN, tools, session)
        prompt = session.exchanges[0].request.user
        assert "Simulate the piston platform game" in prompt
        assert "echo_payload" in prompt


SPEC_PAYLOAD = {
    "tool_creation_specs": [
        {
            "tool_name": "simulate_piston_platform_game",
            "tool_description": "Simulates the piston platform game via Monte Carlo.",
            "input_parameters": [
                {"name": "num_balls", "type": "integer", "description": "Ball count.", "default": 100},
                {"name": "num_simulations", "type": "integer", "description": "Iterations.", "default": 100000},
            ],
            "output_format": {"type": "object", "properties": {"win_probabilities": {"type": "object"}}},
            "core_logic": [
                "Step 1: Initialize win counts for all balls to 0.",
                "Step 2: Run the simulation loop.",
                "Step 5: Apply Piston Rules for ejection and release.",
                "Step 8: Calculate probabilities as wins / total simulations.",
            ],
        }
    ]
}

STUB = MissingToolStub(
    name="simulate_piston_platform_game",
    description="Monte Carlo simulation of the piston platform game.",
    reason="Stateful simulation.",
)


class TestGenerateToolSpec:
    def test_valid_draft_preserves_name_and_logic(self):
        session = scripted_session([("implementable specifications", json_response(SPEC_PAYLOAD))])
        draft = generate_tool_spec(STUB, session)
        assert draft.tool_name == "simulate_piston_platform_game"
        assert any("Piston Rules" in step for step in draft.core_logic)
        assert len(draft.input_parameters) == 2

    def test_renamed_spec_rejected(self):
        renamed = json.loads(json.dumps(SPEC_PAYLOAD))
        renamed["tool_creation_specs"][0]["tool_name"] = "totally_different_tool"
        session = scripted_session([(None, json_response(renamed))])
        with pytest.raises(NameMutated):
            generate_tool_spec(STUB, session)

    def test_empty_description_is_input_error(self):
        session = scripted_session([])
        with pytest.raises(InputError):
            generate_tool_spec(MissingToolStub(name="x_tool", description="   ", reason="r"), session)

    def test_duplicate_parameter_names_rejected(self):
        dup = json.loads(json.dumps(SPEC_PAYLOAD))
        dup["tool_creation_specs"][0]["input_parameters"].append(
            {"name": "num_balls", "type": "integer", "description": "again"}
        )
        session = scripted_session([(None, json_response(dup))])
        with pytest.raises(ContractViolation):
            generate_tool_spec(STUB, session)


def draft() -> ToolSpecDraft:
    spec = SPEC_PAYLOAD["tool_creation_specs"][0]
    return ToolSpecDraft(
        tool_name=spec["tool_name"],
        tool_description=spec["tool_description"],
        input_parameters=tuple(spec["input_parameters"]),
        output_format=spec["output_format"],
        core_logic=tuple(spec["core_logic"]),
    )


class TestCollectGrounding:
    def _index(self, embedder, items):
        index = EmbeddingIndex(embedder)
        for item in items:
            index.set_vector("experience", item.id, embedder.embed(item.key_text()))
        return index

    def test_offline_degrades_to_experience_only(self, embedder):
        item = make_experience(
            "exp-piston",
            kind="tool",
            title="How to Simulate Piston Platform Game Probabilities?",
            subject="simulate_piston_platform_game",
            body="Simulates the piston platform game via Monte Carlo with win probabilities.",
        )
        index = self._index(embedder, [item])
        bundle = collect_grounding(
            draft(), DisabledSearch(), [item], index, GroundingCaps(), RetrievalConfig(delta=0.10)
        )
        assert bundle.search_degraded is True
        assert bundle.web_snippets == ()
        assert [item_id for item_id, _ in bundle.experience_items] == ["exp-piston"]

    def test_relevant_experience_above_threshold_retrieved(self, embedder):
        relevant = make_experience(
            "exp-images",
            kind="tool",
            title="How to Analyze Images Using a Multimodal Model?",
            subject="analyze_image",
            body="Parse and analyze an image file with a multimodal model for captions and tables.",
        )
        unrelated = make_experience(
            "exp-soup",
            kind="tool",
            title="How to Simmer Vegetable Soup Slowly?",
            subject="make_soup",
            body="Cook on low heat with fresh vegetables and herbs for an hour.",
        )
        image_draft = ToolSpecDraft(
            tool_name="analyze_image_contents",
            tool_description="Parse and analyze an image file with a multimodal model.",
            input_parameters=(),
            output_format={},
            core_logic=("Step 1: load the image",),
        )
        index = self._index(embedder, [relevant, unrelated])
        bundle = collect_grounding(
            image_draft, DisabledSearch(), [relevant, unrelated], index,
            GroundingCaps(), RetrievalConfig(delta=0.30),
        )
        ids = [item_id for item_id, _ in bundle.experience_items]
        assert "exp-images" in ids
        assert "exp-soup" not in ids

    def test_cap_keeps_highest_scoring(self, embedder):
        target = draft()
        items = []
        for i in range(20):
            # Vary similarity by blending the spec text with noise.
            overlap = target.spec_text()[: 10 + i * 6]
            items.append(
                make_experience(
                    f"exp-{i:02d}",
                    kind="tool",
                    title=f"How to Handle Case {i:02d} Variants?",
                    subject=f"tool_{i}",
                    body=overlap or "unrelated filler",
                )
            )
        index = self._index(embedder, items)
        cfg = RetrievalConfig(delta=0.05)
        bundle = collect_grounding(target, DisabledSearch(), items, index, GroundingCaps(experience_items=3), cfg)
        assert len(bundle.experience_items) == 3
        # Brute-force oracle: rank all items by cosine, take the top 3 above delta.
        query_vec = embedder.embed(target.spec_text())
        scored = sorted(
            ((cosine_similarity(query_vec, embedder.embed(i.key_text())), i.id) for i in items),
            key=lambda pair: (-pair[0], pair[1]),
        )
        expected = [item_id for score, item_id in scored if score > cfg.delta][:3]
        assert [item_id for item_id, _ in bundle.experience_items] == expected
        scores = [score for _, score in bundle.experience_items]
        assert all(score > cfg.delta for score in scores)

    def test_web_results_capped_and_cited(self, embedder):
        fixture = [SearchResult(f"https://unit.test/{i}", f"snippet {i}") for i in range(10)]
        index = self._index(embedder, [])
        bundle = collect_grounding(
            draft(), ScriptedSearch(fixture), [], index, GroundingCaps(web_snippets=5), RetrievalConfig()
        )
        assert len(bundle.web_snippets) == 5
        assert bundle.search_degraded is False
        assert bundle.citations() == tuple(f"https://unit.test/{i}" for i in range(5))


TOOL_MODULE = (
    "def simulate_piston_platform_game(num_balls=100, num_simulations=1000):\n"
    "    return {'win_probabilities': {}, 'best_choice': 1}\n\n"
    "TOOL_CONFIG = {\n"
    '    "name": "simulate_piston_platform_game",\n'
    '    "description": "d",\n'
    '    "function": simulate_piston_platform_game,\n'
    '    "input_schema": {},\n'
    '    "returns": {},\n'
    "}\n"
)


def implementation_payload(**overrides):
    payload = {
        "name": "simulate_piston_platform_game",
        "description": "Simulates the piston platform game and reports per-ball win probabilities.",
        "input_schema": {
            "type": "object",
            "properties": {
                "num_balls": {"type": "integer", "default": 100},
                "num_simulations": {"type": "integer", "default": 1000},
            },
            "required": [],
        },
        "returns": {"type": "object", "description": "win_probabilities and best_choice"},
        "module_code": TOOL_MODULE,
    }
    payload.update(overrides)
    return payload


def empty_bundle() -> GroundingBundle:
    return GroundingBundle(web_snippets=(), experience_items=(), experience_texts=(), search_degraded=True)


class TestImplementTool:
    def test_well_formed_payload_yields_entry(self):
        session = scripted_session([("Model Context Protocol", json_response(implementation_payload()))])
        entry = implement_tool(draft(), empty_bundle(), session, source_task="task-assess")
        assert entry.name == "simulate_piston_platform_game"
        assert entry.origin.kind == "created"
        assert entry.origin.source_task == "task-assess"

    def test_module_without_tool_config_rejected(self):
        bad = implementation_payload(module_code="def f():\n    return 1\n")
        session = scripted_session([(None, json_response(bad))])
        with pytest.raises(MissingToolConfig):
            implement_tool(draft(), empty_bundle(), session)

    def test_rename_rejected(self):
        bad = implementation_payload(name="other_name")
        session = scripted_session([(None, json_response(bad))])
        with pytest.raises(NameMutated):
            implement_tool(draft(), empty_bundle(), session)

    def test_grounding_cited_in_doc_refs(self):
        bundle = GroundingBundle(
            web_snippets=(SearchResult("https://unit.test/doc", "excerpt"),),
            experience_items=(("exp-piston", 0.9),),
            experience_texts=("## How to Do It?\n\n### Description\ntext",),
        )
        session = scripted_session([(None, json_response(implementation_payload()))])
        entry = implement_tool(draft(), bundle, session)
        assert entry.doc_refs == ("https://unit.test/doc", "exp-piston")

    def test_prompts_differ_exactly_in_grounding_section(self):
        bundle = GroundingBundle(
            web_snippets=(SearchResult("https://unit.test/doc", "useful excerpt"),),
            experience_items=(),
            experience_texts=(),
        )
        with_session = scripted_session([(None, json_response(implementation_payload()))])
        without_session = scripted_session([(None, json_response(implementation_payload()))])
        implement_tool(draft(), bundle, with_session)
        implement_tool(draft(), empty_bundle(), without_session)
        with_prompt = with_session.exchanges[0].request.user
        without_prompt = without_session.exchanges[0].request.user
        assert with_prompt != without_prompt
        restored = with_prompt.replace(bundle.render(), empty_bundle().render())
        assert restored == without_prompt


AGENT_PAYLOAD = {
    "role": "Probability Simulation Analyst",
    "suggestions": [
        "Execute multiple simulation runs to ensure statistical significance of the results.",
        "Aggregate ejection data to calculate the specific probability for each ball.",
        "Identify the ball with the maximum ejection frequency from the dataset.",
    ],
    "tools": ["simulate_piston_platform_game"],
    "expertise": "Specializes in stochastic modeling and quantitative analysis to derive probabilities from complex mechanical simulations.",
}


class TestCreateAgent:
    def _candidates(self):
        return {"simulate_piston_platform_game": make_tool(name="simulate_piston_platform_game")}

    def test_valid_agent_from_contract(self):
        session = scripted_session([("expert agent designer", json_response(AGENT_PAYLOAD))])
        agent = create_agent("simulate the game", self._candidates(), session, source_task="task-assess")
        assert agent.role == "Probability Simulation Analyst"
        assert agent.tool_names == ("simulate_piston_platform_game",)
        assert agent.origin.kind == "created"

    def test_out_of_candidate_tool_dropped(self):
        payload = dict(AGENT_PAYLOAD, tools=["simulate_piston_platform_game", "forbidden_tool"])
        session = scripted_session([(None, json_response(payload))])
        agent = create_agent("simulate", self._candidates(), session)
        assert agent.tool_names == ("simulate_piston_platform_game",)

    def test_six_suggestions_rejected(self):
        payload = dict(AGENT_PAYLOAD, suggestions=[f"Check detail number {i} before acting." for i in range(6)])
        session = scripted_session([(None, json_response(payload))])
        with pytest.raises(SuggestionCountOutOfRange):
            create_agent("simulate", self._candidates(), session)

    def test_zero_tools_still_valid(self):
        payload = dict(AGENT_PAYLOAD, tools=[])
        session = scripted_session([(None, json_response(payload))])
        agent = create_agent("simulate", self._candidates(), session)
        assert agent.tool_names == ()
