"""Built-in seed memories so initial-memory experiments run offline.

Seeds are constructed in code with fixed timestamps, so installing the same
seed twice produces byte-identical memory trees.
"""
from __future__ import annotations

from .errors import InputError
from .memory import (
    AgentSpec,
    AssetMemory,
    ExperienceItem,
    ExperienceMemory,
    Memories,
    Origin,
    ToolEntry,
)

SEED_TIMESTAMP = "2026-01-01T00:00:00.000000Z"

_WORD_COUNT_SOURCE = '''\
def text_word_count(text, include_characters=True):
    """Count words (whitespace-delimited) and optionally characters in text."""
    if not isinstance(text, str):
        raise ValueError(f"Input 'text' must be a string. Got: {type(text).__name__}")
    words = text.split()
    result = {"word_count": len(words)}
    if include_characters:
        result["character_count"] = len(text)
    return result


TOOL_CONFIG = {
    "name": "text_word_count",
    "description": "Counts whitespace-delimited words and characters in a text string.",
    "function": text_word_count,
    "input_schema": {
        "type": "object",
        "properties": {
            "text": {"type": "string", "description": "The text to analyze."},
            "include_characters": {
                "type": "boolean",
                "description": "Also report the character count.",
                "default": True,
            },
        },
        "required": ["text"],
    },
    "returns": {"type": "object", "description": "word_count and optional character_count."},
}
'''

_ARITHMETIC_SOURCE = '''\
import ast
import operator

_OPS = {
    ast.Add: operator.add,
    ast.Sub: operator.sub,
    ast.Mult: operator.mul,
    ast.Div: operator.truediv,
    ast.Pow: operator.pow,
    ast.USub: operator.neg,
    ast.Mod: operator.mod,
}


def _eval_node(node):
    if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)):
        return node.value
    if isinstance(node, ast.BinOp) and type(node.op) in _OPS:
        return _OPS[type(node.op)](_eval_node(node.left), _eval_node(node.right))
    if isinstance(node, ast.UnaryOp) and type(node.op) in _OPS:
        return _OPS[type(node.op)](_eval_node(node.operand))
    raise ValueError("expression contains unsupported syntax")


def math_safe_eval(expression):
    """Evaluate a pure arithmetic expression without calling eval()."""
    if not isinstance(expression, str) or not expression.strip():
        raise ValueError("Input 'expression' must be a non-empty string.")
    tree = ast.parse(expression, mode="eval")
    return {"value": _eval_node(tree.body)}


TOOL_CONFIG = {
    "name": "math_safe_eval",
    "description": "Evaluates arithmetic expressions (+ - * / ** %) safely via AST walking.",
    "function": math_safe_eval,
    "input_schema": {
        "type": "object",
        "properties": {
            "expression": {"type": "string", "description": "Arithmetic expression, e.g. '3 * (2 + 1)'."}
        },
        "required": ["expression"],
    },
    "returns": {"type": "object", "description": "Object with the numeric 'value'."},
}
'''

_TOOL_EXPERIENCE_CONTENT = """\
## How to Count Words Reliably Across Messy Inputs?

### Description
Splitting on arbitrary whitespace handles tabs, newlines, and repeated spaces in one pass. Validating the input type up front produces a clear error instead of a confusing attribute failure downstream.

### Use Cases
- Summarizing document length before chunking for analysis
- Enforcing word limits on generated text
- Quick sanity checks on scraped content

### Code Implementation
```python
words = text.split()
result = {"word_count": len(words)}
```
"""

_AGENT_EXPERIENCE_CONTENT = """\
## Decompose Numeric Questions Before Reaching for a Calculator

### Description
Restating a numeric question as one explicit arithmetic expression before evaluating it avoids operator-precedence mistakes. Evaluate once, then sanity-check the magnitude against a rough mental estimate.

### Task Context
A multi-part quantitative question mixing percentages and ratios.

### Experience of Success
- **Successful Strategy**: Write the full expression first, evaluate second.
- **Key Insights**: One well-formed expression beats several partial evaluations.
- **Applicable Scenarios**: Any sub-task whose answer is a single number.
"""


def _tool(name: str, description: str, schema: dict, returns: dict, source: str) -> ToolEntry:
    return ToolEntry(
        name=name,
        description=description,
        input_schema=schema,
        returns=returns,
        impl_source=source,
        runtime="python3",
        doc_refs=(),
        created_at=SEED_TIMESTAMP,
        origin=Origin("seeded"),
    )


def starter_memories() -> Memories:
    """Two executable tools, one specialist agent, and two experience items."""
    assets = AssetMemory()
    word_count = _tool(
        "text_word_count",
        "Counts whitespace-delimited words and characters in a text string.",
        {
            "type": "object",
            "properties": {
                "text": {"type": "string", "description": "The text to analyze."},
                "include_characters": {
                    "type": "boolean",
                    "description": "Also report the character count.",
                    "default": True,
                },
            },
            "required": ["text"],
        },
        {"type": "object", "description": "word_count and optional character_count."},
        _WORD_COUNT_SOURCE,
    )
    safe_eval = _tool(
        "math_safe_eval",
        "Evaluates arithmetic expressions (+ - * / ** %) safely via AST walking.",
        {
            "type": "object",
            "properties": {
                "expression": {
                    "type": "string",
                    "description": "Arithmetic expression, e.g. '3 * (2 + 1)'.",
                }
            },
            "required": ["expression"],
        },
        {"type": "object", "description": "Object with the numeric 'value'."},
        _ARITHMETIC_SOURCE,
    )
    analyst = AgentSpec(
        id="agent-seed-text-analysis",
        role="Text Analysis Specialist",
        expertise="Summarizes, measures, and restructures text; methodical about validating inputs before processing.",
        suggestions=(
            "Inspect a sample of the input before choosing a processing strategy.",
            "Measure the text first so limits and budgets are explicit.",
            "Validate assumptions about encoding and whitespace before counting.",
        ),
        tool_names=("text_word_count",),
        created_at=SEED_TIMESTAMP,
        origin=Origin("seeded"),
    )
    assets.insert([word_count, safe_eval, analyst])

    experiences = ExperienceMemory()
    experiences.insert(
        [
            ExperienceItem(
                id="exp-seed-word-count",
                kind="tool",
                polarity="success",
                title="How to Count Words Reliably Across Messy Inputs?",
                description="Splitting on arbitrary whitespace handles tabs, newlines, and repeated spaces in one pass.",
                use_cases=(
                    "Summarizing document length before chunking for analysis",
                    "Enforcing word limits on generated text",
                    "Quick sanity checks on scraped content",
                ),
                content=_TOOL_EXPERIENCE_CONTENT.rstrip("\n"),
                subject="text_word_count",
                source_task="seed",
                created_at=SEED_TIMESTAMP,
            ),
            ExperienceItem(
                id="exp-seed-numeric-decompose",
                kind="agent",
                polarity="success",
                title="Decompose Numeric Questions Before Reaching for a Calculator",
                description="Restating a numeric question as one explicit arithmetic expression before evaluating it avoids operator-precedence mistakes.",
                use_cases=(),
                content=_AGENT_EXPERIENCE_CONTENT.rstrip("\n"),
                subject="Text Analysis Specialist",
                source_task="seed",
                created_at=SEED_TIMESTAMP,
            ),
        ]
    )
    return Memories(assets=assets, experiences=experiences)


SEEDS = {"starter": starter_memories}


def seed_memories(name: str) -> Memories:
    try:
        factory = SEEDS[name]
    except KeyError:
        raise InputError(f"unknown seed {name!r}; available: {sorted(SEEDS)}") from None
    return factory()
