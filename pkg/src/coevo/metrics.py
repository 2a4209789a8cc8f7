"""Evolution-quality metrics over tool-creation logs.

Two per-group quantities: first-pass validity (share of created tools whose
very first validation passed) and average improve iterations. With a
baseline, relative deltas are reported in percent, one decimal, ties away
from zero. Only tool assets count; agent validations are excluded.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence, Union

from .errors import EmptyLog

AVG_GROUP = "Avg."


def round_half_away(value: float, digits: int = 1) -> float:
    quantum = Decimal(1).scaleb(-digits)
    return float(Decimal(repr(value)).quantize(quantum, rounding=ROUND_HALF_UP))


@dataclass(frozen=True)
class GroupStats:
    creations: int
    first_pass_valid: int
    first_pass_validity: float  # ratio in [0,1]
    avg_improve_iterations: float

    def to_dict(self) -> dict[str, Any]:
        return {
            "creations": self.creations,
            "first_pass_valid": self.first_pass_valid,
            "first_pass_validity": self.first_pass_validity,
            "avg_improve_iterations": self.avg_improve_iterations,
        }


def group_stats(records: Sequence[Mapping[str, Any]]) -> GroupStats:
    """Aggregate per-tool creation records: each needs
    first_validation_passed and improve_iterations."""
    if not records:
        raise EmptyLog("no tool creation records")
    creations = len(records)
    valid = sum(1 for r in records if r["first_validation_passed"])
    iterations = [float(r["improve_iterations"]) for r in records]
    return GroupStats(
        creations=creations,
        first_pass_valid=valid,
        first_pass_validity=valid / creations,
        avg_improve_iterations=sum(iterations) / creations,
    )


GroupInput = Union[Sequence[Mapping[str, Any]], GroupStats]


def _as_stats(value: GroupInput) -> GroupStats:
    if isinstance(value, GroupStats):
        return value
    return group_stats(value)


@dataclass(frozen=True)
class GroupDelta:
    """Relative change against the baseline, in percent, one decimal.

    validity_delta_pct is positive when validity improved; iter_delta_pct is
    the magnitude of the iteration reduction (positive = fewer iterations).
    """

    validity_delta_pct: float
    iter_delta_pct: float


def relative_delta(treated: float, baseline: float) -> float:
    if baseline == 0:
        raise EmptyLog("baseline value is zero; relative delta undefined")
    return (treated - baseline) / baseline * 100.0


def group_delta(treated: GroupStats, baseline: GroupStats) -> GroupDelta:
    validity = relative_delta(treated.first_pass_validity, baseline.first_pass_validity)
    iterations = relative_delta(treated.avg_improve_iterations, baseline.avg_improve_iterations)
    return GroupDelta(
        validity_delta_pct=round_half_away(validity),
        iter_delta_pct=round_half_away(-iterations),
    )


@dataclass
class MetricsReport:
    groups: dict[str, GroupStats]
    baseline_groups: dict[str, GroupStats] | None
    deltas: dict[str, GroupDelta] | None

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {"groups": {k: v.to_dict() for k, v in self.groups.items()}}
        if self.baseline_groups is not None:
            out["baseline_groups"] = {k: v.to_dict() for k, v in self.baseline_groups.items()}
        if self.deltas is not None:
            out["deltas"] = {
                k: {"validity_delta_pct": d.validity_delta_pct, "iter_delta_pct": d.iter_delta_pct}
                for k, d in self.deltas.items()
            }
        return out

    def format_lines(self) -> list[str]:
        lines = []
        for name, stats in self.groups.items():
            line = (
                f"{name}: tools={stats.creations} "
                f"first_pass_validity={stats.first_pass_validity * 100:.1f}% "
                f"avg_improve_iterations={stats.avg_improve_iterations:.2f}"
            )
            if self.deltas and name in self.deltas:
                delta = self.deltas[name]
                validity_arrow = "up" if delta.validity_delta_pct >= 0 else "down"
                iter_arrow = "down" if delta.iter_delta_pct >= 0 else "up"
                line += (
                    f"  [validity {validity_arrow} {abs(delta.validity_delta_pct):.1f}%"
                    f", iterations {iter_arrow} {abs(delta.iter_delta_pct):.1f}%]"
                )
            lines.append(line)
        return lines


def _macro_average(groups: Mapping[str, GroupStats]) -> GroupStats:
    names = [n for n in groups if n != AVG_GROUP]
    validity = sum(groups[n].first_pass_validity for n in names) / len(names)
    iterations = sum(groups[n].avg_improve_iterations for n in names) / len(names)
    return GroupStats(
        creations=sum(groups[n].creations for n in names),
        first_pass_valid=sum(groups[n].first_pass_valid for n in names),
        first_pass_validity=validity,
        avg_improve_iterations=iterations,
    )


def compute_metrics(
    treated: Mapping[str, GroupInput],
    baseline: Mapping[str, GroupInput] | None = None,
    add_average: bool = True,
) -> MetricsReport:
    """Per-group stats, optional baseline deltas, and a macro-average row
    (mean of the per-group values) when more than one group is present."""
    if not treated:
        raise EmptyLog("no groups to compute metrics over")
    groups = {name: _as_stats(value) for name, value in treated.items()}
    if add_average and len([n for n in groups if n != AVG_GROUP]) > 1 and AVG_GROUP not in groups:
        groups[AVG_GROUP] = _macro_average(groups)

    baseline_groups = None
    deltas = None
    if baseline is not None:
        baseline_groups = {name: _as_stats(value) for name, value in baseline.items()}
        if add_average and len([n for n in baseline_groups if n != AVG_GROUP]) > 1 and AVG_GROUP not in baseline_groups:
            baseline_groups[AVG_GROUP] = _macro_average(baseline_groups)
        deltas = {
            name: group_delta(groups[name], baseline_groups[name])
            for name in groups
            if name in baseline_groups
        }
    return MetricsReport(groups=groups, baseline_groups=baseline_groups, deltas=deltas)


def read_creation_log(path: str | Path) -> list[dict[str, Any]]:
    """Read a JSONL creation log; one record per created tool."""
    records = []
    text = Path(path).read_text(encoding="utf-8")
    for line in text.splitlines():
        if line.strip():
            records.append(json.loads(line))
    if not records:
        raise EmptyLog(f"creation log {path} is empty")
    return records


def append_creation_log(path: str | Path, records: Iterable[Mapping[str, Any]]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "a", encoding="utf-8") as handle:
        for record in records:
            handle.write(json.dumps(dict(record), sort_keys=True) + "\n")
