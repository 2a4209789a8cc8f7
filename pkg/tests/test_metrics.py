from __future__ import annotations

import pytest

from coevo.errors import EmptyLog
from coevo.metrics import (
    GroupStats,
    append_creation_log,
    compute_metrics,
    group_delta,
    group_stats,
    read_creation_log,
    round_half_away,
)


def record(passed: bool, iterations: int) -> dict:
    return {"tool": "t", "first_validation_passed": passed, "improve_iterations": iterations}


def stats(validity: float, iterations: float) -> GroupStats:
    return GroupStats(
        creations=100,
        first_pass_valid=int(validity * 100),
        first_pass_validity=validity,
        avg_improve_iterations=iterations,
    )


class TestGroupStats:
    def test_basic_arithmetic(self):
        records = [record(True, 0), record(True, 0), record(True, 1), record(False, 2)]
        got = group_stats(records)
        assert got.creations == 4
        assert got.first_pass_valid == 3
        assert got.first_pass_validity == pytest.approx(0.75)
        assert got.avg_improve_iterations == pytest.approx(0.75)

    def test_empty_rejected(self):
        with pytest.raises(EmptyLog):
            group_stats([])

    def test_bounds(self):
        got = group_stats([record(False, 3)])
        assert 0.0 <= got.first_pass_validity <= 1.0
        assert got.avg_improve_iterations >= 0.0


class TestRounding:
    @pytest.mark.parametrize(
        "value,expected",
        [(55.96, 56.0), (55.95, 56.0), (55.94, 55.9), (-35.17, -35.2), (-35.15, -35.2), (0.05, 0.1)],
    )
    def test_half_away_from_zero(self, value, expected):
        assert round_half_away(value) == expected


class TestPublishedDeltas:
    """Reproduce the reported relative deltas from the absolute columns."""

    CASES = {
        # group: (baseline validity, treated validity, baseline iters, treated iters,
        #         expected validity delta, expected iteration reduction)
        "groupA": (0.327, 0.510, 1.45, 0.94, 56.0, 35.2),
        "groupB": (0.649, 0.838, 0.76, 0.24, 29.1, 68.4),
        "groupC": (0.618, 0.824, 0.82, 0.26, 33.3, 68.3),
    }

    @pytest.mark.parametrize("name", list(CASES))
    def test_each_group(self, name):
        base_v, treat_v, base_i, treat_i, want_v, want_i = self.CASES[name]
        delta = group_delta(stats(treat_v, treat_i), stats(base_v, base_i))
        assert delta.validity_delta_pct == pytest.approx(want_v, abs=0.1)
        assert delta.iter_delta_pct == pytest.approx(want_i, abs=0.1)

    def test_macro_average_row(self):
        treated = {name: stats(case[1], case[3]) for name, case in self.CASES.items()}
        baseline = {name: stats(case[0], case[2]) for name, case in self.CASES.items()}
        report = compute_metrics(treated, baseline)
        avg = report.groups["Avg."]
        base_avg = report.baseline_groups["Avg."]
        assert avg.first_pass_validity * 100 == pytest.approx(72.4, abs=0.1)
        assert base_avg.first_pass_validity * 100 == pytest.approx(53.1, abs=0.1)
        assert avg.avg_improve_iterations == pytest.approx(0.48, abs=0.01)
        assert base_avg.avg_improve_iterations == pytest.approx(1.01, abs=0.01)
        assert report.deltas["Avg."].validity_delta_pct == pytest.approx(36.3, abs=0.1)
        assert report.deltas["Avg."].iter_delta_pct == pytest.approx(52.5, abs=0.1)


class TestComputeMetrics:
    def test_raw_records_and_average(self):
        treated = {
            "alpha": [record(True, 0), record(False, 2)],
            "beta": [record(True, 0), record(True, 1)],
        }
        report = compute_metrics(treated)
        assert report.groups["alpha"].first_pass_validity == pytest.approx(0.5)
        assert report.groups["beta"].first_pass_validity == pytest.approx(1.0)
        assert report.groups["Avg."].first_pass_validity == pytest.approx(0.75)
        assert report.deltas is None

    def test_single_group_no_average_row(self):
        report = compute_metrics({"solo": [record(True, 0)]})
        assert set(report.groups) == {"solo"}

    def test_empty_rejected(self):
        with pytest.raises(EmptyLog):
            compute_metrics({})

    def test_format_lines_include_arrows(self):
        treated = {"g": stats(0.510, 0.94)}
        baseline = {"g": stats(0.327, 1.45)}
        report = compute_metrics(treated, baseline)
        line = report.format_lines()[0]
        assert "validity up 56.0%" in line
        assert "iterations down 35.2%" in line


class TestCreationLogIo:
    def test_append_and_read(self, tmp_path):
        path = tmp_path / "creation_log.jsonl"
        append_creation_log(path, [record(True, 0)])
        append_creation_log(path, [record(False, 3)])
        records = read_creation_log(path)
        assert len(records) == 2
        assert records[0]["first_validation_passed"] is True

    def test_empty_log_rejected(self, tmp_path):
        path = tmp_path / "empty.jsonl"
        path.write_text("\n")
        with pytest.raises(EmptyLog):
            read_creation_log(path)
