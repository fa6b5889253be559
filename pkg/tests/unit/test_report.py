"""Unit tests for command summaries."""

import json
from pathlib import Path

import numpy as np

from src.navfgo.errors import AssociationError
from src.navfgo.evaluation import MetricReport, RelativeError, Trajectory
from src.navfgo.pipeline import RunResult
from src.navfgo.report import (
    format_error_json,
    format_error_text,
    format_evaluate_json,
    format_evaluate_text,
    format_run_json,
    format_run_text,
    format_simulate_json,
    format_simulate_text,
    output_error,
)


def _empty():
    return Trajectory(np.zeros(0), np.zeros((0, 3)), np.zeros((0, 4)))


def _run_result():
    out = Path("results")
    return RunResult(
        mode="gvins",
        output_dir=out,
        trajectory_path=out / "trajectory.txt",
        realtime_path=out / "realtime.txt",
        diagnostics_path=out / "diagnostics.jsonl",
        init_time=5.0,
        nodes=42,
        optimizations=40,
        skipped_frames=3,
        elapsed_ms=1234.56,
        mean_optimize_ms=12.3456,
        max_optimize_ms=40.0,
        trajectory=_empty(),
        realtime=_empty(),
        reports=[{"gnss_factors": 3}, {"gnss_factors": 4}, {"visual_factors": 10}],
    )


def _metric_report():
    return MetricReport(
        "yaw_only",
        100,
        0.25,
        0.5,
        [RelativeError(50.0, 1.2, 0.3, 20), RelativeError(200.0, None, None, 0)],
        yaw_correction_deg=-2.0,
    )


class TestSimulateSummary:
    """Test simulate output."""

    def test_text_and_json(self):
        """Test both formats carry the row counts."""
        paths = {"imu": Path("data/imu.csv"), "metadata": Path("data/metadata.json")}
        metadata = {"imu_rows": 2001, "feature_rows": 500, "outlier_rows": 5, "gnss_rows": 11}
        text = format_simulate_text(paths, metadata)
        assert "data" in text
        assert "IMU rows: 2001" in text
        assert "(5 outliers)" in text
        data = json.loads(format_simulate_json(paths, metadata))
        assert data["status"] == "ok"
        assert data["files"]["imu"] == str(paths["imu"])
        assert data["gnss_rows"] == 11


class TestRunSummary:
    """Test run output."""

    def test_json(self):
        """Test the JSON summary counts GNSS factors after initialization."""
        data = json.loads(format_run_json(_run_result()))
        assert data["command"] == "run"
        assert data["nodes"] == 42
        assert data["gnss_factors_after_init"] == 7
        assert data["flagged_observations"] == 0
        assert data["mean_optimize_ms"] == 12.346

    def test_text(self):
        """Test the text summary names the outputs."""
        text = format_run_text(_run_result())
        assert "Run complete (gvins)" in text
        assert "42 nodes" in text
        assert "t=5.000" in text


class TestEvaluateSummary:
    """Test evaluate output."""

    def test_text_marks_unavailable_lengths(self):
        """Test lengths beyond the trajectory are reported unavailable."""
        text = format_evaluate_text(_metric_report(), Path("r.json"), Path("a.txt"))
        assert "ATE: 0.2500 m" in text
        assert "RTE 1.200 %" in text
        assert "200 m: unavailable" in text

    def test_json(self):
        """Test the JSON output embeds the report."""
        data = json.loads(format_evaluate_json(_metric_report(), Path("r.json"), Path("a.txt")))
        assert data["alignment"] == "yaw_only"
        assert data["relative"][1]["available"] is False
        assert data["report"] == "r.json"


class TestErrorOutput:
    """Test error reporting."""

    def test_json_context(self):
        """Test JSON errors include code and context."""
        data = json.loads(format_error_json(AssociationError("too few", pairs=2), 15))
        assert data == {
            "status": "error",
            "message": "too few",
            "code": "ASSOCIATION_ERROR",
            "pairs": 2,
            "elapsed_ms": 15,
        }

    def test_text(self):
        """Test text errors are prefixed."""
        assert format_error_text("bad") == "Error: bad"

    def test_streams(self, capsys):
        """Test text errors go to stderr and JSON errors to stdout."""
        error = AssociationError("too few", pairs=1)
        output_error(error, 1, "text")
        output_error(error, 1, "json")
        captured = capsys.readouterr()
        assert captured.err.strip() == "Error: too few"
        assert json.loads(captured.out)["code"] == "ASSOCIATION_ERROR"
