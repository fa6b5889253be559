"""
Summary reporting for command results.

Each command result is printed either as human-readable text or as a
single JSON object; errors go to stderr in text mode and to stdout as JSON.
"""

import json
import sys
from pathlib import Path
from typing import Any, Dict, Mapping

from .errors import NavError
from .evaluation import MetricReport
from .pipeline import RunResult


def format_simulate_json(paths: Mapping[str, Path], metadata: Mapping[str, Any]) -> str:
    data = {
        "status": "ok",
        "command": "simulate",
        "files": {role: str(path) for role, path in paths.items()},
        **metadata,
    }
    return json.dumps(data, sort_keys=True)


def format_simulate_text(paths: Mapping[str, Path], metadata: Mapping[str, Any]) -> str:
    out_dir = paths["imu"].parent
    lines = [
        f"✓ Simulated dataset: {out_dir}",
        f"  IMU rows: {metadata.get('imu_rows')}",
        f"  Feature rows: {metadata.get('feature_rows')} ({metadata.get('outlier_rows')} outliers)",
        f"  GNSS rows: {metadata.get('gnss_rows')}",
        f"  Landmarks: {metadata.get('landmark_count')}",
    ]
    return "\n".join(lines)


def run_summary(result: RunResult) -> Dict[str, Any]:
    """Summary statistics of a run, shared by the text and JSON outputs."""
    gnss_after_init = sum(r.get("gnss_factors", 0) for r in result.reports)
    return {
        "mode": result.mode,
        "trajectory": str(result.trajectory_path),
        "realtime": str(result.realtime_path),
        "diagnostics": str(result.diagnostics_path),
        "init_time": result.init_time,
        "nodes": result.nodes,
        "optimizations": result.optimizations,
        "skipped_frames": result.skipped_frames,
        "flagged_observations": len(result.flagged),
        "gnss_factors_after_init": gnss_after_init,
        "mean_optimize_ms": round(result.mean_optimize_ms, 3),
        "max_optimize_ms": round(result.max_optimize_ms, 3),
        "elapsed_ms": round(result.elapsed_ms, 1),
    }


def format_run_json(result: RunResult) -> str:
    return json.dumps({"status": "ok", "command": "run", **run_summary(result)})


def format_run_text(result: RunResult) -> str:
    summary = run_summary(result)
    lines = [
        f"✓ Run complete ({summary['mode']})",
        f"  Trajectory: {summary['trajectory']} ({summary['nodes']} nodes)",
        f"  Real-time stream: {summary['realtime']}",
        f"  Diagnostics: {summary['diagnostics']}",
        f"  Initialized at t={summary['init_time']:.3f} s",
        f"  Optimizations: {summary['optimizations']}, "
        f"mean {summary['mean_optimize_ms']:.1f} ms, max {summary['max_optimize_ms']:.1f} ms",
        f"  Elapsed: {summary['elapsed_ms']:.0f}ms",
    ]
    return "\n".join(lines)


def format_evaluate_json(report: MetricReport, report_path: Path, aligned_path: Path) -> str:
    data = {
        "status": "ok",
        "command": "evaluate",
        "report": str(report_path),
        "aligned": str(aligned_path),
        **report.to_dict(),
    }
    return json.dumps(data)


def format_evaluate_text(report: MetricReport, report_path: Path, aligned_path: Path) -> str:
    lines = [
        f"✓ Evaluated {report.pairs} poses (alignment: {report.mode})",
        f"  ATE: {report.ate:.4f} m",
        f"  ARE: {report.are:.4f} deg",
    ]
    for row in report.relative:
        if row.available:
            lines.append(
                f"  {row.length:>5.0f} m: RTE {row.rte:.3f} %  RRE {row.rre:.4f} deg"
                f"  ({row.segments} segments)"
            )
        else:
            lines.append(f"  {row.length:>5.0f} m: unavailable (trajectory too short)")
    lines.append(f"  Report: {report_path}")
    lines.append(f"  Aligned trajectory: {aligned_path}")
    return "\n".join(lines)


def format_error_json(error: NavError, elapsed_ms: int) -> str:
    """Format error as JSON with context."""
    error_data = error.to_dict()
    error_data["elapsed_ms"] = elapsed_ms
    return json.dumps(error_data, default=str)


def format_error_text(message: str) -> str:
    return f"Error: {message}"


def output(text: str) -> None:
    print(text)


def output_error(error: NavError, elapsed_ms: int, format_type: str = "text") -> None:
    """Output error in specified format."""
    if format_type == "json":
        print(format_error_json(error, elapsed_ms))
    else:
        print(format_error_text(str(error)), file=sys.stderr)
