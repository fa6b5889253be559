"""End-to-end acceptance runs on simulated datasets.

These runs take minutes; run them with ``pytest -m slow``.
"""

import json

import numpy as np
import pandas as pd
import pytest

from monte_carlo import (
    MAX_ATE_M,
    MAX_RTE_200_PCT,
    NOISY_FIGURE_EIGHT,
    run_seed,
    summarize,
)
from src.navfgo.evaluation import evaluate
from tests.helpers import simulate_and_run

# Mean optimization time bound on a 10-node window.
MAX_MEAN_OPTIMIZE_MS = 100.0

FIGURE_EIGHT_500M = {
    "seed": 11,
    "trajectory": {"shape": "figure_eight", "speed": 2.5, "duration": 206.0, "size": 60.0},
    "noise": {"preset": "none"},
}

NOISY_LONG = {"seed": 21, **NOISY_FIGURE_EIGHT}


def _outlier_spec(fraction):
    return {
        "seed": 5,
        "trajectory": {"shape": "circle", "speed": 2.0, "duration": 80.0, "radius": 25.0},
        "noise": {"preset": "mems", "outlier_fraction": fraction},
    }


@pytest.mark.slow
class TestNoiseFreeRun:
    """Test a noise-free 500 m run recovers the truth."""

    def test_exact_recovery(self, tmp_path):
        """Test ATE and ARE are negligible without sensor noise."""
        result, truth, _ = simulate_and_run(tmp_path, FIGURE_EIGHT_500M)
        assert truth.path_distance()[-1] >= 500.0
        report, _ = evaluate(result.trajectory, truth, "none")
        assert report.ate < 1e-3
        assert report.are < 0.01


@pytest.mark.slow
class TestOutlierRobustness:
    """Test injected feature outliers are flagged without hurting accuracy."""

    def test_recall_and_accuracy(self, tmp_path):
        """Test nine in ten processed outliers are flagged and ATE stays near the clean run."""
        clean, truth, _ = simulate_and_run(tmp_path / "clean", _outlier_spec(0.0))
        dirty, _, dataset = simulate_and_run(tmp_path / "dirty", _outlier_spec(0.1))

        outliers = dataset.features.outliers
        injected = {
            (int(f), int(k))
            for f, k in zip(outliers["frame_id"], outliers["feature_id"])
            if int(f) in dirty.processed_frames
        }
        assert injected
        recall = len(injected & dirty.flagged) / len(injected)
        assert recall >= 0.9

        clean_report, _ = evaluate(clean.trajectory, truth, "none", lengths=(50.0,))
        dirty_report, _ = evaluate(dirty.trajectory, truth, "none", lengths=(50.0,))
        assert dirty_report.ate < 2.0 * max(clean_report.ate, 0.01)


@pytest.mark.slow
class TestNoisyRuns:
    """Test accuracy with MEMS-grade noise over a long figure-eight."""

    @pytest.fixture(scope="class")
    def gvins(self, tmp_path_factory):
        return simulate_and_run(tmp_path_factory.mktemp("gvins"), NOISY_LONG)

    @pytest.fixture(scope="class")
    def vins(self, tmp_path_factory):
        return simulate_and_run(
            tmp_path_factory.mktemp("vins"), NOISY_LONG, mode="vins_after_init"
        )

    def test_gnss_aided_accuracy(self, gvins):
        """Test the GNSS-aided run stays within 10 cm ATE."""
        result, truth, _ = gvins
        report, _ = evaluate(result.trajectory, truth, "none")
        assert report.ate < 0.10

    def test_visual_inertial_drift(self, vins):
        """Test visual-inertial drift over 200 m stays below 1.5 %."""
        result, truth, _ = vins
        report, _ = evaluate(result.trajectory, truth, "yaw_only", lengths=(200.0,))
        (row,) = report.relative
        assert row.available
        assert row.rte < 1.5

    def test_optimization_time(self, gvins):
        """Test the mean optimization time read from the diagnostics."""
        result, _, _ = gvins
        lines = result.diagnostics_path.read_text(encoding="utf-8").splitlines()
        times = [json.loads(line)["optimize_ms"] for line in lines]
        assert times
        assert float(np.mean(times)) < MAX_MEAN_OPTIMIZE_MS


@pytest.mark.slow
class TestSeedSweep:
    """Test the noisy accuracy bounds hold across twenty simulation seeds."""

    @pytest.mark.parametrize("seed", range(20))
    def test_seed_within_bounds(self, tmp_path, seed):
        """Test each seed meets the GNSS ATE and visual-inertial RTE bounds."""
        row = run_seed(seed, tmp_path)
        assert row["distance_m"] >= 200.0
        assert row["ate_m"] < MAX_ATE_M
        assert row["rte_200_pct"] < MAX_RTE_200_PCT
        assert row["mean_optimize_ms"] < MAX_MEAN_OPTIMIZE_MS


class TestSeedSummary:
    """Test the seed sweep summary table."""

    def test_summary_columns(self):
        """Test the summary reports mean, 95th percentile and maximum per metric."""
        table = pd.DataFrame(
            {"seed": [0, 1], "ate_m": [0.02, 0.04], "rte_200_pct": [0.5, 0.7]}
        )
        summary = summarize(table)
        assert list(summary.columns) == ["mean", "p95", "max"]
        assert summary.loc["ate_m", "mean"] == pytest.approx(0.03)
        assert summary.loc["rte_200_pct", "max"] == pytest.approx(0.7)
