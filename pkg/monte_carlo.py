#!/usr/bin/env python3
"""Seed sweep for navfgo: per-seed ATE/RTE table for the noisy figure-eight run."""

import argparse
import dataclasses
import sys
import tempfile
from pathlib import Path

import pandas as pd

from src.navfgo.config import SimulationConfig, load_run_config
from src.navfgo.evaluation import evaluate, read_tum
from src.navfgo.pipeline import RunRequest, run_pipeline
from src.navfgo.simulator import simulate, write_dataset

# Same trajectory and noise as the noisy acceptance run; only the seed varies.
NOISY_FIGURE_EIGHT = {
    "trajectory": {"shape": "figure_eight", "speed": 4.0, "duration": 256.0, "size": 80.0},
    "noise": {"preset": "mems", "pixel_sigma": 1.5, "gnss_sigma": [0.02, 0.02, 0.02]},
}

MAX_ATE_M = 0.10
MAX_RTE_200_PCT = 1.5

COLUMNS = ["seed", "distance_m", "ate_m", "rte_200_pct", "mean_optimize_ms"]


def run_seed(seed, workdir):
    """Simulate one seed and score the GNSS-aided and visual-inertial runs."""
    dataset = simulate(SimulationConfig.from_dict({"seed": seed, **NOISY_FIGURE_EIGHT}))
    paths = write_dataset(dataset, workdir / "data")
    truth = read_tum(paths["truth"])
    base = load_run_config(paths["run"])

    row = {"seed": seed, "distance_m": float(truth.path_distance()[-1])}
    for mode in ("gvins", "vins_after_init"):
        config = dataclasses.replace(base, mode=mode)
        result = run_pipeline(RunRequest(config=config, output_dir=workdir / mode))
        if mode == "gvins":
            report, _ = evaluate(result.trajectory, truth, "none")
            row["ate_m"] = report.ate
            diagnostics = pd.read_json(result.diagnostics_path, lines=True)
            row["mean_optimize_ms"] = float(diagnostics["optimize_ms"].mean())
        else:
            report, _ = evaluate(result.trajectory, truth, "yaw_only", lengths=(200.0,))
            (relative,) = report.relative
            row["rte_200_pct"] = relative.rte if relative.available else float("nan")
    return row


def summarize(table):
    """Mean, 95th percentile and maximum of each metric column."""
    metrics = table.drop(columns=["seed"])
    return pd.DataFrame(
        {"mean": metrics.mean(), "p95": metrics.quantile(0.95), "max": metrics.max()}
    )


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--seeds", type=int, default=20, help="number of seeds (default 20)")
    parser.add_argument("--first-seed", type=int, default=0)
    parser.add_argument(
        "--out", type=Path, default=Path("monte_carlo.csv"), help="per-seed table (CSV)"
    )
    args = parser.parse_args(argv)

    print(f"🚀 Running {args.seeds} seeds from {args.first_seed}")
    print("=" * 50)
    rows = []
    with tempfile.TemporaryDirectory() as temp_dir:
        for seed in range(args.first_seed, args.first_seed + args.seeds):
            try:
                row = run_seed(seed, Path(temp_dir) / f"seed_{seed}")
            except Exception as e:
                print(f"❌ Seed {seed} crashed: {e}")
                row = {"seed": seed}
            rows.append(row)
            if "rte_200_pct" in row:
                print(
                    f"✅ Seed {seed}: ATE {row['ate_m']:.4f} m, "
                    f"RTE@200 {row['rte_200_pct']:.3f} %, "
                    f"optimize {row['mean_optimize_ms']:.1f} ms"
                )

    table = pd.DataFrame(rows).reindex(columns=COLUMNS)
    table.to_csv(args.out, index=False)
    print("\n" + "=" * 50)
    print(f"📊 Per-seed table written to {args.out}")
    print(summarize(table).to_string(float_format=lambda v: f"{v:.4f}"))

    failed = table[
        table.isna().any(axis=1)
        | (table["ate_m"] >= MAX_ATE_M)
        | (table["rte_200_pct"] >= MAX_RTE_200_PCT)
    ]
    if failed.empty:
        print("🎉 All seeds within bounds")
        return 0
    print(f"⚠️ Seeds outside bounds: {failed['seed'].tolist()}")
    return 1


if __name__ == "__main__":
    sys.exit(main())
