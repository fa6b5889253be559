"""CLI entry point for navfgo."""

import argparse
import dataclasses
import json
import sys
from pathlib import Path
from typing import Optional, Sequence, Tuple

from . import __version__
from .config import MODES
from .errors import get_exit_code
from .timing import Timer, capture_timing

ALIGNMENT_CHOICES = ("none", "yaw_only", "se3")


def _common_options() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument(
        "--format",
        choices=["text", "json"],
        default="text",
        help="Output/log format: text (default) or json",
    )
    common.add_argument(
        "--log-level",
        choices=["DEBUG", "INFO", "WARNING", "ERROR"],
        default="WARNING",
        help="Console log level (default: WARNING)",
    )
    return common


def create_parser() -> argparse.ArgumentParser:
    """Create and configure argument parser."""
    common = _common_options()
    parser = argparse.ArgumentParser(
        prog="navfgo",
        description="GNSS-visual-inertial sliding-window estimator, simulator and evaluation",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  navfgo simulate --config sim.yaml --out data/fig8 --seed 3
  navfgo run --config data/fig8/run.yaml --out results/fig8
  navfgo run --dataset data/fig8 --mode vins_after_init --out results/vins
  navfgo evaluate --est results/fig8/trajectory.txt --truth data/fig8/truth.txt
  navfgo evaluate --est results/vins/trajectory.txt --truth data/fig8/truth.txt --mode yaw_only
""",
    )
    parser.add_argument("--version", action="version", version=f"navfgo v{__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    simulate = sub.add_parser(
        "simulate", parents=[common], help="Generate a synthetic dataset directory"
    )
    simulate.add_argument(
        "--config", "-c", type=Path, help="Simulation spec (YAML); built-in defaults if omitted"
    )
    simulate.add_argument("--out", "-o", type=Path, required=True, help="Output dataset directory")
    simulate.add_argument("--seed", type=int, help="Override the configured random seed")

    run = sub.add_parser("run", parents=[common], help="Run the estimator on a dataset")
    run.add_argument("--config", "-c", type=Path, help="Run configuration (YAML)")
    run.add_argument(
        "--dataset",
        "-d",
        type=Path,
        help="Dataset directory; its run.yaml is used when --config is omitted",
    )
    run.add_argument("--mode", choices=list(MODES), help="Override the configured mode")
    run.add_argument("--seed", type=int, help="Override the configured seed")
    run.add_argument("--out", "-o", type=Path, help="Output directory (default: config output_dir)")

    evaluate = sub.add_parser(
        "evaluate", parents=[common], help="Score an estimated trajectory against truth"
    )
    evaluate.add_argument("--est", type=Path, required=True, help="Estimated trajectory (TUM)")
    evaluate.add_argument("--truth", type=Path, required=True, help="Truth trajectory (TUM)")
    evaluate.add_argument(
        "--mode",
        choices=list(ALIGNMENT_CHOICES),
        default="none",
        help="Alignment: none (default, GNSS runs), yaw_only (VIO runs) or se3",
    )
    evaluate.add_argument(
        "--lengths",
        type=float,
        nargs="+",
        default=[50.0, 100.0, 150.0, 200.0],
        help="Sub-sequence lengths in metres (default: 50 100 150 200)",
    )
    evaluate.add_argument(
        "--max-dt", type=float, default=0.05, help="Association tolerance in seconds"
    )
    evaluate.add_argument("--out", "-o", type=Path, help="Output directory (default: next to --est)")
    return parser


def validate_args(args: argparse.Namespace) -> Tuple[bool, Optional[str]]:
    """
    Validate parsed arguments.

    Returns:
        (is_valid, error_message)
    """
    if getattr(args, "config", None) and not args.config.exists():
        return False, f"Config file does not exist: {args.config}"

    if args.command == "run":
        if args.config is None and args.dataset is None:
            return False, "run needs --config or --dataset"
        if args.dataset is not None and not args.dataset.is_dir():
            return False, f"Dataset directory does not exist: {args.dataset}"

    if args.command == "evaluate":
        for path in (args.est, args.truth):
            if not path.exists():
                return False, f"Trajectory file does not exist: {path}"
        if args.max_dt <= 0:
            return False, f"Association tolerance must be positive: {args.max_dt}"
        if any(length <= 0 for length in args.lengths):
            return False, "Sub-sequence lengths must be positive"

    if args.command == "simulate" and args.out.exists() and not args.out.is_dir():
        return False, f"Output path is not a directory: {args.out}"

    return True, None


def cmd_simulate(args: argparse.Namespace) -> int:
    from .config import SimulationConfig, load_simulation_config
    from .report import format_simulate_json, format_simulate_text, output
    from .simulator import simulate, write_dataset

    config = load_simulation_config(args.config) if args.config else SimulationConfig()
    if args.seed is not None:
        config = dataclasses.replace(config, seed=args.seed)
    with capture_timing() as timer:
        dataset = simulate(config)
        paths = write_dataset(dataset, args.out)
    metadata = json.loads(paths["metadata"].read_text(encoding="utf-8"))
    metadata["elapsed_ms"] = round(timer.elapsed_ms(), 1)
    if args.format == "json":
        output(format_simulate_json(paths, metadata))
    else:
        output(format_simulate_text(paths, metadata))
    return 0


def cmd_run(args: argparse.Namespace) -> int:
    from .config import DatasetConfig, RunConfig, load_run_config
    from .pipeline import RunRequest, run_pipeline
    from .report import format_run_json, format_run_text, output

    if args.config is not None:
        config = load_run_config(args.config)
    elif (args.dataset / "run.yaml").exists():
        config = load_run_config(args.dataset / "run.yaml")
    else:
        config = RunConfig(dataset=DatasetConfig(dir=str(args.dataset.resolve())))
    if args.mode is not None:
        config = dataclasses.replace(config, mode=args.mode)
    if args.seed is not None:
        config = dataclasses.replace(config, seed=args.seed)

    out_dir = args.out if args.out is not None else config.output_path()
    result = run_pipeline(RunRequest(config=config, output_dir=out_dir))
    if args.format == "json":
        output(format_run_json(result))
    else:
        output(format_run_text(result))
    return 0


def cmd_evaluate(args: argparse.Namespace) -> int:
    from .evaluation import evaluate, read_tum, save_trajectory, write_report
    from .report import format_evaluate_json, format_evaluate_text, output

    report, aligned = evaluate(
        read_tum(args.est), read_tum(args.truth), args.mode, args.lengths, args.max_dt
    )
    out_dir = args.out if args.out is not None else args.est.parent
    out_dir.mkdir(parents=True, exist_ok=True)
    report_path = out_dir / "report.json"
    aligned_path = out_dir / "aligned.txt"
    write_report(report, report_path)
    save_trajectory(aligned, aligned_path)
    if args.format == "json":
        output(format_evaluate_json(report, report_path, aligned_path))
    else:
        output(format_evaluate_text(report, report_path, aligned_path))
    return 0


COMMANDS = {"simulate": cmd_simulate, "run": cmd_run, "evaluate": cmd_evaluate}


def main(argv: Optional[Sequence[str]] = None) -> int:
    """
    Main CLI entry point.

    Args:
        argv: Command line arguments (defaults to sys.argv)

    Returns:
        Exit code (0 for success, non-zero for errors)
    """
    if argv is None:
        argv = sys.argv[1:]

    timer = Timer()

    from .errors import ConfigError, GenericError, NavError, WriteError
    from .logging import setup_logging
    from .report import output_error

    parser = create_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        # argparse exits on --help, --version and parse errors
        return e.code if e.code is not None and isinstance(e.code, int) else 1

    setup_logging(args.log_level, args.format)

    is_valid, error_msg = validate_args(args)
    if not is_valid:
        elapsed_ms = int(timer.elapsed_ms())
        output_error(ConfigError(error_msg or "Invalid arguments"), elapsed_ms, args.format)
        return get_exit_code("CONFIG_ERROR")

    try:
        return COMMANDS[args.command](args)
    except NavError as e:
        elapsed_ms = int(timer.elapsed_ms())
        output_error(e, elapsed_ms, args.format)
        return e.exit_code
    except OSError as e:
        elapsed_ms = int(timer.elapsed_ms())
        error: NavError = WriteError(f"File system error: {e}")
        output_error(error, elapsed_ms, args.format)
        return error.exit_code
    except Exception as e:
        elapsed_ms = int(timer.elapsed_ms())
        error = GenericError(f"Unexpected error: {e}")
        output_error(error, elapsed_ms, args.format)
        return error.exit_code


if __name__ == "__main__":
    sys.exit(main())
