#!/usr/bin/env python3
"""Final acceptance script for navfgo: simulate, run and evaluate through the CLI."""

import json
import subprocess
import sys
import tempfile
from pathlib import Path

SIMULATION = """\
seed: 3
trajectory:
  shape: circle
  speed: 2.0
  duration: 30.0
  radius: 20.0
noise:
  preset: none
"""


def run_command(args, timeout=900):
    """Run a navfgo command and return the result."""
    cmd = [sys.executable, "-m", "src.navfgo.cli", *args]
    try:
        return subprocess.run(cmd, capture_output=True, text=True, timeout=timeout)
    except subprocess.TimeoutExpired:
        print(f"⏰ Command timed out: {' '.join(args)}")
        return None
    except Exception as e:
        print(f"❌ Error running command: {e}")
        return None


def _json_output(result):
    if result is None or result.returncode != 0:
        if result is not None:
            print(f"STDOUT: {result.stdout}")
            print(f"STDERR: {result.stderr}")
        return None
    return json.loads(result.stdout)


def test_imports():
    """Test that core modules can be imported."""
    print("🧪 Testing module imports...")
    try:
        from src.navfgo.estimator import Estimator  # noqa: F401
        from src.navfgo.evaluation import evaluate  # noqa: F401
        from src.navfgo.pipeline import run_pipeline  # noqa: F401
        from src.navfgo.simulator import simulate  # noqa: F401

        print("✅ All core modules imported successfully")
        return True
    except ImportError as e:
        print(f"❌ Import failed: {e}")
        print("💡 Hint: Install dependencies with 'pip install -e .[dev]'")
        return False


def test_cli_version():
    """Test CLI version command."""
    print("\n🧪 Testing CLI version...")
    result = run_command(["--version"], timeout=30)
    if result and result.returncode == 0 and "navfgo" in result.stdout:
        print(f"✅ CLI version: {result.stdout.strip()}")
        return True
    print("❌ CLI version failed")
    return False


def test_simulate_run_evaluate(workdir):
    """Test the full command chain on a short noise-free circle."""
    print("\n🧪 Testing simulate → run → evaluate...")
    spec = workdir / "sim.yaml"
    spec.write_text(SIMULATION, encoding="utf-8")
    data = workdir / "data"
    out = workdir / "out"

    simulated = _json_output(
        run_command(["simulate", "--config", str(spec), "--out", str(data), "--format", "json"])
    )
    if simulated is None:
        print("❌ simulate failed")
        return False
    print(f"✅ Simulated {simulated['imu_rows']} IMU rows, {simulated['gnss_rows']} GNSS fixes")

    run = _json_output(
        run_command(["run", "--dataset", str(data), "--out", str(out), "--format", "json"])
    )
    if run is None:
        print("❌ run failed")
        return False
    print(f"✅ Run: {run['nodes']} nodes, {run['optimizations']} optimizations")

    report = _json_output(
        run_command(
            [
                "evaluate",
                "--est",
                str(out / "trajectory.txt"),
                "--truth",
                str(data / "truth.txt"),
                "--lengths",
                "20",
                "--format",
                "json",
            ]
        )
    )
    if report is None:
        print("❌ evaluate failed")
        return False
    print(f"✅ ATE {report['ate_m']:.4f} m, ARE {report['are_deg']:.4f} deg")
    if report["ate_m"] > 0.05:
        print("⚠️ ATE higher than expected on noise-free data")
        return False
    return True


def test_error_exit_code(workdir):
    """Test a dataset without an IMU file exits with the validation code."""
    print("\n🧪 Testing error exit codes...")
    empty = workdir / "empty"
    empty.mkdir()
    result = run_command(["run", "--dataset", str(empty)], timeout=30)
    if result and result.returncode == 2:
        print("✅ Missing IMU file rejected with exit code 2")
        return True
    print("❌ Unexpected exit code")
    return False


def main():
    """Run all acceptance checks."""
    print("🚀 Running navfgo Acceptance Tests")
    print("=" * 50)

    with tempfile.TemporaryDirectory() as temp_dir:
        workdir = Path(temp_dir)
        tests = [
            ("Module Imports", test_imports),
            ("CLI Version", test_cli_version),
            ("Simulate/Run/Evaluate", lambda: test_simulate_run_evaluate(workdir)),
            ("Error Exit Code", lambda: test_error_exit_code(workdir)),
        ]

        passed = 0
        for name, test_func in tests:
            try:
                if test_func():
                    passed += 1
                else:
                    print(f"❌ {name} test failed")
            except Exception as e:
                print(f"❌ {name} test crashed: {e}")

    print("\n" + "=" * 50)
    print(f"📊 Results: {passed}/{len(tests)} tests passed")
    if passed == len(tests):
        print("🎉 All acceptance tests passed!")
        return 0
    print("⚠️ Some tests failed.")
    return 1


if __name__ == "__main__":
    sys.exit(main())
