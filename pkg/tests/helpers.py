"""Shared builders: noise-free IMU streams, consistent truth states and simulated runs."""

import dataclasses
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Tuple

import numpy as np

from src.navfgo.config import SimulationConfig, load_run_config
from src.navfgo.evaluation import Trajectory, read_tum
from src.navfgo.geodesy import GeodeticPosition, WorldFrame
from src.navfgo.ins import ImuSample, NavState, mechanize_step
from src.navfgo.pipeline import RunRequest, RunResult, run_pipeline
from src.navfgo.rotation import IDENTITY_QUAT, skew, so3_exp
from src.navfgo.simulator import SimulatedDataset, simulate, write_dataset

VectorFn = Callable[[float], np.ndarray]


def make_frame(
    lat_deg: float = 30.0,
    lon_deg: float = 114.0,
    height: float = 20.0,
    earth_rate: bool = True,
) -> WorldFrame:
    frame = WorldFrame.at(GeodeticPosition.from_degrees(lat_deg, lon_deg, height))
    return frame if earth_rate else frame.without_earth_rate()


def imu_stream(
    duration: float,
    rate: float = 200.0,
    t0: float = 0.0,
    angular_rate: Optional[VectorFn] = None,
    specific_force: Optional[VectorFn] = None,
) -> List[ImuSample]:
    """Evenly spaced samples from rate and force functions of time."""
    count = int(round(duration * rate)) + 1
    out = []
    for k in range(count):
        t = t0 + k / rate
        w = angular_rate(t) if angular_rate else np.zeros(3)
        f = specific_force(t) if specific_force else np.zeros(3)
        out.append(ImuSample(t, np.asarray(w, dtype=float), np.asarray(f, dtype=float)))
    return out


def stationary_stream(
    frame: WorldFrame, duration: float, rate: float = 200.0, t0: float = 0.0
) -> List[ImuSample]:
    """Samples of a level, Earth-fixed body: f = −g, ω = ω_ie."""
    return imu_stream(
        duration,
        rate,
        t0,
        angular_rate=lambda t: frame.earth_rate.copy(),
        specific_force=lambda t: -frame.gravity,
    )


def maneuver_stream(
    frame: WorldFrame, duration: float, rate: float = 200.0, t0: float = 0.0
) -> List[ImuSample]:
    """Smooth accelerating and turning motion, roughly level."""
    return imu_stream(
        duration,
        rate,
        t0,
        angular_rate=lambda t: np.array(
            [0.02 * np.sin(0.7 * t), 0.01 * np.cos(0.5 * t), 0.15 * np.sin(0.3 * t)]
        ),
        specific_force=lambda t: np.array(
            [0.4 * np.cos(0.4 * t), 0.2 * np.sin(0.6 * t), 0.0]
        )
        - frame.gravity,
    )


def initial_state(
    t: float = 0.0,
    v: Optional[np.ndarray] = None,
    q: Optional[np.ndarray] = None,
) -> NavState:
    return NavState(
        t,
        np.zeros(3),
        np.zeros(3) if v is None else np.asarray(v, dtype=float),
        IDENTITY_QUAT.copy() if q is None else np.asarray(q, dtype=float),
    )


def mechanize(state: NavState, samples: List[ImuSample], frame: WorldFrame) -> List[NavState]:
    """States at every sample time, starting with ``state`` at samples[0].t."""
    states = [state]
    for prev, cur in zip(samples[:-1], samples[1:]):
        states.append(mechanize_step(states[-1], prev, cur, frame))
    return states


def simulate_and_run(
    root: Path, spec: Dict[str, Any], mode: str = "gvins", **estimator: Any
) -> Tuple[RunResult, Trajectory, SimulatedDataset]:
    """
    Simulate a dataset under ``root``, run the estimator on it and read the truth.

    Returns:
        (run result, truth trajectory, simulated dataset)
    """
    dataset = simulate(SimulationConfig.from_dict(spec))
    paths = write_dataset(dataset, root / "data")
    config = dataclasses.replace(load_run_config(paths["run"]), mode=mode)
    if estimator:
        config = dataclasses.replace(
            config, estimator=dataclasses.replace(config.estimator, **estimator)
        )
    result = run_pipeline(RunRequest(config=config, output_dir=root / "out"))
    return result, read_tum(paths["truth"]), dataset


def reference_trajectory(
    state: NavState,
    frame: WorldFrame,
    angular_rate: VectorFn,
    specific_force: VectorFn,
    times: List[float],
    rate: float = 10000.0,
) -> List[Tuple[np.ndarray, np.ndarray, np.ndarray]]:
    """
    Fourth-order Runge-Kutta integration of the strapdown equations.

    Integrates ṗ = v, v̇ = R f + g − 2[ω_ie×]v and Ṙ = R[ω×] − [ω_ie×]R from
    ``state`` with step 1/rate, reading the continuous rate and force functions.

    Returns:
        (p, v, R) at each of ``times``; each must lie on the step grid
    """
    h = 1.0 / rate
    g = frame.gravity
    W_ie = skew(frame.earth_rate)

    def derivative(t: float, p: np.ndarray, v: np.ndarray, R: np.ndarray):
        w = angular_rate(t)
        return v, R @ specific_force(t) + g - 2.0 * W_ie @ v, R @ skew(w) - W_ie @ R

    p, v, R = state.p.copy(), state.v.copy(), state.R
    t = state.t
    out = []
    for target in times:
        steps = int(round((target - t) / h))
        for _ in range(steps):
            k1 = derivative(t, p, v, R)
            k2 = derivative(t + 0.5 * h, *(x + 0.5 * h * k for x, k in zip((p, v, R), k1)))
            k3 = derivative(t + 0.5 * h, *(x + 0.5 * h * k for x, k in zip((p, v, R), k2)))
            k4 = derivative(t + h, *(x + h * k for x, k in zip((p, v, R), k3)))
            p, v, R = (
                x + h / 6.0 * (a + 2.0 * b + 2.0 * c + d)
                for x, a, b, c, d in zip((p, v, R), k1, k2, k3, k4)
            )
            t += h
        out.append((p.copy(), v.copy(), R.copy()))
    return out


def reference_deltas(
    angular_rate: VectorFn,
    specific_force: VectorFn,
    t0: float,
    t1: float,
    rate: float = 10000.0,
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Midpoint-rule accumulation of Δp, Δv and ΔR over [t0, t1] at ``rate``.

    No gravity or Earth rotation: the deltas are pure body-frame integrals.
    """
    steps = int(round((t1 - t0) * rate))
    h = (t1 - t0) / steps
    dp = np.zeros(3)
    dv = np.zeros(3)
    dR = np.eye(3)
    for k in range(steps):
        tm = t0 + (k + 0.5) * h
        w = angular_rate(tm)
        a = dR @ so3_exp(0.5 * h * w) @ specific_force(tm)
        dp = dp + dv * h + 0.5 * a * h * h
        dv = dv + a * h
        dR = dR @ so3_exp(h * w)
    return dp, dv, dR
