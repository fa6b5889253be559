"""
GNSS/INS initialization.

Zero-velocity windows give roll, pitch and gyro bias by accelerometer
leveling; the first GNSS-derived course above the minimum speed (or a
configured heading) gives yaw. A short GNSS + preintegration optimization
over the initialization span then seeds the sliding window.
"""

from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .config import InitializerConfig, RunConfig
from .errors import InitializationPendingError
from .estimator import NodeKind, SlidingWindow, TimeNode
from .factors import GnssFactor, GnssFix, ImuFactor, NavValues, state_key
from .geodesy import WorldFrame
from .ins import ImuSample, NavState, propagate_to, samples_between
from .logging import get_logger
from .preintegration import integrate
from .rotation import euler_to_quat, quat_to_rotmat
from .solver import Factor, MarginalizationPrior, PriorFactor, SolverConfig, levenberg_marquardt
from .visual import Extrinsics

logger = get_logger(__name__)


@dataclass(frozen=True)
class ZeroVelocityWindow:
    t0: float
    t1: float
    stationary: bool


@dataclass(frozen=True)
class GnssCourse:
    t: float
    heading: float
    velocity: np.ndarray


@dataclass
class InitializationResult:
    frame: WorldFrame
    window: SlidingWindow
    end_time: float
    heading: float
    gyro_bias: np.ndarray
    static_samples: int


def detect_zero_velocity(
    samples: Sequence[ImuSample], config: InitializerConfig
) -> List[ZeroVelocityWindow]:
    """
    Flag consecutive windows of the IMU stream as stationary.

    A window is stationary when the standard deviations of both the gyro
    and the specific-force norms stay below their thresholds.
    """
    if len(samples) < 2:
        return []
    times = np.array([s.t for s in samples])
    gyro = np.linalg.norm(np.array([s.angular_rate for s in samples]), axis=1)
    accel = np.linalg.norm(np.array([s.specific_force for s in samples]), axis=1)

    windows = []
    start = times[0]
    while start + config.zupt_window <= times[-1] + 1e-9:
        end = start + config.zupt_window
        mask = (times >= start) & (times < end)
        if np.count_nonzero(mask) >= 2:
            stationary = bool(
                np.std(gyro[mask]) < config.zupt_gyro_std
                and np.std(accel[mask]) < config.zupt_accel_std
            )
            windows.append(ZeroVelocityWindow(float(start), float(end), stationary))
        start = end
    return windows


def leading_static_samples(
    samples: Sequence[ImuSample], windows: Sequence[ZeroVelocityWindow]
) -> List[ImuSample]:
    """Samples of the uninterrupted stationary span at the start of the stream."""
    end = None
    for window in windows:
        if not window.stationary:
            break
        end = window.t1
    if end is None:
        return []
    return [s for s in samples if s.t < end]


def coarse_alignment(
    samples: Sequence[ImuSample], frame: WorldFrame, heading: float
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Attitude and gyro bias from stationary samples.

    Roll and pitch come from the mean specific force (which opposes
    gravity at rest); the gyro bias is the mean angular rate minus the
    Earth rate seen in the body frame.

    Returns:
        (q_wb, gyro bias)
    """
    f = np.mean([s.specific_force for s in samples], axis=0)
    roll = float(np.arctan2(-f[1], -f[2]))
    pitch = float(np.arctan2(f[0], np.hypot(f[1], f[2])))
    q = euler_to_quat(roll, pitch, heading)
    omega = np.mean([s.angular_rate for s in samples], axis=0)
    bg = omega - quat_to_rotmat(q).T @ frame.earth_rate
    return q, bg


def heading_from_gnss(
    fixes: Sequence[GnssFix], frame: WorldFrame, min_speed: float
) -> Optional[GnssCourse]:
    """
    Course over ground at the first epoch whose GNSS speed exceeds min_speed.

    Velocities are central differences of consecutive valid fixes.
    """
    valid = [f for f in fixes if f.valid]
    if len(valid) < 3:
        return None
    positions = np.array([frame.to_world(f.position) for f in valid])
    times = np.array([f.t for f in valid])
    for k in range(1, len(valid) - 1):
        dt = times[k + 1] - times[k - 1]
        if dt <= 0:
            continue
        velocity = (positions[k + 1] - positions[k - 1]) / dt
        if np.hypot(velocity[0], velocity[1]) > min_speed:
            heading = float(np.arctan2(velocity[1], velocity[0]))
            return GnssCourse(float(times[k]), heading, velocity)
    return None


def initial_prior(
    state: NavState,
    node_id: int,
    fix: GnssFix,
    config: InitializerConfig,
    extrinsics: Extrinsics,
) -> MarginalizationPrior:
    """Diagonal prior on the first node built from the initialization uncertainties."""
    sigma = np.concatenate(
        [
            np.asarray(fix.sigma, dtype=float),
            np.radians(
                [config.roll_pitch_sigma_deg, config.roll_pitch_sigma_deg, config.yaw_sigma_deg]
            ),
            np.full(3, config.velocity_sigma),
            np.full(3, config.gyro_bias_sigma),
            np.full(3, config.accel_bias_sigma),
        ]
    )
    return MarginalizationPrior(
        keys=[state_key(node_id)],
        dims=[15],
        jacobian=np.diag(1.0 / sigma),
        residual=np.zeros(15),
        lin_values=NavValues({node_id: state.copy()}, extrinsics),
    )


def initialize(
    samples: Sequence[ImuSample],
    fixes: Sequence[GnssFix],
    config: RunConfig,
    extrinsics: Extrinsics,
) -> InitializationResult:
    """
    Align the INS and build the first sliding window.

    The first valid fix defines the local navigation frame origin.

    Raises:
        InitializationPendingError: While speed, IMU or GNSS coverage is insufficient
    """
    init = config.initializer
    est = config.estimator
    valid = [f for f in fixes if f.valid]
    if not valid:
        raise InitializationPendingError("No valid GNSS fix yet")
    first = valid[0]
    t0 = first.t
    frame = WorldFrame.at(first.position)

    course = None
    if init.initial_heading_deg is not None:
        heading = float(np.radians(init.initial_heading_deg))
        t_end = t0 + init.init_duration
    else:
        course = heading_from_gnss(valid, frame, init.min_init_speed)
        if course is None:
            raise InitializationPendingError(
                f"Speed has not exceeded {init.min_init_speed} m/s",
                t=valid[-1].t,
            )
        heading = course.heading
        # the span must reach the epoch the course was measured at
        t_end = max(t0 + init.init_duration, course.t)

    if not samples or samples[-1].t < t_end or samples[0].t > t0:
        raise InitializationPendingError(
            f"IMU data does not span the initialization window [{t0}, {t_end}]"
        )
    epochs = [f for f in fixes if t0 - 1e-9 <= f.t <= t_end + 1e-9]
    if not epochs or epochs[-1].t < t_end - 1e-9:
        raise InitializationPendingError(f"GNSS data does not reach {t_end}")

    span = [s for s in samples if s.t >= t0 - 1e-9]
    windows = detect_zero_velocity(span, init)
    static = leading_static_samples(span, windows)
    if len(static) >= 2:
        q, bg = coarse_alignment(static, frame, heading)
        velocity = np.zeros(3)
    else:
        q, _ = coarse_alignment(span[: max(2, len(span) // 10)], frame, heading)
        bg = np.zeros(3)
        velocity = course.velocity if course is not None else np.zeros(3)

    lever = np.asarray(first.lever_arm, dtype=float)
    p0 = frame.to_world(first.position) - quat_to_rotmat(q) @ lever
    state = NavState(t0, p0, velocity, q, bg, np.zeros(3))

    nodes = [TimeNode(0, t0, NodeKind.GNSS_EPOCH, state, fix=first)]
    preints = []
    for fix in epochs:
        if fix.t <= nodes[-1].t + 1e-9:
            continue
        prev = nodes[-1]
        interval = samples_between(samples, prev.t, fix.t, est.max_imu_gap)
        preints.append(integrate(interval, prev.state.bg, prev.state.ba, config.imu_noise))
        propagated = propagate_to(prev.state, interval, fix.t, frame, est.max_imu_gap)
        nodes.append(TimeNode(len(nodes), fix.t, NodeKind.GNSS_EPOCH, propagated, fix=fix))

    prior = initial_prior(state, 0, first, init, extrinsics)
    factors: List[Factor] = [PriorFactor(prior)]
    for k, pre in enumerate(preints):
        factors.append(
            ImuFactor(pre, nodes[k].id, nodes[k + 1].id, frame, est.compensate_earth_rotation)
        )
    for node in nodes:
        if node.has_valid_fix:
            assert node.fix is not None
            factors.append(GnssFactor(node.fix, node.id, frame))

    values = NavValues({n.id: n.state for n in nodes}, extrinsics)
    result = levenberg_marquardt(
        factors, values, SolverConfig(max_iterations=max(est.max_iterations, 20))
    )
    for node in nodes:
        node.state = result.values.states[node.id]
    window = SlidingWindow(frame, nodes, extrinsics, preints=preints, prior=prior)
    window.check_invariants()
    logger.info(
        "Initialized",
        extra={
            "operation": "initialize",
            "t": t_end,
            "heading_deg": float(np.degrees(heading)),
            "static_samples": len(static),
            "cost": result.cost_after,
        },
    )
    return InitializationResult(frame, window, nodes[-1].t, heading, bg, len(static))
