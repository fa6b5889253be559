"""
Synthetic datasets: ground-truth motion, IMU, feature tracks and GNSS fixes.

All randomness comes from one seed; the IMU, landmark, feature and GNSS
streams each draw from their own child generator so that changing one
noise setting leaves the other streams untouched.
"""

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
import pandas as pd
from scipy.integrate import quad
from scipy.interpolate import CubicSpline
from scipy.spatial.transform import Rotation

from . import __version__
from .config import (
    DatasetConfig,
    FeatureBudgetConfig,
    ImuNoiseConfig,
    LandmarkFieldConfig,
    NoiseSpec,
    RunConfig,
    SimulationConfig,
    TrajectorySpec,
    VisualConfig,
    dump_yaml,
)
from .dataset import FEATURE_COLUMNS, GNSS_COLUMNS, IMU_COLUMNS
from .errors import WriteError
from .evaluation import tum_frame, write_tum
from .factors import GnssFix
from .geodesy import WorldFrame
from .ins import ImuSample, NavState
from .logging import get_logger
from .visual import CameraModel, Extrinsics

logger = get_logger(__name__)

GNSS_SIGMA_FLOOR = 0.005
CSV_FLOAT_FORMAT = "%.15g"

OUTLIER_COLUMNS = ["t", "frame_id", "feature_id", "landmark_id", "u_true", "v_true", "u", "v"]


@dataclass(frozen=True)
class Kinematics:
    """Sampled truth: world position/velocity/acceleration, attitude and body rate."""

    t: np.ndarray
    p: np.ndarray
    v: np.ndarray
    a: np.ndarray
    q: np.ndarray
    omega_wb: np.ndarray

    def __len__(self) -> int:
        return len(self.t)

    def R(self) -> np.ndarray:
        """Body-to-world rotation matrices, shape (N, 3, 3)."""
        return Rotation.from_quat(self.q[:, [1, 2, 3, 0]]).as_matrix()


def _smootherstep(tau: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Integral, value and derivative of 6τ⁵ − 15τ⁴ + 10τ³."""
    integral = tau**6 - 3.0 * tau**5 + 2.5 * tau**4
    value = 6.0 * tau**5 - 15.0 * tau**4 + 10.0 * tau**3
    slope = 30.0 * tau**4 - 60.0 * tau**3 + 30.0 * tau**2
    return integral, value, slope


class TruthTrajectory:
    """
    Planar ground-truth motion with heading following the velocity.

    The path is parameterized by a distance-like parameter s that advances
    at the commanded speed: zero during the static segment, a smootherstep
    ramp, then constant cruise speed.
    """

    def __init__(self, spec: TrajectorySpec) -> None:
        self.spec = spec
        heading = math.radians(spec.heading_deg)
        self._rot = np.array(
            [[math.cos(heading), -math.sin(heading)], [math.sin(heading), math.cos(heading)]]
        )
        self.loop_length: Optional[float] = None
        self._spline: Optional[CubicSpline] = None
        if spec.shape == "circle":
            self.loop_length = 2.0 * math.pi * spec.radius
        elif spec.shape == "figure_eight":
            a = spec.size / 2.0
            length, _ = quad(
                lambda phi: a * math.hypot(math.cos(phi), math.cos(2.0 * phi)), 0.0, 2.0 * math.pi
            )
            self.loop_length = float(length)
        elif spec.shape == "waypoint_spline":
            pts = np.asarray(spec.waypoints, dtype=float)
            closed = np.vstack([pts, pts[:1]])
            u = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(closed, axis=0), axis=1))])
            self._spline = CubicSpline(u, closed - pts[0], bc_type="periodic")
            self.loop_length = float(u[-1])
            self.knots = u[:-1]

    def path(self, s: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Horizontal (north, east) position and its first two s-derivatives."""
        s = np.atleast_1d(np.asarray(s, dtype=float))
        spec = self.spec
        if spec.shape == "straight":
            xy = np.column_stack([s, np.zeros_like(s)])
            d1 = np.column_stack([np.ones_like(s), np.zeros_like(s)])
            d2 = np.zeros_like(xy)
        elif spec.shape == "circle":
            r = spec.radius
            th = s / r
            xy = np.column_stack([r * np.sin(th), r * (1.0 - np.cos(th))])
            d1 = np.column_stack([np.cos(th), np.sin(th)])
            d2 = np.column_stack([-np.sin(th), np.cos(th)]) / r
        elif spec.shape == "figure_eight":
            assert self.loop_length is not None
            a = spec.size / 2.0
            k = 2.0 * math.pi / self.loop_length
            phi = k * s
            xy = np.column_stack([a * np.sin(phi), 0.5 * a * np.sin(2.0 * phi)])
            d1 = k * np.column_stack([a * np.cos(phi), a * np.cos(2.0 * phi)])
            d2 = k * k * np.column_stack([-a * np.sin(phi), -2.0 * a * np.sin(2.0 * phi)])
        else:
            assert self._spline is not None and self.loop_length is not None
            u = np.mod(s, self.loop_length)
            xy = self._spline(u)
            d1 = self._spline(u, 1)
            d2 = self._spline(u, 2)
        R = self._rot
        return xy @ R.T, d1 @ R.T, d2 @ R.T

    def distance(self, t: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Path parameter s(t) with its first and second time derivatives."""
        spec = self.spec
        t = np.atleast_1d(np.asarray(t, dtype=float))
        V = spec.speed
        Tr = spec.ramp_duration
        tp = t - spec.static_duration
        s = np.zeros_like(t)
        s_dot = np.zeros_like(t)
        s_ddot = np.zeros_like(t)

        if Tr > 0:
            ramp = (tp > 0) & (tp < Tr)
            integral, value, slope = _smootherstep(tp[ramp] / Tr)
            s[ramp] = V * Tr * integral
            s_dot[ramp] = V * value
            s_ddot[ramp] = V / Tr * slope
        cruise = tp >= Tr
        s[cruise] = V * Tr / 2.0 + V * (tp[cruise] - Tr)
        s_dot[cruise] = V
        return s, s_dot, s_ddot

    def _excitation(self, t: np.ndarray) -> Tuple[np.ndarray, ...]:
        spec = self.spec
        tp = t - spec.static_duration
        Tr = spec.ramp_duration
        if Tr > 0:
            tau = np.clip(tp / Tr, 0.0, 1.0)
            _, w, w_slope = _smootherstep(tau)
            inside = (tp > 0) & (tp < Tr)
            w_dot = np.where(inside, w_slope / Tr, 0.0)
        else:
            w = (tp >= 0).astype(float)
            w_dot = np.zeros_like(t)
        omega = 2.0 * math.pi * spec.excitation_hz
        A_r = math.radians(spec.roll_amplitude_deg)
        A_p = math.radians(spec.pitch_amplitude_deg)
        phase_p = math.pi / 3.0
        roll = A_r * w * np.sin(omega * tp)
        roll_dot = A_r * (w_dot * np.sin(omega * tp) + w * omega * np.cos(omega * tp))
        pitch = A_p * w * np.sin(omega * tp + phase_p) - A_p * w * math.sin(phase_p)
        pitch_dot = A_p * (
            w_dot * (np.sin(omega * tp + phase_p) - math.sin(phase_p))
            + w * omega * np.cos(omega * tp + phase_p)
        )
        return roll, roll_dot, pitch, pitch_dot

    def evaluate(self, t: np.ndarray) -> Kinematics:
        """Truth kinematics at the given times."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        s, s_dot, s_ddot = self.distance(t)
        xy, d1, d2 = self.path(s)
        n = len(t)
        p = np.column_stack([xy, np.zeros(n)])
        v = np.column_stack([d1 * s_dot[:, None], np.zeros(n)])
        a = np.column_stack([d2 * (s_dot**2)[:, None] + d1 * s_ddot[:, None], np.zeros(n)])

        yaw = np.arctan2(d1[:, 1], d1[:, 0])
        curvature = (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]) / np.einsum("ni,ni->n", d1, d1)
        yaw_dot = curvature * s_dot
        roll, roll_dot, pitch, pitch_dot = self._excitation(t)

        rot = Rotation.from_euler("ZYX", np.column_stack([yaw, pitch, roll]))
        q = rot.as_quat()[:, [3, 0, 1, 2]]
        q = q * np.where(q[:, :1] < 0, -1.0, 1.0)
        # body rate from ZYX Euler rates
        omega = np.column_stack(
            [
                roll_dot - yaw_dot * np.sin(pitch),
                pitch_dot * np.cos(roll) + yaw_dot * np.sin(roll) * np.cos(pitch),
                -pitch_dot * np.sin(roll) + yaw_dot * np.cos(roll) * np.cos(pitch),
            ]
        )
        return Kinematics(t, p, v, a, q, omega)

    def path_length(self, duration: float) -> float:
        return float(self.distance(np.array([duration]))[0][0])


@dataclass(frozen=True)
class BiasSeries:
    gyro: np.ndarray
    accel: np.ndarray


def sample_times(duration: float, rate: float) -> np.ndarray:
    count = int(math.floor(duration * rate + 1e-9)) + 1
    return np.arange(count) / rate


def draw_biases(noise: NoiseSpec, n: int, rate: float, rng: np.random.Generator) -> BiasSeries:
    """Constant bias draws (or the fixed values) plus a random walk."""
    gyro0 = (
        np.asarray(noise.gyro_bias, dtype=float)
        if noise.gyro_bias is not None
        else rng.normal(0.0, noise.gyro_bias_sigma, 3)
    )
    accel0 = (
        np.asarray(noise.accel_bias, dtype=float)
        if noise.accel_bias is not None
        else rng.normal(0.0, noise.accel_bias_sigma, 3)
    )
    dt = 1.0 / rate
    walk_g = np.zeros((n, 3))
    walk_a = np.zeros((n, 3))
    if n > 1:
        walk_g[1:] = np.cumsum(
            noise.gyro_bias_rw * math.sqrt(dt) * rng.standard_normal((n - 1, 3)), axis=0
        )
        walk_a[1:] = np.cumsum(
            noise.accel_bias_rw * math.sqrt(dt) * rng.standard_normal((n - 1, 3)), axis=0
        )
    return BiasSeries(gyro0 + walk_g, accel0 + walk_a)


def truth_states(
    spec: TrajectorySpec, rate: float, biases: Optional[BiasSeries] = None
) -> List[NavState]:
    """Ground-truth states sampled at rate over the trajectory duration."""
    kin = TruthTrajectory(spec).evaluate(sample_times(spec.duration, rate))
    return kinematics_to_states(kin, biases)


def kinematics_to_states(kin: Kinematics, biases: Optional[BiasSeries] = None) -> List[NavState]:
    n = len(kin)
    bg = biases.gyro if biases is not None else np.zeros((n, 3))
    ba = biases.accel if biases is not None else np.zeros((n, 3))
    return [
        NavState(
            float(kin.t[k]),
            kin.p[k].copy(),
            kin.v[k].copy(),
            kin.q[k].copy(),
            bg[k].copy(),
            ba[k].copy(),
        )
        for k in range(n)
    ]


def synthesize_imu(
    kin: Kinematics,
    frame: WorldFrame,
    noise: NoiseSpec,
    rate: float,
    rng: np.random.Generator,
    biases: Optional[BiasSeries] = None,
) -> List[ImuSample]:
    """
    IMU measurements from truth by inverting the mechanization model.

    f = Rᵀ(a − g + 2 ω_ie × v) and ω_ib = ω_wb + Rᵀ ω_ie, then biases and
    white noise (density × √rate per sample) are added.
    """
    n = len(kin)
    Rt = np.transpose(kin.R(), (0, 2, 1))
    coriolis = 2.0 * np.cross(frame.earth_rate, kin.v)
    force = np.einsum("nij,nj->ni", Rt, kin.a - frame.gravity + coriolis)
    rate_ib = kin.omega_wb + np.einsum("nij,j->ni", Rt, frame.earth_rate)

    if biases is not None:
        force = force + biases.accel
        rate_ib = rate_ib + biases.gyro
    scale = math.sqrt(rate)
    if noise.gyro_arw > 0:
        rate_ib = rate_ib + noise.gyro_arw * scale * rng.standard_normal((n, 3))
    if noise.accel_vrw > 0:
        force = force + noise.accel_vrw * scale * rng.standard_normal((n, 3))
    return [ImuSample(float(kin.t[k]), rate_ib[k], force[k]) for k in range(n)]


def generate_landmarks(
    trajectory: TruthTrajectory,
    config: LandmarkFieldConfig,
    duration: float,
    rng: np.random.Generator,
) -> np.ndarray:
    """
    Landmarks scattered over a corridor around the path.

    Points keep clear of a lane around the path itself; for open paths the
    corridor extends past the end by the maximum visible depth.
    """
    length = trajectory.path_length(duration)
    if trajectory.loop_length is not None:
        length = min(length, trajectory.loop_length)
    else:
        length += config.max_depth
    count = max(int(round(config.density * max(length, 1.0))), 1)
    s = rng.uniform(-config.max_depth if trajectory.loop_length is None else 0.0, length, count)
    xy, d1, _ = trajectory.path(s)
    normal = np.column_stack([-d1[:, 1], d1[:, 0]]) / np.linalg.norm(d1, axis=1)[:, None]
    offset = rng.uniform(config.clear_half_width, config.corridor_half_width, count)
    offset *= rng.choice([-1.0, 1.0], count)
    down = rng.uniform(config.min_height, config.max_height, count)
    return np.column_stack([xy + normal * offset[:, None], down])


@dataclass
class FeatureTracks:
    observations: pd.DataFrame
    outliers: pd.DataFrame
    track_landmarks: Dict[int, int] = field(default_factory=dict)


def _select_features(
    pixels: np.ndarray,
    candidates: np.ndarray,
    tracked: set,
    budget: FeatureBudgetConfig,
    cam: CameraModel,
    rng: np.random.Generator,
) -> List[int]:
    """Grid-capped, separation-checked selection preferring continuing tracks."""
    cols = max(int(math.ceil(cam.width / budget.grid_size)), 1)
    rows = max(int(math.ceil(cam.height / budget.grid_size)), 1)
    per_cell = max(int(math.ceil(budget.max_features / (cols * rows))), 1)
    order = rng.permutation(len(candidates))
    order = sorted(order, key=lambda i: candidates[i] not in tracked)

    counts = np.zeros((rows, cols), dtype=int)
    accepted: List[int] = []
    accepted_px = np.zeros((0, 2))
    for i in order:
        if len(accepted) >= budget.max_features:
            break
        u, v = pixels[i]
        r = min(int(v // budget.grid_size), rows - 1)
        c = min(int(u // budget.grid_size), cols - 1)
        if counts[r, c] >= per_cell:
            continue
        if accepted_px.size and np.min(np.linalg.norm(accepted_px - pixels[i], axis=1)) < (
            budget.min_separation
        ):
            continue
        counts[r, c] += 1
        accepted.append(int(i))
        accepted_px = np.vstack([accepted_px, pixels[i]])
    return accepted


def synthesize_features(
    kin: Kinematics,
    landmarks: np.ndarray,
    cam: CameraModel,
    ext: Extrinsics,
    budget: FeatureBudgetConfig,
    noise: NoiseSpec,
    depth_range: Tuple[float, float],
    rng: np.random.Generator,
    time_offset: float = 0.0,
) -> FeatureTracks:
    """
    Per-frame feature tracks of the visible landmarks.

    A track ends when its landmark leaves the image or is not selected; a
    landmark seen again later starts a new track id. Outliers replace the
    pixel by a uniform random one (or a displacement of the configured
    magnitude) and are listed separately.

    Args:
        kin: Truth at the camera frame times
        landmarks: World landmark positions (M, 3)
        depth_range: Visible depth interval in the camera
        time_offset: Written timestamps are truth time minus this offset
    """
    R_bc = ext.R_bc
    R_all = kin.R()
    rows: List[Tuple[float, int, int, float, float]] = []
    outliers: List[Tuple[float, int, int, int, float, float, float, float]] = []
    active: Dict[int, int] = {}
    track_landmarks: Dict[int, int] = {}
    next_track = 0

    for k in range(len(kin)):
        R_wc = R_all[k] @ R_bc
        p_wc = kin.p[k] + R_all[k] @ ext.p_bc
        p_c = (landmarks - p_wc) @ R_wc
        pixels, in_front = cam.project_points(p_c)
        depth_ok = (p_c[:, 2] >= depth_range[0]) & (p_c[:, 2] <= depth_range[1])
        visible = np.flatnonzero(in_front & depth_ok & cam.in_image(pixels))

        chosen = _select_features(
            pixels[visible], visible, set(active), budget, cam, rng
        )
        selected = visible[chosen]
        continuing = {}
        t_file = float(kin.t[k]) - time_offset
        for lm_id in selected:
            lm_id = int(lm_id)
            track = active.get(lm_id)
            if track is None:
                track = next_track
                next_track += 1
                track_landmarks[track] = lm_id
            continuing[lm_id] = track
            true_px = pixels[lm_id]
            px = true_px + (
                rng.normal(0.0, noise.pixel_sigma, 2) if noise.pixel_sigma > 0 else 0.0
            )
            if noise.outlier_fraction > 0 and rng.random() < noise.outlier_fraction:
                if noise.outlier_magnitude is None:
                    px = np.array([rng.uniform(0, cam.width), rng.uniform(0, cam.height)])
                else:
                    angle = rng.uniform(0.0, 2.0 * math.pi)
                    px = true_px + noise.outlier_magnitude * np.array(
                        [math.cos(angle), math.sin(angle)]
                    )
                    px = np.clip(px, 0.0, [cam.width - 1e-6, cam.height - 1e-6])
                outliers.append(
                    (t_file, k, track, lm_id, float(true_px[0]), float(true_px[1]),
                     float(px[0]), float(px[1]))
                )
            rows.append((t_file, k, track, float(px[0]), float(px[1])))
        active = continuing

    return FeatureTracks(
        pd.DataFrame(rows, columns=FEATURE_COLUMNS),
        pd.DataFrame(outliers, columns=OUTLIER_COLUMNS),
        track_landmarks,
    )


def synthesize_gnss(
    kin: Kinematics,
    frame: WorldFrame,
    noise: NoiseSpec,
    lever_arm: np.ndarray,
    rng: np.random.Generator,
) -> List[GnssFix]:
    """
    Antenna fixes at the given epochs.

    Position = body position + R·lever_arm, perturbed per NED axis and
    converted to geodetic; fixes inside a dropout interval are invalid.
    """
    lever = np.asarray(lever_arm, dtype=float)
    sigma = np.asarray(noise.gnss_sigma, dtype=float)
    reported = np.maximum(sigma, GNSS_SIGMA_FLOOR)
    R_all = kin.R()
    fixes = []
    for k in range(len(kin)):
        t = float(kin.t[k])
        p = kin.p[k] + R_all[k] @ lever
        if np.any(sigma > 0):
            p = p + rng.normal(0.0, 1.0, 3) * sigma
        valid = not any(lo <= t <= hi for lo, hi in noise.gnss_dropouts)
        fixes.append(GnssFix(t, frame.to_geodetic(p), reported.copy(), lever.copy(), valid))
    return fixes


@dataclass
class SimulatedDataset:
    config: SimulationConfig
    frame: WorldFrame
    truth: Kinematics
    states: List[NavState]
    imu: List[ImuSample]
    features: FeatureTracks
    fixes: List[GnssFix]
    landmarks: np.ndarray
    biases: BiasSeries


def simulate(config: SimulationConfig) -> SimulatedDataset:
    """Generate a complete dataset in memory."""
    spec = config.trajectory
    imu_rng, landmark_rng, feature_rng, gnss_rng = (
        np.random.default_rng(child) for child in np.random.SeedSequence(config.seed).spawn(4)
    )
    trajectory = TruthTrajectory(spec)
    frame = WorldFrame.at(spec.origin)

    imu_kin = trajectory.evaluate(sample_times(spec.duration, config.rates.imu))
    biases = draw_biases(config.noise, len(imu_kin), config.rates.imu, imu_rng)
    imu = synthesize_imu(imu_kin, frame, config.noise, config.rates.imu, imu_rng, biases)

    landmarks = generate_landmarks(trajectory, config.landmarks, spec.duration, landmark_rng)
    cam = CameraModel.from_config(config.camera)
    ext = Extrinsics.from_config(config.camera)
    cam_kin = trajectory.evaluate(sample_times(spec.duration, config.rates.camera))
    features = synthesize_features(
        cam_kin,
        landmarks,
        cam,
        ext,
        config.features,
        config.noise,
        (config.landmarks.min_depth, config.landmarks.max_depth),
        feature_rng,
        config.camera.time_offset,
    )

    gnss_kin = trajectory.evaluate(sample_times(spec.duration, config.rates.gnss))
    fixes = synthesize_gnss(gnss_kin, frame, config.noise, np.asarray(config.gnss.lever_arm), gnss_rng)

    logger.info(
        "Simulated dataset",
        extra={
            "operation": "simulate",
            "imu_rows": len(imu),
            "feature_rows": len(features.observations),
            "gnss_rows": len(fixes),
            "landmarks": len(landmarks),
        },
    )
    return SimulatedDataset(
        config,
        frame,
        imu_kin,
        kinematics_to_states(imu_kin, biases),
        imu,
        features,
        fixes,
        landmarks,
        biases,
    )


def imu_frame(samples: List[ImuSample]) -> pd.DataFrame:
    data = np.array(
        [[s.t, *s.angular_rate, *s.specific_force] for s in samples], dtype=float
    ).reshape(-1, 7)
    return pd.DataFrame(data, columns=IMU_COLUMNS)


def gnss_frame(fixes: List[GnssFix]) -> pd.DataFrame:
    rows = []
    for fix in fixes:
        lat, lon, h = fix.position.to_degrees()
        rows.append((fix.t, lat, lon, h, *map(float, fix.sigma), int(fix.valid)))
    return pd.DataFrame(rows, columns=GNSS_COLUMNS)


def dataset_run_config(config: SimulationConfig) -> RunConfig:
    """Run configuration matching a simulated dataset's sensor settings."""
    noise = config.noise
    imu_noise = ImuNoiseConfig()
    if noise.gyro_arw > 0 and noise.accel_vrw > 0:
        imu_noise = ImuNoiseConfig(
            gyro_arw=noise.gyro_arw,
            accel_vrw=noise.accel_vrw,
            gyro_bias_rw=max(noise.gyro_bias_rw, imu_noise.gyro_bias_rw * 1e-3),
            accel_bias_rw=max(noise.accel_bias_rw, imu_noise.accel_bias_rw * 1e-3),
        )
    visual = VisualConfig(
        pixel_sigma=noise.pixel_sigma if noise.pixel_sigma > 0 else VisualConfig().pixel_sigma
    )
    return RunConfig(
        dataset=DatasetConfig(),
        imu_noise=imu_noise,
        gnss=config.gnss,
        visual=visual,
        seed=config.seed,
    )


def write_dataset(dataset: SimulatedDataset, out_dir: Path) -> Dict[str, Path]:
    """
    Write a dataset directory.

    Returns:
        Mapping of file role to path

    Raises:
        WriteError: If a file cannot be written
    """
    out_dir = Path(out_dir)
    config = dataset.config
    paths = {
        "imu": out_dir / "imu.csv",
        "features": out_dir / "features.csv",
        "gnss": out_dir / "gnss.csv",
        "camera": out_dir / "camera.yaml",
        "truth": out_dir / "truth.txt",
        "outliers": out_dir / "feature_outliers.csv",
        "metadata": out_dir / "metadata.json",
        "run": out_dir / "run.yaml",
    }
    metadata: Dict[str, Any] = {
        "generator": f"navfgo {__version__}",
        "seed": config.seed,
        "trajectory": asdict(config.trajectory),
        "noise": asdict(config.noise),
        "rates": asdict(config.rates),
        "landmark_count": int(len(dataset.landmarks)),
        "initial_gyro_bias": dataset.biases.gyro[0].tolist(),
        "initial_accel_bias": dataset.biases.accel[0].tolist(),
        "imu_rows": len(dataset.imu),
        "feature_rows": int(len(dataset.features.observations)),
        "gnss_rows": len(dataset.fixes),
        "outlier_rows": int(len(dataset.features.outliers)),
    }
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        imu_frame(dataset.imu).to_csv(paths["imu"], index=False, float_format=CSV_FLOAT_FORMAT)
        dataset.features.observations.to_csv(
            paths["features"], index=False, float_format=CSV_FLOAT_FORMAT
        )
        gnss_frame(dataset.fixes).to_csv(paths["gnss"], index=False, float_format=CSV_FLOAT_FORMAT)
        dataset.features.outliers.to_csv(
            paths["outliers"], index=False, float_format=CSV_FLOAT_FORMAT
        )
        dump_yaml(asdict(config.camera), paths["camera"])
        truth = dataset.truth
        write_tum(tum_frame(truth.t, truth.p, truth.q), paths["truth"])
        paths["metadata"].write_text(
            json.dumps(metadata, indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )
        run = dataset_run_config(config).to_dict()
        run.pop("camera", None)
        dump_yaml(run, paths["run"])
    except OSError as e:
        raise WriteError(f"Failed to write dataset: {e}", file_path=str(out_dir)) from e
    return paths

