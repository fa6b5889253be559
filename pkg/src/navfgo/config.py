"""
Configuration loader and validation.

Run and simulation settings are YAML documents. A document may name other
documents under a top-level ``include:`` key (string or list, relative to
the including file); included values are merged first and the including
file overrides them key by key. Every section is a dataclass validated on
construction, and ``from_dict`` rejects unknown keys.
"""

import copy
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Dict, FrozenSet, List, Optional, Type, TypeVar

import numpy as np
import yaml

from .errors import ConfigError, ValidationError
from .geodesy import GeodeticPosition

T = TypeVar("T")

MODES = ("gvins", "vins_after_init")
SHAPES = ("straight", "circle", "figure_eight", "waypoint_spline")
NOISE_PRESETS = ("mems", "none")

# Industrial-grade MEMS class: gyro ARW 0.15 deg/sqrt(h), accel VRW 0.05 m/s/sqrt(h)
MEMS_GYRO_ARW = float(np.radians(0.15) / 60.0)
MEMS_ACCEL_VRW = 0.05 / 60.0
MEMS_GYRO_BIAS_RW = 2e-6
MEMS_ACCEL_BIAS_RW = 2e-5

# Forward-looking camera: optical axis along body x, image right along body y
FORWARD_CAMERA_Q_BC = [0.5, 0.5, 0.5, 0.5]


def _fail_if(errors: List[str], section: str) -> None:
    if errors:
        raise ValidationError(
            f"Invalid {section} settings: {', '.join(errors)}",
            fields=[f"{section}.{name}" for name in errors],
        )


def _from_mapping(cls: Type[T], data: Optional[Dict[str, Any]], section: str) -> T:
    """Build a flat dataclass section from a mapping, rejecting unknown keys."""
    data = dict(data or {})
    known = {f.name for f in fields(cls)}  # type: ignore[arg-type]
    unknown = sorted(set(data) - known)
    if unknown:
        raise ValidationError(
            f"Unknown {section} settings: {', '.join(unknown)}",
            fields=[f"{section}.{name}" for name in unknown],
        )
    try:
        return cls(**data)
    except TypeError as e:
        raise ValidationError(f"Invalid {section} settings: {e}") from e


def _vector(value: Any, size: int) -> bool:
    try:
        arr = np.asarray(value, dtype=float)
    except (TypeError, ValueError):
        return False
    return arr.shape == (size,) and bool(np.all(np.isfinite(arr)))


@dataclass
class ImuNoiseConfig:
    """IMU noise densities used by the preintegration covariance."""

    gyro_arw: float = MEMS_GYRO_ARW
    accel_vrw: float = MEMS_ACCEL_VRW
    gyro_bias_rw: float = MEMS_GYRO_BIAS_RW
    accel_bias_rw: float = MEMS_ACCEL_BIAS_RW
    max_gyro_bias: float = 0.1
    max_accel_bias: float = 1.0

    def __post_init__(self) -> None:
        errors = [f.name for f in fields(self) if not float(getattr(self, f.name)) > 0.0]
        _fail_if(errors, "imu_noise")


@dataclass
class CameraConfig:
    """Pinhole + radial-tangential intrinsics and camera-IMU extrinsics."""

    fx: float = 400.0
    fy: float = 400.0
    cx: float = 320.0
    cy: float = 240.0
    width: int = 640
    height: int = 480
    k1: float = 0.0
    k2: float = 0.0
    p1: float = 0.0
    p2: float = 0.0
    q_bc: List[float] = field(default_factory=lambda: list(FORWARD_CAMERA_Q_BC))
    p_bc: List[float] = field(default_factory=lambda: [0.2, 0.0, -0.1])
    time_offset: float = 0.0

    def __post_init__(self) -> None:
        errors = []
        if not self.fx > 0:
            errors.append("fx")
        if not self.fy > 0:
            errors.append("fy")
        if not self.width > 0:
            errors.append("width")
        if not self.height > 0:
            errors.append("height")
        if not 0 <= self.cx < self.width:
            errors.append("cx")
        if not 0 <= self.cy < self.height:
            errors.append("cy")
        if not _vector(self.q_bc, 4) or abs(np.linalg.norm(self.q_bc) - 1.0) > 1e-6:
            errors.append("q_bc")
        if not _vector(self.p_bc, 3):
            errors.append("p_bc")
        _fail_if(errors, "camera")


@dataclass
class GnssConfig:
    lever_arm: List[float] = field(default_factory=lambda: [0.0, 0.0, 0.0])

    def __post_init__(self) -> None:
        _fail_if([] if _vector(self.lever_arm, 3) else ["lever_arm"], "gnss")


@dataclass
class VisualConfig:
    """Front-end gates; defaults are the documented thresholds."""

    keyframe_parallax: float = 20.0
    min_triangulation_parallax: float = 10.0
    min_depth: float = 1.0
    max_depth: float = 100.0
    observation_interval: float = 0.5
    gate_radius: float = 30.0
    ins_aided_gating: bool = True
    pixel_sigma: float = 1.5
    undistort_iterations: int = 20
    undistort_tolerance: float = 1e-8

    def __post_init__(self) -> None:
        errors = [
            name
            for name in (
                "keyframe_parallax",
                "min_triangulation_parallax",
                "min_depth",
                "max_depth",
                "observation_interval",
                "gate_radius",
                "pixel_sigma",
                "undistort_iterations",
                "undistort_tolerance",
            )
            if not getattr(self, name) > 0
        ]
        if self.max_depth <= self.min_depth:
            errors.append("max_depth")
        _fail_if(errors, "visual")


@dataclass
class EstimatorConfig:
    window_capacity: int = 10
    chi2_confidence: float = 0.95
    max_reprojection_error: float = 4.5
    max_landmark_error: float = 1.5
    huber: bool = True
    huber_delta: float = 1.0
    max_iterations: int = 10
    use_schur: bool = True
    estimate_extrinsics: bool = False
    gnss_epoch: float = 1.0
    compensate_earth_rotation: bool = True
    reintegrate_gyro_bias: float = 1e-3
    reintegrate_accel_bias: float = 1e-2
    max_imu_gap: float = 0.05

    def __post_init__(self) -> None:
        errors = [
            name
            for name in (
                "max_reprojection_error",
                "max_landmark_error",
                "huber_delta",
                "max_iterations",
                "gnss_epoch",
                "reintegrate_gyro_bias",
                "reintegrate_accel_bias",
                "max_imu_gap",
            )
            if not getattr(self, name) > 0
        ]
        if self.window_capacity < 2:
            errors.append("window_capacity")
        if not 0.0 < self.chi2_confidence < 1.0:
            errors.append("chi2_confidence")
        _fail_if(errors, "estimator")


@dataclass
class InitializerConfig:
    init_duration: float = 5.0
    min_init_speed: float = 0.5
    initial_heading_deg: Optional[float] = None
    zupt_window: float = 0.5
    zupt_gyro_std: float = 3e-3
    zupt_accel_std: float = 0.05
    zupt_speed: float = 0.1
    timeout: float = 60.0
    velocity_sigma: float = 0.1
    roll_pitch_sigma_deg: float = 0.5
    yaw_sigma_deg: float = 5.0
    gyro_bias_sigma: float = 1e-3
    accel_bias_sigma: float = 0.05

    def __post_init__(self) -> None:
        errors = [
            f.name
            for f in fields(self)
            if f.name != "initial_heading_deg" and not getattr(self, f.name) > 0
        ]
        if self.timeout < self.init_duration:
            errors.append("timeout")
        _fail_if(errors, "initializer")


@dataclass
class DatasetConfig:
    """Dataset file names, relative to ``dir`` (itself relative to the config file)."""

    dir: str = "."
    imu: str = "imu.csv"
    features: str = "features.csv"
    gnss: str = "gnss.csv"
    camera: str = "camera.yaml"
    truth: Optional[str] = "truth.txt"

    def resolve(self, base_dir: Optional[Path] = None) -> Dict[str, Path]:
        root = Path(self.dir).expanduser()
        if base_dir is not None and not root.is_absolute():
            root = base_dir / root
        paths = {
            "imu": root / self.imu,
            "features": root / self.features,
            "gnss": root / self.gnss,
            "camera": root / self.camera,
        }
        if self.truth:
            paths["truth"] = root / self.truth
        return paths


_RUN_SECTIONS: Dict[str, Type[Any]] = {
    "dataset": DatasetConfig,
    "imu_noise": ImuNoiseConfig,
    "camera": CameraConfig,
    "gnss": GnssConfig,
    "visual": VisualConfig,
    "estimator": EstimatorConfig,
    "initializer": InitializerConfig,
}


@dataclass
class RunConfig:
    """Everything the estimator pipeline needs for one run."""

    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    imu_noise: ImuNoiseConfig = field(default_factory=ImuNoiseConfig)
    camera: Optional[CameraConfig] = None
    gnss: GnssConfig = field(default_factory=GnssConfig)
    visual: VisualConfig = field(default_factory=VisualConfig)
    estimator: EstimatorConfig = field(default_factory=EstimatorConfig)
    initializer: InitializerConfig = field(default_factory=InitializerConfig)
    mode: str = "gvins"
    seed: int = 0
    output_dir: str = "out"
    log_level: str = "INFO"
    log_format: str = "text"
    base_dir: Optional[Path] = None

    def __post_init__(self) -> None:
        errors = []
        if self.mode not in MODES:
            errors.append("mode")
        if self.log_format not in ("text", "json"):
            errors.append("log_format")
        _fail_if(errors, "run")

    @classmethod
    def from_dict(
        cls, data: Dict[str, Any], base_dir: Optional[Path] = None
    ) -> "RunConfig":
        data = dict(data)
        scalars = {"mode", "seed", "output_dir", "log_level", "log_format"}
        unknown = sorted(set(data) - scalars - set(_RUN_SECTIONS))
        if unknown:
            raise ValidationError(
                f"Unknown run settings: {', '.join(unknown)}", fields=unknown
            )
        kwargs: Dict[str, Any] = {k: data[k] for k in scalars if k in data}
        for name, section_cls in _RUN_SECTIONS.items():
            if name in data and data[name] is not None:
                kwargs[name] = _from_mapping(section_cls, data[name], name)
        return cls(base_dir=base_dir, **kwargs)

    def to_dict(self) -> Dict[str, Any]:
        result: Dict[str, Any] = {
            name: asdict(getattr(self, name))
            for name in _RUN_SECTIONS
            if getattr(self, name) is not None
        }
        result.update(
            mode=self.mode,
            seed=self.seed,
            output_dir=self.output_dir,
            log_level=self.log_level,
            log_format=self.log_format,
        )
        return result

    def dataset_paths(self) -> Dict[str, Path]:
        return self.dataset.resolve(self.base_dir)

    def output_path(self) -> Path:
        out = Path(self.output_dir).expanduser()
        if self.base_dir is not None and not out.is_absolute():
            out = self.base_dir / out
        return out


@dataclass
class TrajectorySpec:
    """Ground-truth motion: a static segment, a speed ramp, then the shape."""

    shape: str = "figure_eight"
    speed: float = 1.5
    duration: float = 60.0
    origin_lat_deg: float = 30.5
    origin_lon_deg: float = 114.3
    origin_height: float = 20.0
    heading_deg: float = 0.0
    static_duration: float = 2.0
    ramp_duration: float = 2.0
    radius: float = 20.0
    size: float = 40.0
    waypoints: List[List[float]] = field(
        default_factory=lambda: [[0.0, 0.0], [30.0, 10.0], [50.0, 40.0], [30.0, 70.0]]
    )
    pitch_amplitude_deg: float = 0.0
    roll_amplitude_deg: float = 0.0
    excitation_hz: float = 0.2

    def __post_init__(self) -> None:
        errors = []
        if self.shape not in SHAPES:
            errors.append("shape")
        for name in ("speed", "duration", "radius", "size", "excitation_hz"):
            if not getattr(self, name) > 0:
                errors.append(name)
        if self.static_duration < 0:
            errors.append("static_duration")
        if self.ramp_duration < 0:
            errors.append("ramp_duration")
        if self.duration <= self.static_duration + self.ramp_duration:
            errors.append("duration")
        if not abs(self.origin_lat_deg) <= 90 or not abs(self.origin_lon_deg) <= 180:
            errors.append("origin")
        if self.shape == "waypoint_spline":
            pts = np.asarray(self.waypoints, dtype=float)
            if pts.ndim != 2 or pts.shape[0] < 3 or pts.shape[1] != 2:
                errors.append("waypoints")
        for name in ("pitch_amplitude_deg", "roll_amplitude_deg"):
            if abs(getattr(self, name)) >= 30:
                errors.append(name)
        _fail_if(sorted(set(errors)), "trajectory")

    @property
    def origin(self) -> GeodeticPosition:
        return GeodeticPosition.from_degrees(
            self.origin_lat_deg, self.origin_lon_deg, self.origin_height
        )


@dataclass
class NoiseSpec:
    """Sensor noise for synthesis; ``preset`` picks defaults before overrides."""

    gyro_arw: float = MEMS_GYRO_ARW
    accel_vrw: float = MEMS_ACCEL_VRW
    gyro_bias_rw: float = MEMS_GYRO_BIAS_RW
    accel_bias_rw: float = MEMS_ACCEL_BIAS_RW
    gyro_bias_sigma: float = 1e-4
    accel_bias_sigma: float = 0.01
    gyro_bias: Optional[List[float]] = None
    accel_bias: Optional[List[float]] = None
    pixel_sigma: float = 1.5
    outlier_fraction: float = 0.0
    outlier_magnitude: Optional[float] = None
    gnss_sigma: List[float] = field(default_factory=lambda: [0.02, 0.02, 0.04])
    gnss_dropouts: List[List[float]] = field(default_factory=list)

    def __post_init__(self) -> None:
        errors = [
            name
            for name in (
                "gyro_arw",
                "accel_vrw",
                "gyro_bias_rw",
                "accel_bias_rw",
                "gyro_bias_sigma",
                "accel_bias_sigma",
                "pixel_sigma",
            )
            if not getattr(self, name) >= 0
        ]
        if not 0.0 <= self.outlier_fraction < 1.0:
            errors.append("outlier_fraction")
        if self.outlier_magnitude is not None and not self.outlier_magnitude > 0:
            errors.append("outlier_magnitude")
        if not _vector(self.gnss_sigma, 3) or min(self.gnss_sigma) < 0:
            errors.append("gnss_sigma")
        if self.gyro_bias is not None and not _vector(self.gyro_bias, 3):
            errors.append("gyro_bias")
        if self.accel_bias is not None and not _vector(self.accel_bias, 3):
            errors.append("accel_bias")
        for interval in self.gnss_dropouts:
            if len(interval) != 2 or interval[1] < interval[0]:
                errors.append("gnss_dropouts")
                break
        _fail_if(errors, "noise")

    @classmethod
    def noise_free(cls) -> "NoiseSpec":
        return cls(
            gyro_arw=0.0,
            accel_vrw=0.0,
            gyro_bias_rw=0.0,
            accel_bias_rw=0.0,
            gyro_bias_sigma=0.0,
            accel_bias_sigma=0.0,
            pixel_sigma=0.0,
            gnss_sigma=[0.0, 0.0, 0.0],
        )

    @classmethod
    def from_dict(cls, data: Optional[Dict[str, Any]]) -> "NoiseSpec":
        data = dict(data or {})
        preset = data.pop("preset", "mems")
        if preset not in NOISE_PRESETS:
            raise ValidationError(
                f"Unknown noise preset: {preset}", fields=["noise.preset"]
            )
        base = asdict(cls.noise_free()) if preset == "none" else {}
        base.update(data)
        return _from_mapping(cls, base, "noise")

    @property
    def is_noise_free(self) -> bool:
        return (
            self.gyro_arw == 0
            and self.accel_vrw == 0
            and self.pixel_sigma == 0
            and max(self.gnss_sigma) == 0
        )


@dataclass
class RatesConfig:
    imu: float = 200.0
    camera: float = 10.0
    gnss: float = 1.0

    def __post_init__(self) -> None:
        errors = [f.name for f in fields(self) if not getattr(self, f.name) > 0]
        _fail_if(errors, "rates")


@dataclass
class LandmarkFieldConfig:
    """Landmarks scattered in a corridor around the path."""

    density: float = 6.0
    corridor_half_width: float = 25.0
    clear_half_width: float = 3.0
    min_height: float = -6.0
    max_height: float = 1.5
    min_depth: float = 2.0
    max_depth: float = 60.0

    def __post_init__(self) -> None:
        errors = []
        if not self.density > 0:
            errors.append("density")
        if not self.corridor_half_width > self.clear_half_width >= 0:
            errors.append("corridor_half_width")
        if not self.max_height > self.min_height:
            errors.append("max_height")
        if not self.max_depth > self.min_depth > 0:
            errors.append("max_depth")
        _fail_if(errors, "landmarks")


@dataclass
class FeatureBudgetConfig:
    max_features: int = 150
    grid_size: float = 200.0
    min_separation: float = 15.0

    def __post_init__(self) -> None:
        errors = [f.name for f in fields(self) if not getattr(self, f.name) > 0]
        _fail_if(errors, "features")


@dataclass
class SimulationConfig:
    trajectory: TrajectorySpec = field(default_factory=TrajectorySpec)
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    rates: RatesConfig = field(default_factory=RatesConfig)
    landmarks: LandmarkFieldConfig = field(default_factory=LandmarkFieldConfig)
    features: FeatureBudgetConfig = field(default_factory=FeatureBudgetConfig)
    camera: CameraConfig = field(default_factory=CameraConfig)
    gnss: GnssConfig = field(default_factory=GnssConfig)
    seed: int = 0

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "SimulationConfig":
        data = dict(data)
        sections: Dict[str, Type[Any]] = {
            "trajectory": TrajectorySpec,
            "rates": RatesConfig,
            "landmarks": LandmarkFieldConfig,
            "features": FeatureBudgetConfig,
            "camera": CameraConfig,
            "gnss": GnssConfig,
        }
        unknown = sorted(set(data) - set(sections) - {"noise", "seed"})
        if unknown:
            raise ValidationError(
                f"Unknown simulation settings: {', '.join(unknown)}", fields=unknown
            )
        kwargs: Dict[str, Any] = {
            name: _from_mapping(section_cls, data.get(name), name)
            for name, section_cls in sections.items()
        }
        kwargs["noise"] = NoiseSpec.from_dict(data.get("noise"))
        if "seed" in data:
            kwargs["seed"] = int(data["seed"])
        return cls(**kwargs)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


def _deep_merge(base: Dict[str, Any], override: Dict[str, Any]) -> Dict[str, Any]:
    merged = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _deep_merge(merged[key], value)
        else:
            merged[key] = copy.deepcopy(value)
    return merged


def load_yaml(config_path: Path, _chain: FrozenSet[Path] = frozenset()) -> Dict[str, Any]:
    """
    Load a YAML mapping and resolve its ``include:`` entries.

    Args:
        config_path: Path to the YAML file

    Returns:
        Merged mapping (without the ``include`` key)

    Raises:
        ConfigError: If a file is missing, unreadable, not a mapping, or
            includes itself
    """
    config_path = Path(config_path).expanduser().resolve()
    if config_path in _chain:
        raise ConfigError(f"Include cycle through {config_path}", path=str(config_path))
    if not config_path.exists():
        raise ConfigError(f"Config file does not exist: {config_path}")

    try:
        content = config_path.read_text(encoding="utf-8")
    except Exception as e:
        raise ConfigError(f"Failed to read config file: {e}") from e

    try:
        data = yaml.safe_load(content)
    except yaml.YAMLError as e:
        raise ConfigError(f"Failed to parse YAML config: {e}") from e

    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError("Config file must contain a mapping/object at root level")

    includes = data.pop("include", None) or []
    if isinstance(includes, str):
        includes = [includes]

    merged: Dict[str, Any] = {}
    for include in includes:
        included = load_yaml(config_path.parent / include, _chain | {config_path})
        merged = _deep_merge(merged, included)
    return _deep_merge(merged, data)


def load_run_config(config_path: Path) -> RunConfig:
    """
    Load a run configuration; relative paths resolve against its directory.

    Raises:
        ConfigError: If the file cannot be loaded
        ValidationError: If settings are unknown or out of range
    """
    data = load_yaml(config_path)
    return RunConfig.from_dict(data, base_dir=Path(config_path).expanduser().resolve().parent)


def load_camera_config(config_path: Path) -> CameraConfig:
    data = load_yaml(config_path)
    return _from_mapping(CameraConfig, data, "camera")


def load_simulation_config(config_path: Path) -> SimulationConfig:
    """Load a simulation spec file."""
    return SimulationConfig.from_dict(load_yaml(config_path))


def create_default_run_config() -> RunConfig:
    """Create a default run configuration for testing/fallback."""
    return RunConfig()


def dump_yaml(data: Dict[str, Any], path: Path) -> None:
    path.write_text(yaml.safe_dump(data, sort_keys=False), encoding="utf-8")
