"""
Dataset directory readers.

A dataset holds ``imu.csv``, ``features.csv``, ``gnss.csv`` and
``camera.yaml`` (plus an optional truth trajectory). Missing files are
reported with a ValidationError naming the file.
"""

from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

from .config import CameraConfig, RunConfig, load_camera_config
from .errors import DivergenceError, InputError, ValidationError
from .factors import GnssFix
from .geodesy import GeodeticPosition
from .ins import ImuSample
from .logging import get_logger
from .visual import CameraModel, FeatureObservation

logger = get_logger(__name__)

IMU_COLUMNS = ["t", "gx", "gy", "gz", "ax", "ay", "az"]
FEATURE_COLUMNS = ["t", "frame_id", "feature_id", "u", "v"]
GNSS_COLUMNS = ["t", "lat_deg", "lon_deg", "h", "sigma_n", "sigma_e", "sigma_d", "valid"]


@dataclass
class CameraFrame:
    """All feature observations of one camera frame, keyed by feature id."""

    t: float
    frame_id: int
    observations: Dict[int, FeatureObservation]

    def unit_points(self) -> Dict[int, np.ndarray]:
        return {fid: obs.unit_plane for fid, obs in self.observations.items()}


@dataclass
class Dataset:
    imu: List[ImuSample]
    frames: List[CameraFrame]
    fixes: List[GnssFix]
    camera: CameraConfig
    truth_path: Optional[Path] = None


def _read_csv(path: Path, columns: Sequence[str]) -> pd.DataFrame:
    if not path.exists():
        raise ValidationError(f"Dataset file not found: {path}", file_path=str(path))
    try:
        frame = pd.read_csv(path)
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as e:
        raise ValidationError(f"Cannot parse {path.name}: {e}", file_path=str(path)) from e
    missing = [c for c in columns if c not in frame.columns]
    if missing:
        raise ValidationError(
            f"{path.name} is missing columns: {', '.join(missing)}",
            fields=missing,
            file_path=str(path),
        )
    return frame


def _check_monotonic(times: np.ndarray, name: str, strict: bool = True) -> None:
    if times.size < 2:
        return
    diffs = np.diff(times)
    bad = np.flatnonzero(diffs <= 0 if strict else diffs < 0)
    if bad.size:
        k = int(bad[0]) + 1
        raise InputError(
            f"Non-monotonic timestamp in {name} at row {k}: {times[k]} after {times[k - 1]}",
            t=float(times[k]),
        )


def read_imu(path: Path) -> List[ImuSample]:
    """
    Raises:
        ValidationError: If the file is missing or malformed
        InputError: If timestamps are not strictly increasing
    """
    frame = _read_csv(Path(path), IMU_COLUMNS)
    data = frame[IMU_COLUMNS].to_numpy(dtype=float)
    _check_monotonic(data[:, 0], Path(path).name)
    return [ImuSample(float(row[0]), row[1:4].copy(), row[4:7].copy()) for row in data]


def read_gnss(path: Path, lever_arm: Sequence[float]) -> List[GnssFix]:
    """GNSS fixes with the body-frame antenna lever arm attached."""
    frame = _read_csv(Path(path), GNSS_COLUMNS)
    _check_monotonic(frame["t"].to_numpy(dtype=float), Path(path).name)
    lever = np.asarray(lever_arm, dtype=float)
    fixes = []
    for row in frame.itertuples(index=False):
        sigma = np.array([row.sigma_n, row.sigma_e, row.sigma_d], dtype=float)
        valid = bool(int(row.valid)) and bool(np.all(sigma > 0))
        fixes.append(
            GnssFix(
                float(row.t),
                GeodeticPosition.from_degrees(row.lat_deg, row.lon_deg, row.h),
                sigma,
                lever.copy(),
                valid,
            )
        )
    return fixes


def read_features(
    path: Path,
    camera: CameraModel,
    time_offset: float = 0.0,
    iterations: int = 20,
    tolerance: float = 1e-8,
) -> List[CameraFrame]:
    """
    Feature tracks grouped into camera frames.

    The camera time offset is added to every timestamp; pixels are
    undistorted onto the unit plane. Observations whose undistortion does
    not converge are dropped.
    """
    frame = _read_csv(Path(path), FEATURE_COLUMNS)
    _check_monotonic(frame["t"].to_numpy(dtype=float), Path(path).name, strict=False)
    frames: List[CameraFrame] = []
    dropped = 0
    for (t, frame_id), group in frame.groupby(["t", "frame_id"], sort=False):
        pixels = group[["u", "v"]].to_numpy(dtype=float)
        if camera.has_distortion:
            units = []
            keep = []
            for k, px in enumerate(pixels):
                try:
                    units.append(camera.undistort(px, iterations, tolerance))
                    keep.append(k)
                except DivergenceError:
                    dropped += 1
            unit = np.array(units).reshape(-1, 2)
            pixels = pixels[keep]
            ids = group["feature_id"].to_numpy()[keep]
        else:
            unit = np.column_stack(
                [(pixels[:, 0] - camera.cx) / camera.fx, (pixels[:, 1] - camera.cy) / camera.fy]
            )
            ids = group["feature_id"].to_numpy()
        t_imu = float(t) + time_offset
        observations = {
            int(fid): FeatureObservation(int(frame_id), int(fid), t_imu, pixels[k], unit[k])
            for k, fid in enumerate(ids)
        }
        frames.append(CameraFrame(t_imu, int(frame_id), observations))
    if dropped:
        logger.warning(
            "Dropped observations whose undistortion did not converge",
            extra={"operation": "read_features", "dropped": dropped},
        )
    return frames


def load_dataset(config: RunConfig) -> Dataset:
    """
    Read every input of a run.

    The camera settings come from the run configuration when present,
    otherwise from the dataset's camera file.

    Raises:
        ValidationError: Naming the first missing or malformed file
    """
    paths = config.dataset_paths()
    for role in ("imu", "features", "gnss"):
        if not paths[role].exists():
            raise ValidationError(
                f"Missing {role} file: {paths[role]}", file_path=str(paths[role])
            )
    if config.camera is not None:
        camera_config = config.camera
    elif paths["camera"].exists():
        camera_config = load_camera_config(paths["camera"])
    else:
        raise ValidationError(
            f"Missing camera file: {paths['camera']}", file_path=str(paths["camera"])
        )

    camera = CameraModel.from_config(camera_config)
    truth = paths.get("truth")
    dataset = Dataset(
        imu=read_imu(paths["imu"]),
        frames=read_features(
            paths["features"],
            camera,
            camera_config.time_offset,
            config.visual.undistort_iterations,
            config.visual.undistort_tolerance,
        ),
        fixes=read_gnss(paths["gnss"], config.gnss.lever_arm),
        camera=camera_config,
        truth_path=truth if truth is not None and truth.exists() else None,
    )
    logger.info(
        "Loaded dataset",
        extra={
            "operation": "load_dataset",
            "imu_rows": len(dataset.imu),
            "frames": len(dataset.frames),
            "fixes": len(dataset.fixes),
        },
    )
    return dataset
