"""
Trajectory accuracy metrics.

Trajectories are TUM files (``t x y z qx qy qz qw``). An estimate is
associated with the truth by nearest timestamp, optionally aligned, and
scored with absolute errors (ATE/ARE, RMS over poses) and relative errors
(RTE/RRE, RMS over sub-sequences of fixed truth path length).
"""

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.spatial.transform import Rotation

from .errors import AssociationError, ValidationError, WriteError
from .logging import get_logger

logger = get_logger(__name__)

TUM_COLUMNS = ["t", "x", "y", "z", "qx", "qy", "qz", "qw"]
TUM_FLOAT_FORMAT = "%.15g"
ALIGNMENT_MODES = ("none", "yaw_only", "se3")
DEFAULT_LENGTHS = (50.0, 100.0, 150.0, 200.0)
DEFAULT_MAX_DT = 0.05
MIN_PAIRS = 3


@dataclass
class Trajectory:
    """Timestamped poses; q is scalar-first and maps body to world."""

    t: np.ndarray
    p: np.ndarray
    q: np.ndarray

    def __post_init__(self) -> None:
        self.t = np.asarray(self.t, dtype=float).reshape(-1)
        self.p = np.asarray(self.p, dtype=float).reshape(-1, 3)
        self.q = np.asarray(self.q, dtype=float).reshape(-1, 4)
        if not (len(self.t) == len(self.p) == len(self.q)):
            raise ValidationError("Trajectory arrays differ in length", fields=["t", "p", "q"])

    def __len__(self) -> int:
        return len(self.t)

    def rotations(self) -> Rotation:
        return Rotation.from_quat(self.q[:, [1, 2, 3, 0]])

    def sorted(self) -> "Trajectory":
        order = np.argsort(self.t, kind="stable")
        return Trajectory(self.t[order], self.p[order], self.q[order])

    def path_distance(self) -> np.ndarray:
        """Accumulated travelled distance at each pose."""
        steps = np.linalg.norm(np.diff(self.p, axis=0), axis=1)
        return np.concatenate([[0.0], np.cumsum(steps)])


def tum_frame(t: np.ndarray, p: np.ndarray, q: np.ndarray) -> pd.DataFrame:
    """TUM rows ``t x y z qx qy qz qw`` from scalar-first quaternions."""
    q = np.asarray(q, dtype=float).reshape(-1, 4)
    data = np.column_stack([t, np.asarray(p).reshape(-1, 3), q[:, 1], q[:, 2], q[:, 3], q[:, 0]])
    return pd.DataFrame(data, columns=TUM_COLUMNS)


def write_tum(frame: pd.DataFrame, path: Path) -> None:
    frame.to_csv(path, sep=" ", header=False, index=False, float_format=TUM_FLOAT_FORMAT)


def save_trajectory(traj: Trajectory, path: Path) -> None:
    """
    Raises:
        WriteError: If the file cannot be written
    """
    try:
        write_tum(tum_frame(traj.t, traj.p, traj.q), Path(path))
    except OSError as e:
        raise WriteError(f"Failed to write trajectory: {e}", file_path=str(path)) from e


def read_tum(path: Path) -> Trajectory:
    """
    Read a TUM trajectory; rows are returned in time order.

    Raises:
        ValidationError: If the file is missing or not eight numeric columns
    """
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"Trajectory file not found: {path}", file_path=str(path))
    try:
        frame = pd.read_csv(path, sep=r"\s+", header=None, comment="#", dtype=float)
    except (pd.errors.ParserError, pd.errors.EmptyDataError, ValueError) as e:
        raise ValidationError(f"Cannot parse {path.name}: {e}", file_path=str(path)) from e
    if frame.shape[1] != len(TUM_COLUMNS):
        raise ValidationError(
            f"{path.name} has {frame.shape[1]} columns, expected {len(TUM_COLUMNS)}",
            file_path=str(path),
        )
    frame.columns = TUM_COLUMNS
    q = frame[["qw", "qx", "qy", "qz"]].to_numpy()
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    traj = Trajectory(frame["t"].to_numpy(), frame[["x", "y", "z"]].to_numpy(), q)
    return traj.sorted()


@dataclass
class PosePairs:
    """Time-associated estimate/truth poses."""

    est: Trajectory
    truth: Trajectory

    def __len__(self) -> int:
        return len(self.est)


def associate(
    est: Trajectory, truth: Trajectory, max_dt: float = DEFAULT_MAX_DT
) -> PosePairs:
    """
    Pair every estimated pose with the nearest truth pose within max_dt.

    Raises:
        AssociationError: If fewer than three pairs are found
    """
    est = est.sorted()
    truth = truth.sorted()
    if len(truth) == 0 or len(est) == 0:
        raise AssociationError("Empty trajectory", pairs=0)
    idx = np.searchsorted(truth.t, est.t)
    lo = np.clip(idx - 1, 0, len(truth) - 1)
    hi = np.clip(idx, 0, len(truth) - 1)
    nearest = np.where(np.abs(truth.t[lo] - est.t) <= np.abs(truth.t[hi] - est.t), lo, hi)
    keep = np.abs(truth.t[nearest] - est.t) <= max_dt
    count = int(np.count_nonzero(keep))
    if count < MIN_PAIRS:
        raise AssociationError(
            f"Only {count} pose pairs within {max_dt} s, need {MIN_PAIRS}", pairs=count
        )
    matched = nearest[keep]
    return PosePairs(
        Trajectory(est.t[keep], est.p[keep], est.q[keep]),
        Trajectory(truth.t[matched], truth.p[matched], truth.q[matched]),
    )


@dataclass
class Alignment:
    """Rigid transform applied to the estimate: p' = R p + t."""

    mode: str
    R: np.ndarray = field(default_factory=lambda: np.eye(3))
    t: np.ndarray = field(default_factory=lambda: np.zeros(3))

    @property
    def yaw_deg(self) -> float:
        return float(np.degrees(np.arctan2(self.R[1, 0], self.R[0, 0])))

    def apply(self, traj: Trajectory) -> Trajectory:
        p = traj.p @ self.R.T + self.t
        rot = Rotation.from_matrix(self.R) * traj.rotations()
        q = rot.as_quat()[:, [3, 0, 1, 2]]
        return Trajectory(traj.t.copy(), p, q)


def _yaw_alignment(src: np.ndarray, dst: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    mu_s = src.mean(axis=0)
    mu_d = dst.mean(axis=0)
    a = src - mu_s
    b = dst - mu_d
    yaw = np.arctan2(np.sum(a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0]), np.sum(a[:, :2] * b[:, :2]))
    c, s = np.cos(yaw), np.sin(yaw)
    R = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    return R, mu_d - R @ mu_s


def _rigid_alignment(src: np.ndarray, dst: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    mu_s = src.mean(axis=0)
    mu_d = dst.mean(axis=0)
    cov = (dst - mu_d).T @ (src - mu_s) / len(src)
    U, _, Vt = np.linalg.svd(cov)
    S = np.eye(3)
    if np.linalg.det(U) * np.linalg.det(Vt) < 0:
        S[2, 2] = -1.0
    R = U @ S @ Vt
    return R, mu_d - R @ mu_s


def align(pairs: PosePairs, mode: str = "none") -> Tuple[Trajectory, Alignment]:
    """
    Least-squares alignment of the estimate onto the truth positions.

    ``none`` keeps the estimate as is (GNSS runs share the absolute frame),
    ``yaw_only`` fits a rotation about the vertical plus a translation
    (the unobservable directions of visual-inertial runs) and ``se3`` fits a
    full rigid transform.

    Raises:
        ValidationError: For an unknown mode
        AssociationError: If fewer than three pairs are given
    """
    if mode not in ALIGNMENT_MODES:
        raise ValidationError(f"Unknown alignment mode: {mode}", fields=["mode"])
    if len(pairs) < MIN_PAIRS:
        raise AssociationError(f"Need {MIN_PAIRS} pose pairs to align", pairs=len(pairs))
    if mode == "none":
        alignment = Alignment(mode)
    elif mode == "yaw_only":
        alignment = Alignment(mode, *_yaw_alignment(pairs.est.p, pairs.truth.p))
    else:
        alignment = Alignment(mode, *_rigid_alignment(pairs.est.p, pairs.truth.p))
    return alignment.apply(pairs.est), alignment


def absolute_errors(est: Trajectory, truth: Trajectory) -> Tuple[float, float]:
    """
    RMS position error (m) and RMS rotation-angle error (deg) of paired poses.
    """
    dp = np.linalg.norm(est.p - truth.p, axis=1)
    angles = (truth.rotations().inv() * est.rotations()).magnitude()
    ate = float(np.sqrt(np.mean(dp**2)))
    are = float(np.degrees(np.sqrt(np.mean(angles**2))))
    return ate, are


@dataclass
class RelativeError:
    """Relative errors over sub-sequences of one truth path length."""

    length: float
    rte: Optional[float]
    rre: Optional[float]
    segments: int

    @property
    def available(self) -> bool:
        return self.segments > 0


def _relative_pose(rot: Rotation, p: np.ndarray, i: int, j: int) -> Tuple[Rotation, np.ndarray]:
    Ri = rot[i]
    return Ri.inv() * rot[j], Ri.inv().apply(p[j] - p[i])


def segment_starts(distance: np.ndarray, step: float = 1.0) -> List[int]:
    """Pose indices starting a new sub-sequence every ``step`` metres of path."""
    starts = []
    next_distance = 0.0
    for k, d in enumerate(distance):
        if d >= next_distance - 1e-9:
            starts.append(k)
            next_distance = d + step
    return starts


def relative_errors(
    est: Trajectory,
    truth: Trajectory,
    lengths: Sequence[float] = DEFAULT_LENGTHS,
    step: float = 1.0,
) -> List[RelativeError]:
    """
    RTE (% of travelled distance) and RRE (deg) per sub-sequence length.

    Sub-sequences start every ``step`` metres of truth path and end at the
    first pose whose accumulated truth distance reaches the start plus the
    length. The translation error is a percentage of the truth path distance
    actually travelled between the two poses. A length longer than the
    trajectory yields an unavailable row.
    """
    distance = truth.path_distance()
    starts = segment_starts(distance, step)
    rot_e = est.rotations()
    rot_t = truth.rotations()
    results = []
    for length in lengths:
        t_err = []
        r_err = []
        for i in starts:
            j = int(np.searchsorted(distance, distance[i] + length - 1e-9))
            if j >= len(distance):
                break
            dR_t, dp_t = _relative_pose(rot_t, truth.p, i, j)
            dR_e, dp_e = _relative_pose(rot_e, est.p, i, j)
            travelled = distance[j] - distance[i]
            t_err.append(np.linalg.norm(dR_t.inv().apply(dp_e - dp_t)) / travelled * 100.0)
            r_err.append(np.degrees((dR_t.inv() * dR_e).magnitude()))
        if t_err:
            results.append(
                RelativeError(
                    float(length),
                    float(np.sqrt(np.mean(np.square(t_err)))),
                    float(np.sqrt(np.mean(np.square(r_err)))),
                    len(t_err),
                )
            )
        else:
            results.append(RelativeError(float(length), None, None, 0))
    return results


@dataclass
class MetricReport:
    mode: str
    pairs: int
    ate: float
    are: float
    relative: List[RelativeError]
    yaw_correction_deg: float = 0.0

    def to_dict(self) -> Dict[str, Any]:
        return {
            "alignment": self.mode,
            "pairs": self.pairs,
            "ate_m": self.ate,
            "are_deg": self.are,
            "yaw_correction_deg": self.yaw_correction_deg,
            "relative": [
                {**asdict(row), "available": row.available} for row in self.relative
            ],
        }


def evaluate(
    est: Trajectory,
    truth: Trajectory,
    mode: str = "none",
    lengths: Sequence[float] = DEFAULT_LENGTHS,
    max_dt: float = DEFAULT_MAX_DT,
) -> Tuple[MetricReport, Trajectory]:
    """
    Associate, align and score an estimated trajectory.

    Returns:
        (report, aligned estimate)
    """
    pairs = associate(est, truth, max_dt)
    aligned, alignment = align(pairs, mode)
    ate, are = absolute_errors(aligned, pairs.truth)
    relative = relative_errors(aligned, pairs.truth, lengths)
    report = MetricReport(mode, len(pairs), ate, are, relative, alignment.yaw_deg)
    logger.info(
        "Evaluated trajectory",
        extra={"operation": "evaluate", "mode": mode, "pairs": len(pairs), "ate": ate, "are": are},
    )
    return report, aligned


_REPORT_NUMBERS = ("ate_m", "are_deg", "yaw_correction_deg")
_ROW_KEYS = ("length", "rte", "rre", "segments", "available")


def validate_report_dict(data: Dict[str, Any]) -> List[str]:
    """
    Check a metric report mapping against the report schema.

    Returns:
        Names of the offending fields (empty when valid)
    """
    errors = []
    if data.get("alignment") not in ALIGNMENT_MODES:
        errors.append("alignment")
    if not isinstance(data.get("pairs"), int) or data["pairs"] < MIN_PAIRS:
        errors.append("pairs")
    for key in _REPORT_NUMBERS:
        value = data.get(key)
        if not isinstance(value, (int, float)) or (key != "yaw_correction_deg" and value < 0):
            errors.append(key)
    rows = data.get("relative")
    if not isinstance(rows, list):
        errors.append("relative")
        return errors
    for k, row in enumerate(rows):
        if not isinstance(row, dict) or set(row) != set(_ROW_KEYS):
            errors.append(f"relative[{k}]")
            continue
        if row["available"]:
            bad = any(
                not isinstance(row[name], (int, float)) or row[name] < 0 for name in ("rte", "rre")
            )
        else:
            bad = row["rte"] is not None or row["rre"] is not None
        if bad or row["available"] != (row["segments"] > 0):
            errors.append(f"relative[{k}]")
    return errors


def write_report(report: MetricReport, path: Path) -> None:
    """
    Raises:
        WriteError: If the file cannot be written
    """
    try:
        Path(path).write_text(
            json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )
    except OSError as e:
        raise WriteError(f"Failed to write report: {e}", file_path=str(path)) from e


def read_report(path: Path) -> Dict[str, Any]:
    """
    Raises:
        ValidationError: If the file is not a valid metric report
    """
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as e:
        raise ValidationError(f"Cannot read report: {e}", file_path=str(path)) from e
    errors = validate_report_dict(data) if isinstance(data, dict) else ["report"]
    if errors:
        raise ValidationError(
            f"Invalid report fields: {', '.join(errors)}", fields=errors, file_path=str(path)
        )
    return data
