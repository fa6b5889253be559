"""
INS-aided visual geometry on feature tracks.

Landmarks are parameterized by the inverse depth of their first observing
keyframe (the anchor). The reprojection error is measured on the unit sphere
in the tangent plane of the predicted bearing, so it does not depend on the
predicted depth.
"""

import enum
from dataclasses import dataclass, field, replace
from typing import Dict, Iterable, List, Mapping, Optional, Set, Tuple

import numpy as np

from .config import CameraConfig, VisualConfig
from .errors import DegenerateGeometryError, DivergenceError, PredictionInvalidError
from .ins import NavState
from .rotation import (
    quat_conjugate,
    quat_exp,
    quat_log,
    quat_multiply,
    quat_normalize,
    quat_to_rotmat,
    skew_batch,
)

MIN_BEARING_NORM = 1e-6
PARALLEL_RAY_TOLERANCE = 1e-8
# Tangent basis switches its helper axis when the bearing is this close to z
TANGENT_AXIS_SWITCH = 0.9


@dataclass(frozen=True)
class CameraModel:
    """Pinhole camera with radial-tangential (k1, k2, p1, p2) distortion."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    k1: float = 0.0
    k2: float = 0.0
    p1: float = 0.0
    p2: float = 0.0

    @classmethod
    def from_config(cls, config: CameraConfig) -> "CameraModel":
        return cls(
            fx=config.fx,
            fy=config.fy,
            cx=config.cx,
            cy=config.cy,
            width=config.width,
            height=config.height,
            k1=config.k1,
            k2=config.k2,
            p1=config.p1,
            p2=config.p2,
        )

    @property
    def focal(self) -> float:
        return 0.5 * (self.fx + self.fy)

    @property
    def has_distortion(self) -> bool:
        return any(c != 0.0 for c in (self.k1, self.k2, self.p1, self.p2))

    def distort(self, xy: np.ndarray) -> np.ndarray:
        """Distorted unit-plane coordinates; accepts (2,) or (N, 2)."""
        xy = np.asarray(xy, dtype=float)
        x, y = xy[..., 0], xy[..., 1]
        r2 = x * x + y * y
        radial = 1.0 + self.k1 * r2 + self.k2 * r2 * r2
        xd = x * radial + 2.0 * self.p1 * x * y + self.p2 * (r2 + 2.0 * x * x)
        yd = y * radial + self.p1 * (r2 + 2.0 * y * y) + 2.0 * self.p2 * x * y
        return np.stack([xd, yd], axis=-1)

    def _distortion_jacobian(self, xy: np.ndarray) -> np.ndarray:
        x, y = xy
        r2 = x * x + y * y
        radial = 1.0 + self.k1 * r2 + self.k2 * r2 * r2
        d_radial = self.k1 + 2.0 * self.k2 * r2
        return np.array(
            [
                [
                    radial + 2.0 * x * x * d_radial + 2.0 * self.p1 * y + 6.0 * self.p2 * x,
                    2.0 * x * y * d_radial + 2.0 * self.p1 * x + 2.0 * self.p2 * y,
                ],
                [
                    2.0 * x * y * d_radial + 2.0 * self.p1 * x + 2.0 * self.p2 * y,
                    radial + 2.0 * y * y * d_radial + 6.0 * self.p1 * y + 2.0 * self.p2 * x,
                ],
            ]
        )

    def pinhole(self, xy: np.ndarray) -> np.ndarray:
        """Pixels of undistorted unit-plane points (no lens distortion)."""
        xy = np.asarray(xy, dtype=float)
        return np.stack(
            [self.fx * xy[..., 0] + self.cx, self.fy * xy[..., 1] + self.cy], axis=-1
        )

    def unit_plane_to_pixel(self, xy: np.ndarray) -> np.ndarray:
        return self.pinhole(self.distort(xy))

    def project(self, p_c: np.ndarray) -> np.ndarray:
        """
        Pixel of a camera-frame point.

        Raises:
            PredictionInvalidError: If the point is not in front of the camera
        """
        p_c = np.asarray(p_c, dtype=float)
        if p_c[2] <= 0.0:
            raise PredictionInvalidError(
                f"Point is behind the camera (z = {p_c[2]:.3f} m)", depth=float(p_c[2])
            )
        return self.unit_plane_to_pixel(p_c[:2] / p_c[2])

    def project_points(self, p_c: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Pixels of (N, 3) camera-frame points and the in-front mask."""
        p_c = np.asarray(p_c, dtype=float)
        in_front = p_c[:, 2] > 0.0
        z = np.where(in_front, p_c[:, 2], 1.0)
        pixels = self.unit_plane_to_pixel(p_c[:, :2] / z[:, None])
        return pixels, in_front

    def in_image(self, pixel: np.ndarray) -> np.ndarray:
        pixel = np.asarray(pixel, dtype=float)
        u, v = pixel[..., 0], pixel[..., 1]
        return (u >= 0.0) & (u < self.width) & (v >= 0.0) & (v < self.height)

    def undistort(
        self, pixel: np.ndarray, iterations: int = 20, tolerance: float = 1e-8
    ) -> np.ndarray:
        return undistort(self, pixel, iterations, tolerance)


def undistort(
    cam: CameraModel, pixel: np.ndarray, iterations: int = 20, tolerance: float = 1e-8
) -> np.ndarray:
    """
    Undistorted unit-plane point of a pixel.

    Newton iteration on the distortion model, starting from the distorted
    unit-plane point.

    Args:
        cam: Camera model
        pixel: (u, v) in pixels
        iterations: Iteration cap
        tolerance: Step-size tolerance on unit-plane coordinates

    Returns:
        (x, y) on the z = 1 plane

    Raises:
        DivergenceError: If the iteration does not converge
    """
    pixel = np.asarray(pixel, dtype=float)
    target = np.array([(pixel[0] - cam.cx) / cam.fx, (pixel[1] - cam.cy) / cam.fy])
    if not cam.has_distortion:
        return target
    xy = target.copy()
    for _ in range(iterations):
        err = cam.distort(xy) - target
        try:
            step = np.linalg.solve(cam._distortion_jacobian(xy), err)
        except np.linalg.LinAlgError as e:
            raise DivergenceError(
                f"Singular distortion Jacobian while undistorting {pixel.tolist()}"
            ) from e
        xy = xy - step
        if not np.all(np.isfinite(xy)):
            break
        if float(np.max(np.abs(step))) < tolerance:
            return xy
    raise DivergenceError(
        f"Undistortion of pixel {pixel.tolist()} did not converge", iterations=iterations
    )


@dataclass(frozen=True)
class Extrinsics:
    """Camera-to-body rotation q_bc and camera position p_bc in the body frame."""

    q_bc: np.ndarray
    p_bc: np.ndarray

    @classmethod
    def from_config(cls, config: CameraConfig) -> "Extrinsics":
        return cls(
            quat_normalize(np.asarray(config.q_bc, dtype=float)),
            np.asarray(config.p_bc, dtype=float),
        )

    @property
    def R_bc(self) -> np.ndarray:
        return quat_to_rotmat(self.q_bc)

    def oplus(self, delta: np.ndarray) -> "Extrinsics":
        """Apply a 6-dim error (δp, δθ)."""
        return Extrinsics(
            quat_normalize(quat_multiply(self.q_bc, quat_exp(delta[3:6]))),
            self.p_bc + delta[0:3],
        )

    def ominus(self, other: "Extrinsics") -> np.ndarray:
        return np.concatenate(
            [
                self.p_bc - other.p_bc,
                quat_log(quat_multiply(quat_conjugate(other.q_bc), self.q_bc)),
            ]
        )


@dataclass(frozen=True)
class FeatureObservation:
    frame_id: int
    feature_id: int
    t: float
    pixel: np.ndarray
    unit_plane: np.ndarray

    @property
    def bearing(self) -> np.ndarray:
        """Homogeneous unit-plane point [x, y, 1]."""
        return np.array([self.unit_plane[0], self.unit_plane[1], 1.0])


class LandmarkStatus(enum.Enum):
    CANDIDATE = "candidate"
    TRIANGULATED = "triangulated"
    OUTLIER = "outlier"


@dataclass
class Landmark:
    """
    Feature track with an inverse-depth parameter in its anchor keyframe.

    ``observations`` maps window node ids to observations in insertion
    (time) order. ``rejected_frames`` holds observations marked as outliers; they
    stay in the track but no longer feed the optimization.
    """

    id: int
    observations: Dict[int, FeatureObservation] = field(default_factory=dict)
    ref_keyframe: Optional[int] = None
    inv_depth: float = 0.0
    status: LandmarkStatus = LandmarkStatus.CANDIDATE
    rejected_frames: Set[int] = field(default_factory=set)

    @property
    def is_triangulated(self) -> bool:
        return self.status is LandmarkStatus.TRIANGULATED

    @property
    def anchor_observation(self) -> FeatureObservation:
        if self.ref_keyframe is None:
            raise DegenerateGeometryError(f"Landmark {self.id} has no anchor keyframe")
        return self.observations[self.ref_keyframe]

    @property
    def depth(self) -> float:
        return 1.0 / self.inv_depth if self.inv_depth > 0 else float("inf")

    def usable_frames(self, frame_ids: Iterable[int]) -> List[int]:
        """Observing frames among frame_ids that are not rejected, in track order."""
        wanted = set(frame_ids)
        return [
            fid
            for fid in self.observations
            if fid in wanted and fid not in self.rejected_frames
        ]

    def add_observation(self, node_id: int, obs: FeatureObservation) -> None:
        self.observations[node_id] = obs

    def remove_frame(self, frame_id: int) -> None:
        self.observations.pop(frame_id, None)
        self.rejected_frames.discard(frame_id)


class KeyframeDecision(enum.Enum):
    KEYFRAME = "keyframe"
    OBSERVATION_FRAME = "observation_frame"
    SKIP = "skip"


def camera_pose(state: NavState, ext: Extrinsics) -> Tuple[np.ndarray, np.ndarray]:
    """World-frame rotation and position of the camera."""
    R = state.R
    return R @ ext.R_bc, state.p + R @ ext.p_bc


def world_to_camera(p_w: np.ndarray, state: NavState, ext: Extrinsics) -> np.ndarray:
    p_b = state.R.T @ (np.asarray(p_w) - state.p)
    return ext.R_bc.T @ (p_b - ext.p_bc)


def camera_to_world(p_c: np.ndarray, state: NavState, ext: Extrinsics) -> np.ndarray:
    return state.R @ (ext.R_bc @ np.asarray(p_c) + ext.p_bc) + state.p


def relative_camera_rotation(
    pose_from: NavState, pose_to: NavState, ext: Extrinsics
) -> np.ndarray:
    """Rotation taking camera-frame vectors at pose_from into the camera frame at pose_to."""
    R_bc = ext.R_bc
    return R_bc.T @ pose_to.R.T @ pose_from.R @ R_bc


def landmark_world_position(
    lm: Landmark, anchor_pose: NavState, ext: Extrinsics
) -> np.ndarray:
    """World position of a triangulated landmark."""
    if lm.inv_depth <= 0.0:
        raise DegenerateGeometryError(f"Landmark {lm.id} has no positive inverse depth")
    return camera_to_world(lm.anchor_observation.bearing / lm.inv_depth, anchor_pose, ext)


def predict_observation(
    prior_pose: NavState,
    ext: Extrinsics,
    lm: Landmark,
    cam: CameraModel,
    anchor_pose: NavState,
) -> np.ndarray:
    """
    Predicted pixel of a triangulated landmark at the prior pose.

    Raises:
        PredictionInvalidError: If the landmark is behind the camera
    """
    p_w = landmark_world_position(lm, anchor_pose, ext)
    return cam.project(world_to_camera(p_w, prior_pose, ext))


def gate_observation(
    predicted_pixel: np.ndarray, measured_pixel: np.ndarray, radius: float = 30.0
) -> bool:
    """True when the measured pixel lies within radius of the prediction."""
    return bool(np.linalg.norm(np.asarray(measured_pixel) - predicted_pixel) <= radius)


def compensated_parallax(
    frame_unit: np.ndarray,
    keyframe_unit: np.ndarray,
    relative_rotation: np.ndarray,
    cam: CameraModel,
) -> float:
    """
    Pixel displacement with the relative rotation removed.

    The keyframe bearing is rotated into the current camera frame and
    compared with the current observation, both mapped through the pinhole
    intrinsics.

    Args:
        frame_unit: Current observation on the unit plane
        keyframe_unit: Keyframe observation of the same feature
        relative_rotation: Keyframe-camera to current-camera rotation prior
        cam: Camera model

    Returns:
        Parallax in pixels
    """
    values = _parallax_batch(
        np.atleast_2d(frame_unit), np.atleast_2d(keyframe_unit), relative_rotation, cam
    )
    return float(values[0])


def _parallax_batch(
    frame_unit: np.ndarray,
    keyframe_unit: np.ndarray,
    relative_rotation: np.ndarray,
    cam: CameraModel,
) -> np.ndarray:
    bearings = np.column_stack([keyframe_unit, np.ones(len(keyframe_unit))])
    rotated = bearings @ relative_rotation.T
    z = rotated[:, 2]
    ahead = z > PARALLEL_RAY_TOLERANCE
    safe_z = np.where(ahead, z, 1.0)
    predicted = cam.pinhole(rotated[:, :2] / safe_z[:, None])
    current = cam.pinhole(frame_unit)
    parallax = np.linalg.norm(predicted - current, axis=1)
    return np.where(ahead, parallax, np.inf)


def frame_parallax(
    frame_obs: Mapping[int, np.ndarray],
    keyframe_obs: Mapping[int, np.ndarray],
    relative_rotation: np.ndarray,
    cam: CameraModel,
) -> Optional[float]:
    """
    Average compensated parallax over the features both frames observe.

    Args:
        frame_obs: feature_id -> unit-plane point in the current frame
        keyframe_obs: feature_id -> unit-plane point in the last keyframe

    Returns:
        Mean parallax in pixels, or None when no feature is shared
    """
    shared = [fid for fid in frame_obs if fid in keyframe_obs]
    if not shared:
        return None
    cur = np.array([frame_obs[fid] for fid in shared])
    kf = np.array([keyframe_obs[fid] for fid in shared])
    return float(np.mean(_parallax_batch(cur, kf, relative_rotation, cam)))


def select_keyframe(
    parallax: Optional[float], elapsed: float, config: VisualConfig
) -> KeyframeDecision:
    """
    Keyframe / observation-frame / skip decision for a tracked frame.

    Args:
        parallax: Average compensated parallax, None if undefined
        elapsed: Seconds since the last keyframe
        config: Visual thresholds

    Returns:
        The decision
    """
    if parallax is None or parallax > config.keyframe_parallax:
        return KeyframeDecision.KEYFRAME
    if elapsed > config.observation_interval:
        return KeyframeDecision.OBSERVATION_FRAME
    return KeyframeDecision.SKIP


def triangulate_depth(
    bearing_i: np.ndarray, bearing_j: np.ndarray, R_ji: np.ndarray, t_ji: np.ndarray
) -> float:
    """
    Two-view linear triangulation.

    Solves bearing_j × (R_ji · d·bearing_i + t_ji) = 0 for the depth d along
    the homogeneous bearing of view i.

    Raises:
        DegenerateGeometryError: If the rays are parallel
    """
    a = np.cross(bearing_j, R_ji @ bearing_i)
    b = np.cross(bearing_j, t_ji)
    scale = np.linalg.norm(bearing_j) * np.linalg.norm(bearing_i)
    if np.linalg.norm(a) < PARALLEL_RAY_TOLERANCE * scale:
        raise DegenerateGeometryError("Rays are parallel; depth is unobservable")
    return float(-(a @ b) / (a @ a))


def triangulate(
    lm: Landmark,
    poses: Mapping[int, NavState],
    ext: Extrinsics,
    cam: CameraModel,
    config: VisualConfig,
) -> Landmark:
    """
    Initialize the inverse depth of a landmark from prior keyframe poses.

    The anchor is the landmark's reference keyframe when it is among the
    poses, otherwise its first observing keyframe; the second view is the
    most recent observing keyframe.

    Args:
        lm: Landmark to triangulate
        poses: frame_id -> prior pose of the keyframes in the window
        ext: Camera extrinsics
        cam: Camera model
        config: Visual gates

    Returns:
        Updated copy: triangulated, outlier (depth gate), or unchanged
        candidate (too little parallax, degenerate rays, <2 views)
    """
    frames = lm.usable_frames(poses)
    if lm.ref_keyframe in poses and lm.ref_keyframe in frames:
        anchor = lm.ref_keyframe
    elif frames:
        anchor = frames[0]
    else:
        return lm
    others = [fid for fid in frames if fid != anchor]
    if not others:
        return lm
    latest = others[-1]

    obs_i = lm.observations[anchor]
    obs_j = lm.observations[latest]
    R_ji = relative_camera_rotation(poses[anchor], poses[latest], ext)
    if compensated_parallax(obs_j.unit_plane, obs_i.unit_plane, R_ji, cam) < (
        config.min_triangulation_parallax
    ):
        return lm

    cam_i_R, cam_i_p = camera_pose(poses[anchor], ext)
    cam_j_R, cam_j_p = camera_pose(poses[latest], ext)
    t_ji = cam_j_R.T @ (cam_i_p - cam_j_p)
    try:
        depth = triangulate_depth(obs_i.bearing, obs_j.bearing, R_ji, t_ji)
    except DegenerateGeometryError:
        return lm

    if config.min_depth <= depth <= config.max_depth:
        return replace(
            lm, ref_keyframe=anchor, inv_depth=1.0 / depth, status=LandmarkStatus.TRIANGULATED
        )
    return replace(lm, ref_keyframe=anchor, status=LandmarkStatus.OUTLIER)


def tangent_basis(n: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Orthonormal tangent bases b1, b2 of unit vectors n, with the helper axis used."""
    n = np.atleast_2d(n)
    helper = np.zeros_like(n)
    switch = np.abs(n[:, 2]) > TANGENT_AXIS_SWITCH
    helper[~switch, 2] = 1.0
    helper[switch, 0] = 1.0
    c = np.cross(n, helper)
    b1 = c / np.linalg.norm(c, axis=1)[:, None]
    b2 = np.cross(n, b1)
    return b1, b2, helper


@dataclass(frozen=True)
class ReprojectionBatch:
    """
    Residuals and Jacobians of N reprojection factors.

    Jacobians are (N, 2, 3) for the pose and extrinsic blocks and (N, 2) for
    the inverse depth.
    """

    residual: np.ndarray
    p_i: np.ndarray
    theta_i: np.ndarray
    p_j: np.ndarray
    theta_j: np.ndarray
    inv_depth: np.ndarray
    p_bc: np.ndarray
    theta_bc: np.ndarray
    p_cj: np.ndarray


def _unit_bearings(unit_plane: np.ndarray) -> np.ndarray:
    h = np.column_stack([unit_plane, np.ones(len(unit_plane))])
    return h / np.linalg.norm(h, axis=1)[:, None]


def reprojection_batch(
    R_i: np.ndarray,
    p_i: np.ndarray,
    R_j: np.ndarray,
    p_j: np.ndarray,
    ext: Extrinsics,
    inv_depth: np.ndarray,
    anchor_unit: np.ndarray,
    obs_unit: np.ndarray,
    with_jacobians: bool = True,
) -> ReprojectionBatch:
    """
    Tangent-plane reprojection residuals for N (anchor, observation) pairs.

    Args:
        R_i, p_i: (N, 3, 3) / (N, 3) anchor body poses
        R_j, p_j: (N, 3, 3) / (N, 3) observing body poses
        ext: Camera extrinsics
        inv_depth: (N,) anchor inverse depths
        anchor_unit: (N, 2) anchor unit-plane points
        obs_unit: (N, 2) observed unit-plane points

    Raises:
        DegenerateGeometryError: If a predicted point coincides with the camera
    """
    R_bc = ext.R_bc
    p_bc = ext.p_bc
    m = np.column_stack([anchor_unit, np.ones(len(anchor_unit))])
    p_ci = m / inv_depth[:, None]
    p_bi = p_ci @ R_bc.T + p_bc
    p_w = np.einsum("nij,nj->ni", R_i, p_bi) + p_i
    p_bj = np.einsum("nji,nj->ni", R_j, p_w - p_j)
    p_cj = (p_bj - p_bc) @ R_bc

    rho = np.linalg.norm(p_cj, axis=1)
    if np.any(rho < MIN_BEARING_NORM):
        raise DegenerateGeometryError(
            "Predicted landmark coincides with the camera center",
            count=int(np.sum(rho < MIN_BEARING_NORM)),
        )
    n = p_cj / rho[:, None]
    u = _unit_bearings(obs_unit)
    b1, b2, helper = tangent_basis(n)
    diff = n - u
    residual = np.column_stack(
        [np.einsum("ni,ni->n", b1, diff), np.einsum("ni,ni->n", b2, diff)]
    )
    empty = np.zeros((0, 2, 3))
    if not with_jacobians:
        return ReprojectionBatch(
            residual, empty, empty, empty, empty, np.zeros((0, 2)), empty, empty, p_cj
        )

    N = len(n)
    eye = np.broadcast_to(np.eye(3), (N, 3, 3))
    dn_dp = (eye - np.einsum("ni,nj->nij", n, n)) / rho[:, None, None]
    c_norm = np.linalg.norm(np.cross(n, helper), axis=1)
    db1_dn = np.einsum(
        "nij,njk->nik",
        eye - np.einsum("ni,nj->nij", b1, b1),
        -skew_batch(helper),
    ) / c_norm[:, None, None]
    db2_dn = -skew_batch(b1) + np.einsum("nij,njk->nik", skew_batch(n), db1_dn)
    row1 = b1 + np.einsum("ni,nij->nj", diff, db1_dn)
    row2 = b2 + np.einsum("ni,nij->nj", diff, db2_dn)
    dr_dn = np.stack([row1, row2], axis=1)
    dr_dp = np.einsum("nij,njk->nik", dr_dn, dn_dp)  # ∂r/∂p_cj, (N, 2, 3)

    # ∂p_cj/∂x chain blocks
    Rbc_t_Rj_t = np.einsum("ij,nkj->nik", R_bc.T, R_j)  # R_bcᵀR_jᵀ
    M_i = np.einsum("nij,njk->nik", Rbc_t_Rj_t, R_i)  # R_bcᵀR_jᵀR_i
    M_ic = M_i @ R_bc  # R_bcᵀR_jᵀR_iR_bc

    d_pi = Rbc_t_Rj_t
    d_thi = -np.einsum("nij,njk->nik", M_i, skew_batch(p_bi))
    d_thj = np.einsum("ij,njk->nik", R_bc.T, skew_batch(p_bj))
    d_depth = np.einsum("nij,nj->ni", M_ic, -m / (inv_depth**2)[:, None])
    d_pbc = M_i - R_bc.T
    d_thbc = skew_batch(p_cj) - np.einsum("nij,njk->nik", M_ic, skew_batch(p_ci))

    def chain(block: np.ndarray) -> np.ndarray:
        return np.einsum("nij,njk->nik", dr_dp, block)

    return ReprojectionBatch(
        residual=residual,
        p_i=chain(d_pi),
        theta_i=chain(d_thi),
        p_j=-chain(d_pi),
        theta_j=chain(d_thj),
        inv_depth=np.einsum("nij,nj->ni", dr_dp, d_depth),
        p_bc=chain(d_pbc),
        theta_bc=chain(d_thbc),
        p_cj=p_cj,
    )


def reprojection_residual(
    state_i: NavState,
    state_j: NavState,
    ext: Extrinsics,
    inv_depth: float,
    anchor_unit: np.ndarray,
    obs_unit: np.ndarray,
) -> np.ndarray:
    """
    Reprojection residual of one observation.

    Raises:
        DegenerateGeometryError: If the predicted point coincides with the camera
    """
    batch = _single_batch(state_i, state_j, ext, inv_depth, anchor_unit, obs_unit, False)
    return batch.residual[0]


def reprojection_jacobians(
    state_i: NavState,
    state_j: NavState,
    ext: Extrinsics,
    inv_depth: float,
    anchor_unit: np.ndarray,
    obs_unit: np.ndarray,
) -> Dict[str, np.ndarray]:
    """Jacobian blocks keyed p_i, theta_i, p_j, theta_j, inv_depth (2×1), p_bc, theta_bc."""
    batch = _single_batch(state_i, state_j, ext, inv_depth, anchor_unit, obs_unit, True)
    return {
        "p_i": batch.p_i[0],
        "theta_i": batch.theta_i[0],
        "p_j": batch.p_j[0],
        "theta_j": batch.theta_j[0],
        "inv_depth": batch.inv_depth[0][:, None],
        "p_bc": batch.p_bc[0],
        "theta_bc": batch.theta_bc[0],
    }


def _single_batch(
    state_i: NavState,
    state_j: NavState,
    ext: Extrinsics,
    inv_depth: float,
    anchor_unit: np.ndarray,
    obs_unit: np.ndarray,
    with_jacobians: bool,
) -> ReprojectionBatch:
    if inv_depth <= 0.0:
        raise DegenerateGeometryError(f"Inverse depth must be positive, got {inv_depth}")
    return reprojection_batch(
        state_i.R[None],
        state_i.p[None],
        state_j.R[None],
        state_j.p[None],
        ext,
        np.array([inv_depth], dtype=float),
        np.atleast_2d(anchor_unit),
        np.atleast_2d(obs_unit),
        with_jacobians,
    )


def observation_depth_and_error(
    p_w: np.ndarray,
    state: NavState,
    ext: Extrinsics,
    cam: CameraModel,
    pixel: np.ndarray,
) -> Tuple[float, float]:
    """
    Depth of a world point in the observing camera and its pixel reprojection error.

    The error is infinite when the point is behind the camera.
    """
    depths, errors = observation_depths_and_errors(
        np.asarray(p_w, dtype=float)[None],
        state.R[None],
        state.p[None],
        ext,
        cam,
        np.asarray(pixel, dtype=float)[None],
    )
    return float(depths[0]), float(errors[0])


def observation_depths_and_errors(
    p_w: np.ndarray,
    R_wb: np.ndarray,
    p_wb: np.ndarray,
    ext: Extrinsics,
    cam: CameraModel,
    pixels: np.ndarray,
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Batched form of observation_depth_and_error over N world points and poses.

    Args:
        p_w: (N, 3) world points
        R_wb: (N, 3, 3) body attitudes of the observing nodes
        p_wb: (N, 3) body positions of the observing nodes
        pixels: (N, 2) measured pixels

    Returns:
        (depths, errors), each of shape (N,)
    """
    p_b = np.einsum("nji,nj->ni", R_wb, p_w - p_wb)
    p_c = (p_b - ext.p_bc) @ ext.R_bc
    depths = p_c[:, 2]
    in_front = depths > 0.0
    z = np.where(in_front, depths, 1.0)
    predicted = cam.unit_plane_to_pixel(p_c[:, :2] / z[:, None])
    errors = np.where(in_front, np.linalg.norm(predicted - pixels, axis=1), np.inf)
    return depths, errors


def landmark_world_positions(
    inv_depths: np.ndarray,
    bearings: np.ndarray,
    R_wb: np.ndarray,
    p_wb: np.ndarray,
    ext: Extrinsics,
) -> np.ndarray:
    """World positions of N triangulated landmarks from their anchor bearings and poses."""
    if np.any(inv_depths <= 0.0):
        raise DegenerateGeometryError("Landmark without positive inverse depth")
    p_b = (bearings / inv_depths[:, None]) @ ext.R_bc.T + ext.p_bc
    return np.einsum("nij,nj->ni", R_wb, p_b) + p_wb
