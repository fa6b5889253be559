"""Unit tests for camera geometry, keyframe gates and triangulation."""

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from src.navfgo.config import CameraConfig, VisualConfig
from src.navfgo.errors import DegenerateGeometryError, PredictionInvalidError
from src.navfgo.ins import NavState
from src.navfgo.rotation import euler_to_quat, quat_exp
from src.navfgo.visual import (
    CameraModel,
    Extrinsics,
    FeatureObservation,
    KeyframeDecision,
    Landmark,
    LandmarkStatus,
    camera_to_world,
    compensated_parallax,
    frame_parallax,
    gate_observation,
    landmark_world_position,
    observation_depth_and_error,
    predict_observation,
    relative_camera_rotation,
    reprojection_jacobians,
    reprojection_residual,
    select_keyframe,
    triangulate,
    triangulate_depth,
    undistort,
    world_to_camera,
)

CAMERA = CameraModel.from_config(CameraConfig())
EXT = Extrinsics.from_config(CameraConfig())
GATES = VisualConfig()


def _pose(p, yaw: float = 0.0, t: float = 0.0) -> NavState:
    q = euler_to_quat(0.0, 0.0, yaw)
    return NavState(t, np.asarray(p, dtype=float), np.zeros(3), q)


def _observe(node_id: int, p_w: np.ndarray, pose: NavState, feature_id: int = 1):
    p_c = world_to_camera(p_w, pose, EXT)
    unit = p_c[:2] / p_c[2]
    return FeatureObservation(node_id, feature_id, pose.t, CAMERA.pinhole(unit), unit)


def _landmark(p_w: np.ndarray, poses) -> Landmark:
    lm = Landmark(id=1)
    for node_id, pose in poses.items():
        lm.add_observation(node_id, _observe(node_id, p_w, pose))
    return lm


class TestCameraModel:
    """Test projection and distortion."""

    def test_forward_camera_center(self):
        """Test a point straight ahead of the camera projects to the principal point."""
        pose = _pose([0.0, 0.0, 0.0])
        p_w = np.array([10.0, 0.0, -0.1])
        p_c = world_to_camera(p_w, pose, EXT)
        assert np.allclose(p_c, [0.0, 0.0, 9.8])
        assert np.allclose(CAMERA.project(p_c), [320.0, 240.0])

    def test_camera_axes(self):
        """Test image right is body right and image down is body down."""
        pose = _pose([0.0, 0.0, 0.0])
        right = CAMERA.project(world_to_camera(np.array([10.0, 1.0, -0.1]), pose, EXT))
        down = CAMERA.project(world_to_camera(np.array([10.0, 0.0, 0.9]), pose, EXT))
        assert right[0] > 320.0 and right[1] == pytest.approx(240.0)
        assert down[1] > 240.0 and down[0] == pytest.approx(320.0)

    def test_behind_camera(self):
        """Test points behind the camera cannot be projected."""
        with pytest.raises(PredictionInvalidError):
            CAMERA.project(np.array([0.0, 0.0, -1.0]))

    def test_project_points_mask(self):
        """Test batch projection flags points behind the camera."""
        pixels, in_front = CAMERA.project_points(
            np.array([[0.0, 0.0, 5.0], [1.0, 0.0, -2.0]])
        )
        assert in_front.tolist() == [True, False]
        assert np.allclose(pixels[0], [320.0, 240.0])

    def test_in_image(self):
        """Test image bounds."""
        inside = CAMERA.in_image(np.array([[0.0, 0.0], [639.9, 479.9], [640.0, 10.0]]))
        assert inside.tolist() == [True, True, False]

    def test_undistort_inverts_distortion(self):
        """Test Newton undistortion recovers the unit-plane point."""
        cam = CameraModel.from_config(CameraConfig(k1=-0.28, k2=0.07, p1=1e-4, p2=-2e-4))
        xy = np.array([0.3, -0.2])
        pixel = cam.unit_plane_to_pixel(xy)
        assert np.allclose(undistort(cam, pixel), xy, atol=1e-8)
        assert np.allclose(cam.undistort(pixel), xy, atol=1e-8)

    def test_undistort_without_distortion(self):
        """Test undistortion is the inverse pinhole when there is no distortion."""
        assert not CAMERA.has_distortion
        assert np.allclose(CAMERA.undistort(np.array([720.0, 240.0])), [1.0, 0.0])


class TestFrames:
    """Test camera/world transforms."""

    def test_world_camera_roundtrip(self):
        """Test camera_to_world inverts world_to_camera."""
        q = quat_exp(np.array([0.1, -0.2, 0.8]))
        pose = NavState(0.0, np.array([3.0, -1.0, 0.5]), np.zeros(3), q)
        p_w = np.array([12.0, 4.0, -2.0])
        assert np.allclose(camera_to_world(world_to_camera(p_w, pose, EXT), pose, EXT), p_w)

    def test_relative_rotation(self):
        """Test the relative rotation maps camera vectors between poses."""
        ext = Extrinsics(EXT.q_bc, np.zeros(3))
        a = _pose([1.0, 2.0, 0.0], yaw=0.2)
        b = _pose([1.0, 2.0, 0.0], yaw=-0.3)
        p_w = np.array([20.0, 5.0, -1.0])
        R = relative_camera_rotation(a, b, ext)
        assert np.allclose(R @ world_to_camera(p_w, a, ext), world_to_camera(p_w, b, ext))

    def test_extrinsics_oplus_ominus(self):
        """Test extrinsic perturbations invert."""
        delta = np.array([0.01, -0.02, 0.03, 0.001, 0.002, -0.003])
        moved = EXT.oplus(delta)
        assert np.allclose(moved.ominus(EXT), delta)


class TestParallax:
    """Test rotation-compensated parallax."""

    def test_pure_rotation_has_no_parallax(self):
        """Test a rotation-only motion gives zero compensated parallax."""
        ext = Extrinsics(EXT.q_bc, np.zeros(3))
        a = _pose([0.0, 0.0, 0.0], yaw=0.0)
        b = _pose([0.0, 0.0, 0.0], yaw=0.1)
        p_w = np.array([15.0, 2.0, -1.0])
        ua = world_to_camera(p_w, a, ext)
        ub = world_to_camera(p_w, b, ext)
        R = relative_camera_rotation(a, b, ext)
        value = compensated_parallax(ub[:2] / ub[2], ua[:2] / ua[2], R, CAMERA)
        assert value == pytest.approx(0.0, abs=1e-9)

    def test_translation_parallax(self):
        """Test a lateral baseline gives f·b/d pixels of parallax."""
        a = _pose([0.0, 0.0, 0.0])
        b = _pose([0.0, 1.0, 0.0])
        p_w = np.array([10.2, 0.0, -0.1])
        oa = _observe(0, p_w, a)
        ob = _observe(1, p_w, b)
        R = relative_camera_rotation(a, b, EXT)
        value = compensated_parallax(ob.unit_plane, oa.unit_plane, R, CAMERA)
        assert value == pytest.approx(40.0)

    def test_frame_parallax_mean_over_shared(self):
        """Test the frame parallax averages only shared features."""
        frame = {1: np.array([0.1, 0.0]), 2: np.array([0.0, 0.0]), 3: np.array([0.5, 0.5])}
        keyframe = {1: np.array([0.0, 0.0]), 2: np.array([0.0, 0.0])}
        value = frame_parallax(frame, keyframe, np.eye(3), CAMERA)
        assert value == pytest.approx(20.0)

    def test_frame_parallax_without_shared(self):
        """Test no shared features gives an undefined parallax."""
        assert frame_parallax({1: np.zeros(2)}, {2: np.zeros(2)}, np.eye(3), CAMERA) is None


class TestSelectKeyframe:
    """Test the keyframe / observation-frame / skip gate."""

    @pytest.mark.parametrize(
        "parallax, elapsed, expected",
        [
            (None, 0.0, KeyframeDecision.KEYFRAME),
            (25.0, 0.1, KeyframeDecision.KEYFRAME),
            (20.0, 0.1, KeyframeDecision.SKIP),
            (20.0, 0.6, KeyframeDecision.OBSERVATION_FRAME),
            (5.0, 0.5, KeyframeDecision.SKIP),
            (5.0, 0.51, KeyframeDecision.OBSERVATION_FRAME),
        ],
    )
    def test_boundaries(self, parallax, elapsed, expected):
        """Test decisions at and around the 20 px and 0.5 s thresholds."""
        assert select_keyframe(parallax, elapsed, GATES) is expected

    @given(
        st.one_of(st.none(), st.floats(min_value=0.0, max_value=200.0)),
        st.floats(min_value=0.0, max_value=5.0),
    )
    def test_partition(self, parallax, elapsed):
        """Test every frame gets exactly the decision its parallax and age imply."""
        decision = select_keyframe(parallax, elapsed, GATES)
        if parallax is None or parallax > 20.0:
            assert decision is KeyframeDecision.KEYFRAME
        elif elapsed > 0.5:
            assert decision is KeyframeDecision.OBSERVATION_FRAME
        else:
            assert decision is KeyframeDecision.SKIP


class TestTriangulation:
    """Test depth initialization."""

    def test_two_view_depth(self):
        """Test linear triangulation recovers the depth."""
        bearing_i = np.array([0.1, -0.05, 1.0])
        p_i = 8.0 * bearing_i
        R_ji = np.eye(3)
        t_ji = np.array([-1.0, 0.0, 0.0])
        p_j = R_ji @ p_i + t_ji
        depth = triangulate_depth(bearing_i, p_j / p_j[2], R_ji, t_ji)
        assert depth == pytest.approx(8.0)

    def test_parallel_rays(self):
        """Test parallel rays are degenerate."""
        b = np.array([0.0, 0.0, 1.0])
        with pytest.raises(DegenerateGeometryError):
            triangulate_depth(b, b, np.eye(3), np.array([0.0, 0.0, 1.0]))

    def test_triangulated(self):
        """Test a well-conditioned landmark is triangulated at its depth."""
        poses = {0: _pose([0.0, 0.0, 0.0]), 1: _pose([0.0, 2.0, 0.0], t=1.0)}
        p_w = np.array([10.2, 1.0, -0.1])
        lm = triangulate(_landmark(p_w, poses), poses, EXT, CAMERA, GATES)
        assert lm.status is LandmarkStatus.TRIANGULATED
        assert lm.ref_keyframe == 0
        assert lm.depth == pytest.approx(10.0)
        assert np.allclose(landmark_world_position(lm, poses[0], EXT), p_w)

    def test_low_parallax_stays_candidate(self):
        """Test a short baseline leaves the landmark untriangulated."""
        poses = {0: _pose([0.0, 0.0, 0.0]), 1: _pose([0.0, 0.1, 0.0], t=1.0)}
        lm = _landmark(np.array([10.2, 1.0, -0.1]), poses)
        assert triangulate(lm, poses, EXT, CAMERA, GATES) is lm
        assert lm.status is LandmarkStatus.CANDIDATE

    @pytest.mark.parametrize(
        "baseline, triangulated", [(0.2475, False), (0.2525, True)]
    )
    def test_parallax_gate_boundary(self, baseline, triangulated):
        """Test 9.9 px of parallax defers triangulation and 10.1 px triangulates."""
        poses = {0: _pose([0.0, 0.0, 0.0]), 1: _pose([0.0, baseline, 0.0], t=1.0)}
        lm = triangulate(
            _landmark(np.array([10.2, 0.0, -0.1]), poses), poses, EXT, CAMERA, GATES
        )
        if triangulated:
            assert lm.status is LandmarkStatus.TRIANGULATED
            assert lm.depth == pytest.approx(10.0)
        else:
            assert lm.status is LandmarkStatus.CANDIDATE

    @pytest.mark.parametrize(
        "depth, baseline, status",
        [
            (0.5, 0.05, LandmarkStatus.OUTLIER),
            (1.5, 0.1, LandmarkStatus.TRIANGULATED),
            (99.5, 5.0, LandmarkStatus.TRIANGULATED),
            (100.5, 5.0, LandmarkStatus.OUTLIER),
        ],
    )
    def test_depth_gate_boundary(self, depth, baseline, status):
        """Test depths just outside [1, 100] m mark the landmark an outlier."""
        poses = {0: _pose([0.0, 0.0, 0.0]), 1: _pose([0.0, baseline, 0.0], t=1.0)}
        p_w = np.array([depth + 0.2, 0.0, -0.1])
        lm = triangulate(_landmark(p_w, poses), poses, EXT, CAMERA, GATES)
        assert lm.status is status

    def test_far_landmark_is_outlier(self):
        """Test a depth beyond the gate marks the landmark an outlier."""
        poses = {0: _pose([0.0, 0.0, 0.0]), 1: _pose([0.0, 10.0, 0.0], t=1.0)}
        lm = triangulate(
            _landmark(np.array([150.2, 5.0, -0.1]), poses), poses, EXT, CAMERA, GATES
        )
        assert lm.status is LandmarkStatus.OUTLIER

    def test_single_view(self):
        """Test one observing keyframe is not enough."""
        poses = {0: _pose([0.0, 0.0, 0.0])}
        lm = _landmark(np.array([10.2, 1.0, -0.1]), poses)
        assert triangulate(lm, poses, EXT, CAMERA, GATES) is lm


class TestLandmark:
    """Test feature track bookkeeping."""

    def test_usable_frames_skip_rejected(self):
        """Test rejected observations no longer count as usable."""
        poses = {k: _pose([0.0, float(k), 0.0]) for k in range(3)}
        lm = _landmark(np.array([10.2, 1.0, -0.1]), poses)
        lm.rejected_frames.add(1)
        assert lm.usable_frames([0, 1, 2]) == [0, 2]
        lm.remove_frame(1)
        assert 1 not in lm.observations and 1 not in lm.rejected_frames

    def test_anchor_required(self):
        """Test an untriangulated landmark has no anchor observation."""
        with pytest.raises(DegenerateGeometryError):
            _ = Landmark(id=3).anchor_observation

    def test_depth_of_candidate_is_infinite(self):
        """Test a zero inverse depth reads as infinite depth."""
        assert Landmark(id=3).depth == float("inf")


class TestPrediction:
    """Test INS-aided prediction and gating."""

    def test_prediction_matches_observation(self):
        """Test a landmark predicts its own observation at the true pose."""
        poses = {0: _pose([0.0, 0.0, 0.0]), 1: _pose([0.0, 2.0, 0.0], t=1.0)}
        p_w = np.array([10.2, 1.0, -0.1])
        lm = triangulate(_landmark(p_w, poses), poses, EXT, CAMERA, GATES)
        pose = _pose([1.0, 1.0, 0.0], yaw=0.05, t=2.0)
        expected = _observe(2, p_w, pose).pixel
        predicted = predict_observation(pose, EXT, lm, CAMERA, poses[0])
        assert np.allclose(predicted, expected)
        assert gate_observation(predicted, expected + [20.0, 20.0], 30.0)
        assert not gate_observation(predicted, expected + [30.0, 10.0], 30.0)

    def test_prediction_behind_camera(self):
        """Test landmarks behind the predicted pose are invalid."""
        poses = {0: _pose([0.0, 0.0, 0.0]), 1: _pose([0.0, 2.0, 0.0], t=1.0)}
        lm = _landmark(np.array([10.2, 1.0, -0.1]), poses)
        lm = triangulate(lm, poses, EXT, CAMERA, GATES)
        with pytest.raises(PredictionInvalidError):
            predict_observation(_pose([20.0, 0.0, 0.0]), EXT, lm, CAMERA, poses[0])

    def test_depth_and_error(self):
        """Test the observing depth and pixel error, infinite behind the camera."""
        pose = _pose([0.0, 0.0, 0.0])
        depth, error = observation_depth_and_error(
            np.array([10.2, 0.0, -0.1]), pose, EXT, CAMERA, np.array([323.0, 244.0])
        )
        assert depth == pytest.approx(10.0)
        assert error == pytest.approx(5.0)
        depth, error = observation_depth_and_error(
            np.array([-10.0, 0.0, 0.0]), pose, EXT, CAMERA, np.zeros(2)
        )
        assert depth < 0 and error == float("inf")


class TestReprojection:
    """Test the unit-sphere reprojection factor."""

    def setup_method(self):
        self.si = NavState(
            0.0, np.zeros(3), np.zeros(3), quat_exp(np.array([0.02, -0.01, 0.1]))
        )
        self.sj = NavState(
            1.0,
            np.array([0.5, 1.5, 0.1]),
            np.zeros(3),
            quat_exp(np.array([0.0, 0.03, -0.2])),
        )
        p_w = np.array([9.0, 2.0, -0.5])
        p_ci = world_to_camera(p_w, self.si, EXT)
        p_cj = world_to_camera(p_w, self.sj, EXT)
        self.anchor = p_ci[:2] / p_ci[2]
        self.rho = 1.0 / p_ci[2]
        self.truth = p_cj[:2] / p_cj[2]

    def _residual(self, obs, si=None, sj=None, ext=EXT, rho=None):
        return reprojection_residual(
            si or self.si,
            sj or self.sj,
            ext,
            self.rho if rho is None else rho,
            self.anchor,
            obs,
        )

    def test_zero_at_truth(self):
        """Test the residual vanishes for a consistent observation."""
        assert np.allclose(self._residual(self.truth), 0.0, atol=1e-12)

    def test_magnitude_is_angular(self):
        """Test a one-pixel offset gives roughly 1/f of residual."""
        obs = self.truth + np.array([1.0 / CAMERA.fx, 0.0])
        r = self._residual(obs)
        assert np.linalg.norm(r) == pytest.approx(1.0 / CAMERA.fx, rel=0.15)

    def test_non_positive_inverse_depth(self):
        """Test a non-positive inverse depth is degenerate."""
        with pytest.raises(DegenerateGeometryError):
            self._residual(self.truth, rho=0.0)

    def test_jacobians_match_finite_differences(self):
        """Test every Jacobian block against central differences."""
        obs = self.truth + np.array([0.01, -0.005])
        J = reprojection_jacobians(self.si, self.sj, EXT, self.rho, self.anchor, obs)
        h = 1e-6

        def state_columns(which, offset):
            cols = []
            for k in range(3):
                d = np.zeros(15)
                d[offset + k] = h
                base = self.si if which == "i" else self.sj
                plus, minus = base.oplus(d), base.oplus(-d)
                if which == "i":
                    diff = self._residual(obs, si=plus) - self._residual(obs, si=minus)
                else:
                    diff = self._residual(obs, sj=plus) - self._residual(obs, sj=minus)
                cols.append(diff / (2 * h))
            return np.column_stack(cols)

        assert np.allclose(J["p_i"], state_columns("i", 0), atol=1e-7)
        assert np.allclose(J["theta_i"], state_columns("i", 3), atol=1e-7)
        assert np.allclose(J["p_j"], state_columns("j", 0), atol=1e-7)
        assert np.allclose(J["theta_j"], state_columns("j", 3), atol=1e-7)

        for name, offset in (("p_bc", 0), ("theta_bc", 3)):
            cols = []
            for k in range(3):
                d = np.zeros(6)
                d[offset + k] = h
                diff = self._residual(obs, ext=EXT.oplus(d)) - self._residual(
                    obs, ext=EXT.oplus(-d)
                )
                cols.append(diff / (2 * h))
            assert np.allclose(J[name], np.column_stack(cols), atol=1e-7), name

        num = (
            self._residual(obs, rho=self.rho + h) - self._residual(obs, rho=self.rho - h)
        ) / (2 * h)
        assert np.allclose(J["inv_depth"][:, 0], num, atol=1e-6)
