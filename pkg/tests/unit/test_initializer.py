"""Unit tests for GNSS/INS initialization."""

import numpy as np
import pytest

from src.navfgo.config import CameraConfig, InitializerConfig, RunConfig
from src.navfgo.errors import InitializationPendingError
from src.navfgo.factors import GnssFix, state_key
from src.navfgo.initializer import (
    coarse_alignment,
    detect_zero_velocity,
    heading_from_gnss,
    initial_prior,
    initialize,
    leading_static_samples,
)
from src.navfgo.ins import ImuSample
from src.navfgo.rotation import euler_to_quat, quat_to_euler, quat_to_rotmat
from src.navfgo.visual import Extrinsics
from tests.helpers import imu_stream, initial_state, make_frame, mechanize, stationary_stream

EXT = Extrinsics.from_config(CameraConfig())
STATIC = 2.0


def _start_stop_stream(frame, duration=8.0, rate=200.0):
    """Stationary for two seconds, then accelerating forward while weaving."""

    def angular_rate(t):
        w = frame.earth_rate.copy()
        if t >= STATIC:
            w[2] += 0.05 * np.sin(4.0 * (t - STATIC))
        return w

    def specific_force(t):
        f = -frame.gravity.copy()
        if t >= STATIC:
            f[0] += 1.0
        return f

    return imu_stream(duration, rate, angular_rate=angular_rate, specific_force=specific_force)


def _fixes(frame, states, rate=200.0, every=1.0, sigma=0.02):
    step = int(round(every * rate))
    return [
        GnssFix(s.t, frame.to_geodetic(s.p), np.full(3, sigma), np.zeros(3))
        for s in states[::step]
    ]


class TestZeroVelocity:
    """Test stationary window detection."""

    def test_stationary_stream(self):
        """Test a constant stream is flagged stationary throughout."""
        frame = make_frame()
        windows = detect_zero_velocity(stationary_stream(frame, 2.0), InitializerConfig())
        assert len(windows) == 4
        assert all(w.stationary for w in windows)

    def test_motion_detected(self):
        """Test the weaving segment is flagged as moving."""
        frame = make_frame()
        windows = detect_zero_velocity(_start_stop_stream(frame, 4.0), InitializerConfig())
        flags = [w.stationary for w in windows]
        assert flags[:4] == [True] * 4
        assert not any(flags[4:])

    def test_too_few_samples(self):
        """Test a single sample gives no windows."""
        sample = ImuSample(0.0, np.zeros(3), np.zeros(3))
        assert detect_zero_velocity([sample], InitializerConfig()) == []

    def test_leading_static_span(self):
        """Test only the uninterrupted stationary prefix is returned."""
        frame = make_frame()
        samples = _start_stop_stream(frame, 4.0)
        windows = detect_zero_velocity(samples, InitializerConfig())
        static = leading_static_samples(samples, windows)
        assert len(static) == 400
        assert static[-1].t < STATIC

    def test_no_leading_static_span(self):
        """Test a stream starting in motion has no static prefix."""
        frame = make_frame()
        samples = [s for s in _start_stop_stream(frame, 4.0) if s.t >= STATIC]
        windows = detect_zero_velocity(samples, InitializerConfig())
        assert leading_static_samples(samples, windows) == []


class TestCoarseAlignment:
    """Test leveling and gyro bias estimation."""

    def test_roll_pitch_and_bias(self):
        """Test roll, pitch and gyro bias are recovered from a tilted rest."""
        frame = make_frame()
        q = euler_to_quat(0.05, -0.03, 0.7)
        R = quat_to_rotmat(q)
        bias = np.array([1e-3, -2e-3, 5e-4])
        samples = imu_stream(
            1.0,
            angular_rate=lambda t: R.T @ frame.earth_rate + bias,
            specific_force=lambda t: -R.T @ frame.gravity,
        )
        q_est, bg = coarse_alignment(samples, frame, heading=0.7)
        roll, pitch, yaw = quat_to_euler(q_est)
        assert roll == pytest.approx(0.05, abs=1e-9)
        assert pitch == pytest.approx(-0.03, abs=1e-9)
        assert yaw == pytest.approx(0.7, abs=1e-9)
        assert np.allclose(bg, bias, atol=1e-9)


class TestGnssHeading:
    """Test course-over-ground heading."""

    def _line(self, frame, speed, heading, count=5, valid=True):
        direction = np.array([np.cos(heading), np.sin(heading), 0.0])
        return [
            GnssFix(
                float(k),
                frame.to_geodetic(speed * k * direction),
                np.full(3, 0.02),
                np.zeros(3),
                valid=valid,
            )
            for k in range(count)
        ]

    def test_heading_of_straight_line(self):
        """Test the course of a straight 2 m/s track at 30 degrees."""
        frame = make_frame()
        course = heading_from_gnss(self._line(frame, 2.0, np.radians(30.0)), frame, 0.5)
        assert course is not None
        assert course.t == 1.0
        assert course.heading == pytest.approx(np.radians(30.0), abs=1e-6)
        assert np.hypot(*course.velocity[:2]) == pytest.approx(2.0, rel=1e-6)

    def test_too_slow(self):
        """Test no heading below the speed threshold."""
        frame = make_frame()
        assert heading_from_gnss(self._line(frame, 0.2, 0.0), frame, 0.5) is None

    def test_needs_three_valid_fixes(self):
        """Test invalid fixes do not count."""
        frame = make_frame()
        fixes = self._line(frame, 2.0, 0.0, valid=False)
        assert heading_from_gnss(fixes, frame, 0.5) is None


class TestInitialPrior:
    """Test the first-node prior."""

    def test_diagonal_information(self):
        """Test the prior Jacobian is the inverse of the configured sigmas."""
        config = InitializerConfig()
        fix = GnssFix(0.0, make_frame().origin, np.array([0.02, 0.02, 0.05]), np.zeros(3))
        prior = initial_prior(initial_state(), 0, fix, config, EXT)
        assert prior.keys == [state_key(0)]
        assert prior.dims == [15]
        diag = np.diag(prior.jacobian)
        assert diag[0] == pytest.approx(50.0)
        assert diag[2] == pytest.approx(20.0)
        assert diag[5] == pytest.approx(1.0 / np.radians(config.yaw_sigma_deg))
        assert diag[6] == pytest.approx(1.0 / config.velocity_sigma)
        assert np.allclose(prior.residual, 0.0)


class TestInitialize:
    """Test full initialization on noise-free data."""

    def setup_method(self):
        self.frame = make_frame()
        self.samples = _start_stop_stream(self.frame)
        self.truth = mechanize(initial_state(), self.samples, self.frame)
        self.fixes = _fixes(self.frame, self.truth)

    def test_heading_from_motion(self):
        """Test initialization from a stationary start and GNSS course."""
        result = initialize(self.samples, self.fixes, RunConfig(), EXT)
        assert result.end_time == pytest.approx(5.0)
        assert result.static_samples == 400
        assert abs(result.heading) < 0.05
        assert np.allclose(result.gyro_bias, 0.0, atol=1e-5)
        window = result.window
        assert [n.t for n in window.nodes] == pytest.approx([0.0, 1.0, 2.0, 3.0, 4.0, 5.0])
        assert len(window.preints) == 5
        assert window.prior is not None
        for node in window.nodes:
            truth = self.truth[int(round(node.t * 200))]
            assert np.linalg.norm(node.state.p - truth.p) < 0.05
            assert np.linalg.norm(node.state.v - truth.v) < 0.05

    def test_configured_heading(self):
        """Test a configured heading skips the course requirement."""
        config = RunConfig.from_dict({"initializer": {"initial_heading_deg": 0.0}})
        result = initialize(self.samples, self.fixes, config, EXT)
        assert result.heading == 0.0
        assert result.end_time == pytest.approx(5.0)

    def test_no_valid_fix(self):
        """Test initialization waits for a valid fix."""
        with pytest.raises(InitializationPendingError, match="No valid GNSS fix"):
            initialize(self.samples, [], RunConfig(), EXT)

    def test_waiting_for_speed(self):
        """Test a stationary GNSS track leaves initialization pending."""
        still = [f for f in self.fixes if f.t <= STATIC]
        with pytest.raises(InitializationPendingError, match="Speed"):
            initialize(self.samples, still, RunConfig(), EXT)

    def test_imu_must_span_window(self):
        """Test a short IMU stream leaves initialization pending."""
        short = [s for s in self.samples if s.t <= 3.0]
        with pytest.raises(InitializationPendingError, match="IMU"):
            initialize(short, self.fixes, RunConfig(), EXT)

    def test_gnss_must_reach_window_end(self):
        """Test GNSS ending before the window end leaves initialization pending."""
        config = RunConfig.from_dict({"initializer": {"initial_heading_deg": 0.0}})
        early = [f for f in self.fixes if f.t <= 3.0]
        with pytest.raises(InitializationPendingError, match="GNSS data"):
            initialize(self.samples, early, config, EXT)
