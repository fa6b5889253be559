"""Unit tests for quaternion and SO(3) helpers."""

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.spatial.transform import Rotation

from src.navfgo.rotation import (
    IDENTITY_QUAT,
    euler_to_quat,
    from_scipy,
    quat_conjugate,
    quat_exp,
    quat_left,
    quat_log,
    quat_multiply,
    quat_normalize,
    quat_right,
    quat_rotate,
    quat_to_euler,
    quat_to_rotmat,
    right_jacobian,
    right_jacobian_inv,
    rotation_angle,
    skew,
    skew_batch,
    so3_exp,
    so3_log,
    to_scipy,
)

components = st.floats(min_value=-1.0, max_value=1.0, allow_nan=False)
rotvecs = st.tuples(components, components, components).map(
    lambda v: np.array(v) * 2.5
)


def _quat(v) -> np.ndarray:
    return quat_exp(np.asarray(v))


class TestSkew:
    """Test cross-product matrices."""

    def test_skew_matches_cross_product(self):
        """Test [a×] b equals a × b."""
        a = np.array([0.3, -1.2, 2.0])
        b = np.array([-0.7, 0.4, 1.1])
        assert np.allclose(skew(a) @ b, np.cross(a, b))

    def test_skew_is_antisymmetric(self):
        """Test skew matrices are antisymmetric."""
        K = skew(np.array([1.0, 2.0, 3.0]))
        assert np.allclose(K, -K.T)

    def test_skew_batch_matches_single(self):
        """Test the batched version stacks single skew matrices."""
        v = np.array([[1.0, 2.0, 3.0], [-0.5, 0.0, 4.0]])
        out = skew_batch(v)
        assert out.shape == (2, 3, 3)
        assert np.allclose(out[0], skew(v[0]))
        assert np.allclose(out[1], skew(v[1]))


class TestQuaternionAlgebra:
    """Test Hamilton-product quaternion algebra."""

    def test_identity_is_neutral(self):
        """Test identity quaternion is the neutral element."""
        q = _quat([0.1, -0.2, 0.3])
        assert np.allclose(quat_multiply(IDENTITY_QUAT, q), q)
        assert np.allclose(quat_multiply(q, IDENTITY_QUAT), q)

    def test_conjugate_is_inverse(self):
        """Test q ⊗ q* is the identity for unit quaternions."""
        q = _quat([0.5, 0.2, -1.0])
        assert np.allclose(quat_multiply(q, quat_conjugate(q)), IDENTITY_QUAT)

    def test_product_matches_rotation_composition(self):
        """Test the product composes rotation matrices in the same order."""
        p = _quat([0.1, 0.2, 0.3])
        q = _quat([-0.4, 0.5, 0.1])
        assert np.allclose(
            quat_to_rotmat(quat_multiply(p, q)), quat_to_rotmat(p) @ quat_to_rotmat(q)
        )

    def test_left_and_right_matrices(self):
        """Test L(p) q and R(q) p both equal p ⊗ q."""
        p = _quat([0.3, -0.1, 0.7])
        q = _quat([-0.2, 0.9, 0.05])
        expected = quat_multiply(p, q)
        assert np.allclose(quat_left(p) @ q, expected)
        assert np.allclose(quat_right(q) @ p, expected)

    def test_normalize(self):
        """Test normalization yields a unit quaternion."""
        q = quat_normalize(np.array([2.0, 0.0, 0.0, 0.0]))
        assert np.allclose(q, IDENTITY_QUAT)

    def test_rotate_about_z(self):
        """Test a 90° yaw maps x onto y."""
        q = quat_exp(np.array([0.0, 0.0, np.pi / 2]))
        assert np.allclose(quat_rotate(q, np.array([1.0, 0.0, 0.0])), [0.0, 1.0, 0.0])

    def test_small_angle_exp(self):
        """Test exp of a tiny rotation vector stays unit and first order."""
        phi = np.array([1e-10, -2e-10, 3e-10])
        q = quat_exp(phi)
        assert abs(np.linalg.norm(q) - 1.0) < 1e-15
        assert np.allclose(q[1:], 0.5 * phi)

    def test_log_takes_shortest_arc(self):
        """Test log of −q equals log of q."""
        q = _quat([0.2, 0.1, -0.3])
        assert np.allclose(quat_log(-q), quat_log(q))

    @settings(max_examples=50, deadline=None)
    @given(rotvecs)
    def test_exp_log_roundtrip(self, phi):
        """Test log(exp(φ)) recovers φ within the principal range."""
        if np.linalg.norm(phi) >= np.pi:
            return
        assert np.allclose(quat_log(quat_exp(phi)), phi, atol=1e-9)

    @settings(max_examples=50, deadline=None)
    @given(rotvecs, rotvecs)
    def test_product_preserves_unit_norm(self, a, b):
        """Test the product of unit quaternions is unit."""
        q = quat_multiply(quat_exp(a), quat_exp(b))
        assert abs(np.linalg.norm(q) - 1.0) < 1e-12

    @settings(max_examples=50, deadline=None)
    @given(rotvecs)
    def test_rotmat_agrees_with_exp(self, phi):
        """Test quaternion and Rodrigues rotation matrices agree."""
        assert np.allclose(quat_to_rotmat(quat_exp(phi)), so3_exp(phi), atol=1e-12)


class TestScipyInterop:
    """Test conversions to and from scipy rotations."""

    def test_scalar_order(self):
        """Test scalar-first quaternions map to scipy's scalar-last layout."""
        q = _quat([0.3, 0.2, 0.1])
        rot = to_scipy(q)
        assert np.allclose(rot.as_quat(), [q[1], q[2], q[3], q[0]])
        assert np.allclose(from_scipy(rot), q)

    def test_matrix_agreement(self):
        """Test scipy and local rotation matrices agree."""
        q = _quat([-0.6, 0.4, 0.25])
        assert np.allclose(to_scipy(q).as_matrix(), quat_to_rotmat(q))

    def test_so3_log_inverts_exp(self):
        """Test so3_log inverts so3_exp."""
        phi = np.array([0.4, -0.3, 1.2])
        assert np.allclose(so3_log(so3_exp(phi)), phi)


class TestRightJacobian:
    """Test the SO(3) right Jacobian."""

    def test_first_order_identity(self):
        """Test Exp(φ + d) ≈ Exp(φ) Exp(Jr(φ) d) for small d."""
        phi = np.array([0.4, -0.7, 0.2])
        d = np.array([1e-6, -2e-6, 1.5e-6])
        lhs = so3_exp(phi + d)
        rhs = so3_exp(phi) @ so3_exp(right_jacobian(phi) @ d)
        assert np.allclose(lhs, rhs, atol=1e-11)

    def test_inverse(self):
        """Test Jr⁻¹ inverts Jr."""
        for phi in (np.array([0.3, 0.2, -0.5]), np.array([1e-8, 0.0, 0.0])):
            assert np.allclose(right_jacobian_inv(phi) @ right_jacobian(phi), np.eye(3))

    def test_identity_at_zero(self):
        """Test Jr(0) is the identity."""
        assert np.allclose(right_jacobian(np.zeros(3)), np.eye(3))


class TestEuler:
    """Test ZYX Euler conversions."""

    def test_yaw_only(self):
        """Test a pure yaw rotates north onto east."""
        q = euler_to_quat(0.0, 0.0, np.pi / 2)
        assert np.allclose(quat_to_rotmat(q) @ np.array([1.0, 0.0, 0.0]), [0.0, 1.0, 0.0])

    def test_roundtrip(self):
        """Test Euler angles survive a round trip."""
        roll, pitch, yaw = 0.1, -0.2, 2.5
        assert np.allclose(quat_to_euler(euler_to_quat(roll, pitch, yaw)), (roll, pitch, yaw))

    def test_matches_scipy_intrinsic_zyx(self):
        """Test the composition order is Rz Ry Rx."""
        roll, pitch, yaw = 0.3, 0.2, -0.4
        R = Rotation.from_euler("ZYX", [yaw, pitch, roll]).as_matrix()
        assert np.allclose(quat_to_rotmat(euler_to_quat(roll, pitch, yaw)), R)

    def test_rotation_angle(self):
        """Test the rotation angle of a known rotation."""
        assert np.isclose(rotation_angle(so3_exp(np.array([0.0, 0.3, 0.0]))), 0.3)
