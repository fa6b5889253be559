"""
IMU preintegration between consecutive time nodes.

Samples are accumulated in the body frame of the first node with the
linearization biases removed. Besides Δp, Δv and Δq the accumulation keeps
the force moments M_n = ∫ tⁿ a(t) dt (n = 0..3) needed by the closed-form
Earth-rotation terms shared with the INS mechanization, the first-order bias
Jacobians, and the 15×15 covariance in (δp, δθ, δv, δbg, δba) order.
"""

from dataclasses import dataclass
from math import comb
from typing import Sequence, Tuple

import numpy as np
from scipy import linalg

from .config import ImuNoiseConfig
from .errors import ContractError, EmptyIntervalError, InputError, ReintegrationRequired
from .geodesy import WorldFrame
from .ins import (
    ImuSample,
    NavState,
    earth_rotation_terms,
    interval_increment,
    rotated_deltas,
)
from .rotation import (
    IDENTITY_QUAT,
    quat_conjugate,
    quat_exp,
    quat_left,
    quat_multiply,
    quat_normalize,
    quat_right,
    quat_to_rotmat,
    right_jacobian,
    skew,
)

# Error-state blocks
P = slice(0, 3)
TH = slice(3, 6)
V = slice(6, 9)
BG = slice(9, 12)
BA = slice(12, 15)

TIMESTAMP_TOLERANCE = 1e-6
_CHOLESKY_JITTER = 1e-20


@dataclass(frozen=True)
class PreintegratedImu:
    """
    Accumulated IMU deltas between two nodes.

    ``jacobian`` rows are (dp, dv, dq) and columns (bg, ba); the dq/ba block
    is identically zero.
    """

    t0: float
    t1: float
    dp: np.ndarray
    dv: np.ndarray
    dq: np.ndarray
    moments: np.ndarray
    lin_bg: np.ndarray
    lin_ba: np.ndarray
    jacobian: np.ndarray
    cov: np.ndarray
    samples: Tuple[ImuSample, ...]
    noise: ImuNoiseConfig

    @property
    def dt_total(self) -> float:
        return self.t1 - self.t0

    @property
    def J_p_bg(self) -> np.ndarray:
        return self.jacobian[0:3, 0:3]

    @property
    def J_p_ba(self) -> np.ndarray:
        return self.jacobian[0:3, 3:6]

    @property
    def J_v_bg(self) -> np.ndarray:
        return self.jacobian[3:6, 0:3]

    @property
    def J_v_ba(self) -> np.ndarray:
        return self.jacobian[3:6, 3:6]

    @property
    def J_q_bg(self) -> np.ndarray:
        return self.jacobian[6:9, 0:3]

    def sqrt_information(self) -> np.ndarray:
        return sqrt_information(self.cov)


def integrate(
    samples: Sequence[ImuSample],
    lin_bg: np.ndarray,
    lin_ba: np.ndarray,
    noise: ImuNoiseConfig,
) -> PreintegratedImu:
    """
    Preintegrate a sample sequence at the given linearization biases.

    Args:
        samples: Samples spanning the interval, end points included
        lin_bg: Gyro bias linearization point
        lin_ba: Accelerometer bias linearization point
        noise: Noise densities for the covariance

    Returns:
        The preintegrated measurement

    Raises:
        EmptyIntervalError: If fewer than two samples are given
        InputError: If timestamps are not strictly increasing
    """
    if len(samples) < 2:
        raise EmptyIntervalError(
            f"Preintegration needs at least 2 samples, got {len(samples)}"
        )
    lin_bg = np.asarray(lin_bg, dtype=float).copy()
    lin_ba = np.asarray(lin_ba, dtype=float).copy()

    eye = np.eye(3)
    dq = IDENTITY_QUAT.copy()
    Phi = np.eye(3)
    dp = np.zeros(3)
    dv = np.zeros(3)
    moments = np.zeros((4, 3))
    J_p_bg = np.zeros((3, 3))
    J_p_ba = np.zeros((3, 3))
    J_v_bg = np.zeros((3, 3))
    J_v_ba = np.zeros((3, 3))
    J_q = np.zeros((3, 3))
    cov = np.zeros((15, 15))
    F = np.eye(15)
    tau = 0.0

    gyro_var = noise.gyro_arw**2
    accel_var = noise.accel_vrw**2
    bg_walk = noise.gyro_bias_rw**2
    ba_walk = noise.accel_bias_rw**2

    for prev, cur in zip(samples[:-1], samples[1:]):
        if cur.t <= prev.t:
            raise InputError(
                f"Non-monotonic IMU timestamps in preintegration: {prev.t} -> {cur.t}",
                t=cur.t,
            )
        inc = interval_increment(prev, cur, lin_bg, lin_ba)
        dt = inc.dt
        Jr = right_jacobian(inc.omega * dt)
        da1_dbg = inc.dR @ skew(inc.u1) @ Jr * dt
        dv_j = inc.mu[0]
        dp_j = dt * dt * (inc.a0 / 3.0 + inc.a1 / 6.0)

        f_p_bg = (dt * dt / 6.0) * Phi @ da1_dbg
        f_p_ba = -Phi @ (dt * dt * (eye / 3.0 + inc.dR / 6.0))
        f_v_bg = (0.5 * dt) * Phi @ da1_dbg
        f_v_ba = -Phi @ (0.5 * dt * (eye + inc.dR))
        f_q_bg = -Jr * dt

        F[P, TH] = -Phi @ skew(dp_j)
        F[P, V] = eye * dt
        F[P, BG] = f_p_bg
        F[P, BA] = f_p_ba
        F[TH, TH] = inc.dR.T
        F[TH, BG] = f_q_bg
        F[V, TH] = -Phi @ skew(dv_j)
        F[V, BG] = f_v_bg
        F[V, BA] = f_v_ba

        G_g = F[:, BG].copy()
        G_a = F[:, BA].copy()
        G_g[9:, :] = 0.0
        G_a[9:, :] = 0.0
        cov = (
            F @ cov @ F.T
            + (gyro_var / dt) * G_g @ G_g.T
            + (accel_var / dt) * G_a @ G_a.T
        )
        cov[BG, BG] += bg_walk * dt * eye
        cov[BA, BA] += ba_walk * dt * eye
        cov = 0.5 * (cov + cov.T)

        J_p_bg = J_p_bg + J_v_bg * dt - Phi @ skew(dp_j) @ J_q + f_p_bg
        J_p_ba = J_p_ba + J_v_ba * dt + f_p_ba
        J_v_bg = J_v_bg - Phi @ skew(dv_j) @ J_q + f_v_bg
        J_v_ba = J_v_ba + f_v_ba
        J_q = inc.dR.T @ J_q + f_q_bg

        for n in range(4):
            acc = np.zeros(3)
            for i in range(n + 1):
                acc += comb(n, i) * tau ** (n - i) * inc.mu[i]
            moments[n] += Phi @ acc

        dp = dp + dv * dt + Phi @ dp_j
        dv = dv + Phi @ dv_j
        dq = quat_normalize(quat_multiply(dq, inc.dq))
        Phi = quat_to_rotmat(dq)
        tau += dt

    jacobian = np.zeros((9, 6))
    jacobian[0:3, 0:3] = J_p_bg
    jacobian[0:3, 3:6] = J_p_ba
    jacobian[3:6, 0:3] = J_v_bg
    jacobian[3:6, 3:6] = J_v_ba
    jacobian[6:9, 0:3] = J_q

    return PreintegratedImu(
        t0=samples[0].t,
        t1=samples[-1].t,
        dp=dp,
        dv=dv,
        dq=dq,
        moments=moments,
        lin_bg=lin_bg,
        lin_ba=lin_ba,
        jacobian=jacobian,
        cov=cov,
        samples=tuple(samples),
        noise=noise,
    )


def reintegrate(pre: PreintegratedImu, bg: np.ndarray, ba: np.ndarray) -> PreintegratedImu:
    """Re-run the accumulation at a new linearization point."""
    return integrate(pre.samples, bg, ba, pre.noise)


def merge(first: PreintegratedImu, second: PreintegratedImu) -> PreintegratedImu:
    """
    Single preintegration spanning two adjacent ones.

    The retained samples are re-integrated at the first interval's
    linearization point.

    Raises:
        ContractError: If the intervals are not adjacent
    """
    if abs(first.t1 - second.t0) > TIMESTAMP_TOLERANCE:
        raise ContractError(
            f"Cannot merge preintegrations ending at {first.t1} and starting at {second.t0}"
        )
    samples = list(first.samples) + list(second.samples[1:])
    return integrate(samples, first.lin_bg, first.lin_ba, first.noise)


def bias_deltas(
    pre: PreintegratedImu, bg: np.ndarray, ba: np.ndarray
) -> Tuple[np.ndarray, np.ndarray]:
    return np.asarray(bg) - pre.lin_bg, np.asarray(ba) - pre.lin_ba


def needs_reintegration(
    pre: PreintegratedImu,
    bg: np.ndarray,
    ba: np.ndarray,
    max_gyro_change: float = 1e-3,
    max_accel_change: float = 1e-2,
) -> bool:
    dbg, dba = bias_deltas(pre, bg, ba)
    return bool(
        np.linalg.norm(dbg) > max_gyro_change or np.linalg.norm(dba) > max_accel_change
    )


def _corrected(
    pre: PreintegratedImu, dbg: np.ndarray, dba: np.ndarray
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    dp = pre.dp + pre.J_p_bg @ dbg + pre.J_p_ba @ dba
    dv = pre.dv + pre.J_v_bg @ dbg + pre.J_v_ba @ dba
    dq = quat_normalize(quat_multiply(pre.dq, quat_exp(pre.J_q_bg @ dbg)))
    return dp, dv, dq


def correct_bias(
    pre: PreintegratedImu,
    bg: np.ndarray,
    ba: np.ndarray,
    max_gyro_change: float = 1e-3,
    max_accel_change: float = 1e-2,
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    First-order bias correction of the deltas.

    Returns:
        (dp, dv, dq) at the new biases

    Raises:
        ReintegrationRequired: If the bias moved beyond the thresholds
    """
    if needs_reintegration(pre, bg, ba, max_gyro_change, max_accel_change):
        dbg, dba = bias_deltas(pre, bg, ba)
        raise ReintegrationRequired(
            "Bias change too large for first-order correction",
            gyro_change=float(np.linalg.norm(dbg)),
            accel_change=float(np.linalg.norm(dba)),
        )
    dbg, dba = bias_deltas(pre, bg, ba)
    return _corrected(pre, dbg, dba)


def _check_times(pre: PreintegratedImu, s0: NavState, s1: NavState) -> None:
    if (
        abs(s0.t - pre.t0) > TIMESTAMP_TOLERANCE
        or abs(s1.t - s0.t - pre.dt_total) > TIMESTAMP_TOLERANCE
    ):
        raise ContractError(
            f"States at {s0.t}/{s1.t} do not match preintegration [{pre.t0}, {pre.t1}]",
            t0=pre.t0,
            t1=pre.t1,
        )


@dataclass(frozen=True)
class _ResidualParts:
    r: np.ndarray
    R0: np.ndarray
    omega_b: np.ndarray
    y_p: np.ndarray
    y_v: np.ndarray
    A: np.ndarray
    exp_2wT: np.ndarray
    lead: np.ndarray  # q1⁻¹ ⊗ q_E ⊗ q0
    dq_c: np.ndarray
    q_err: np.ndarray  # lead ⊗ dq_c with non-negative scalar part
    sign: float
    c: np.ndarray  # J_q δbg


def _residual_parts(
    pre: PreintegratedImu,
    s0: NavState,
    s1: NavState,
    frame: WorldFrame,
    compensate_earth_rotation: bool,
) -> _ResidualParts:
    _check_times(pre, s0, s1)
    if not compensate_earth_rotation:
        frame = frame.without_earth_rate()
    T = pre.dt_total
    terms = earth_rotation_terms(frame, T)
    R0 = s0.R
    omega_b = R0.T @ frame.earth_rate

    dbg, dba = bias_deltas(pre, s0.bg, s0.ba)
    dp_c, dv_c, dq_c = _corrected(pre, dbg, dba)
    D_v, D_p = rotated_deltas(dv_c, dp_c, pre.moments, omega_b, T)

    y_p = s1.p - s0.p - terms.A @ s0.v - terms.G_p
    y_v = terms.exp_2wT @ s1.v - s0.v - terms.G_v

    lead = quat_multiply(quat_conjugate(s1.q), quat_multiply(terms.q_earth, s0.q))
    q_err = quat_multiply(lead, dq_c)
    sign = 1.0
    if q_err[0] < 0.0:
        sign = -1.0
        q_err = -q_err

    r = np.zeros(15)
    r[P] = R0.T @ y_p - D_p
    r[TH] = 2.0 * q_err[1:]
    r[V] = R0.T @ y_v - D_v
    r[BG] = s1.bg - s0.bg
    r[BA] = s1.ba - s0.ba
    return _ResidualParts(
        r=r,
        R0=R0,
        omega_b=omega_b,
        y_p=y_p,
        y_v=y_v,
        A=terms.A,
        exp_2wT=terms.exp_2wT,
        lead=lead,
        dq_c=dq_c,
        q_err=q_err,
        sign=sign,
        c=pre.J_q_bg @ dbg,
    )


def residual(
    pre: PreintegratedImu,
    s0: NavState,
    s1: NavState,
    frame: WorldFrame,
    compensate_earth_rotation: bool = True,
) -> np.ndarray:
    """
    Preintegration residual between two node states.

    Blocks are (position, attitude, velocity, gyro bias, accel bias). The
    position and velocity blocks are expressed in the s0 body frame and
    include gravity and the Coriolis correction; the attitude block includes
    the Earth rotation over the interval.

    Raises:
        ContractError: If the state times do not match the interval
    """
    return _residual_parts(pre, s0, s1, frame, compensate_earth_rotation).r


def _d_w1(m: np.ndarray) -> np.ndarray:
    # ∂(ω×m)/∂ω
    return -skew(m)


def _d_w2(w: np.ndarray, m: np.ndarray) -> np.ndarray:
    # ∂(W²m)/∂ω
    return -skew(np.cross(w, m)) - skew(w) @ skew(m)


def _d_w3(w: np.ndarray, m: np.ndarray) -> np.ndarray:
    # ∂(W³m)/∂ω
    W = skew(w)
    return -skew(W @ W @ m) + W @ _d_w2(w, m)


def _rotated_delta_derivatives(
    moments: np.ndarray, w: np.ndarray, T: float
) -> Tuple[np.ndarray, np.ndarray]:
    M0, M1, M2, M3 = moments
    dDv = _d_w1(M1) + 0.5 * _d_w2(w, M2) + _d_w3(w, M3) / 6.0
    N1 = T * M1 - T**2 * M0
    N2 = 0.5 * T * M2 - T**2 * M1 + 2.0 / 3.0 * T**3 * M0 - M3 / 6.0
    N3 = T * M3 / 6.0 - 0.5 * T**2 * M2 + 2.0 / 3.0 * T**3 * M1 - T**4 * M0 / 3.0
    dDp = _d_w1(N1) + _d_w2(w, N2) + _d_w3(w, N3)
    return dDv, dDp


def residual_and_jacobians(
    pre: PreintegratedImu,
    s0: NavState,
    s1: NavState,
    frame: WorldFrame,
    compensate_earth_rotation: bool = True,
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Residual and its Jacobians with respect to the error states of s0 and s1.

    Returns:
        (r, J0, J1), each Jacobian 15×15 in (δp, δθ, δv, δbg, δba) order
    """
    parts = _residual_parts(pre, s0, s1, frame, compensate_earth_rotation)
    R0t = parts.R0.T
    eye = np.eye(3)
    J0 = np.zeros((15, 15))
    J1 = np.zeros((15, 15))

    dDv, dDp = _rotated_delta_derivatives(pre.moments, parts.omega_b, pre.dt_total)
    W = skew(parts.omega_b)

    J0[P, P] = -R0t
    J0[P, TH] = skew(R0t @ parts.y_p) - dDp @ W
    J0[P, V] = -R0t @ parts.A
    J0[P, BG] = -pre.J_p_bg
    J0[P, BA] = -pre.J_p_ba
    J1[P, P] = R0t

    J0[V, TH] = skew(R0t @ parts.y_v) - dDv @ W
    J0[V, V] = -R0t
    J0[V, BG] = -pre.J_v_bg
    J0[V, BA] = -pre.J_v_ba
    J1[V, V] = R0t @ parts.exp_2wT

    qw, qv = parts.q_err[0], parts.q_err[1:]
    J0[TH, TH] = parts.sign * (quat_left(parts.lead) @ quat_right(parts.dq_c))[1:, 1:]
    J0[TH, BG] = (qw * eye + skew(qv)) @ right_jacobian(parts.c) @ pre.J_q_bg
    J1[TH, TH] = -(qw * eye - skew(qv))

    J0[BG, BG] = -eye
    J1[BG, BG] = eye
    J0[BA, BA] = -eye
    J1[BA, BA] = eye
    return parts.r, J0, J1


def residual_jacobians(
    pre: PreintegratedImu,
    s0: NavState,
    s1: NavState,
    frame: WorldFrame,
    compensate_earth_rotation: bool = True,
) -> Tuple[np.ndarray, np.ndarray]:
    """Jacobians (J0, J1) of the residual with respect to both node error states."""
    _, J0, J1 = residual_and_jacobians(pre, s0, s1, frame, compensate_earth_rotation)
    return J0, J1


def sqrt_information(cov: np.ndarray) -> np.ndarray:
    """
    Lower-triangular whitening matrix W with WᵀW = cov⁻¹.

    A tiny diagonal jitter is added until the Cholesky factorization succeeds.
    """
    n = cov.shape[0]
    scale = max(float(np.max(np.diag(cov))), _CHOLESKY_JITTER)
    jitter = 0.0
    for _ in range(10):
        try:
            L = linalg.cholesky(cov + jitter * np.eye(n), lower=True)
            break
        except linalg.LinAlgError:
            jitter = scale * 1e-14 if jitter == 0.0 else jitter * 100.0
    else:
        raise ContractError("Covariance is not positive definite")
    return linalg.solve_triangular(L, np.eye(n), lower=True)


def compose_deltas(
    first: PreintegratedImu, second: PreintegratedImu
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(dp, dv, dq) of two consecutive preintegrations chained together."""
    R = quat_to_rotmat(first.dq)
    dp = first.dp + first.dv * second.dt_total + R @ second.dp
    dv = first.dv + R @ second.dv
    dq = quat_normalize(quat_multiply(first.dq, second.dq))
    return dp, dv, dq
