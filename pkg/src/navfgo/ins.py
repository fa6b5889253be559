"""
Strapdown INS mechanization in the local NED world frame.

The world frame is Earth-fixed, so the kinematic model carries the Coriolis
term and the Earth rotation seen from the body:

    ṗ = v
    v̇ = R f + g − 2 [ω_ie×] v
    Ṙ = R [ω_ib×] − [ω_ie×] R

Within a sample interval the gyro rate is the trapezoidal mean and the
bias-free specific force is linear in the interval's start body frame. With
that force model the equations above have a closed-form solution in terms
of the moments M_n = ∫ tⁿ a(t) dt, which is shared with the preintegration
so a mechanized trajectory satisfies the preintegration residual.
"""

import math
import threading
from dataclasses import dataclass, field
from typing import List, Sequence, Tuple

import numpy as np

from .errors import CoverageError, InputError
from .geodesy import WorldFrame
from .rotation import (
    quat_conjugate,
    quat_exp,
    quat_log,
    quat_multiply,
    quat_normalize,
    quat_to_rotmat,
    skew,
    so3_exp,
)

TIME_EPS = 1e-9
SERIES_TERMS = 8


@dataclass(frozen=True)
class ImuSample:
    """One IMU sample: ω_ib^b in rad/s and f^b in m/s²."""

    t: float
    angular_rate: np.ndarray
    specific_force: np.ndarray


@dataclass
class NavState:
    """INS state in the world frame; q_wb is scalar-first and body-to-world."""

    t: float
    p: np.ndarray
    v: np.ndarray
    q: np.ndarray
    bg: np.ndarray = field(default_factory=lambda: np.zeros(3))
    ba: np.ndarray = field(default_factory=lambda: np.zeros(3))

    @property
    def R(self) -> np.ndarray:
        return quat_to_rotmat(self.q)

    def copy(self) -> "NavState":
        return NavState(
            self.t, self.p.copy(), self.v.copy(), self.q.copy(), self.bg.copy(), self.ba.copy()
        )

    def oplus(self, delta: np.ndarray) -> "NavState":
        """Apply a 15-dim error (δp, δθ, δv, δbg, δba); attitude on the right."""
        return NavState(
            self.t,
            self.p + delta[0:3],
            self.v + delta[6:9],
            quat_normalize(quat_multiply(self.q, quat_exp(delta[3:6]))),
            self.bg + delta[9:12],
            self.ba + delta[12:15],
        )

    def ominus(self, other: "NavState") -> np.ndarray:
        """Error such that other.oplus(error) == self."""
        return np.concatenate(
            [
                self.p - other.p,
                quat_log(quat_multiply(quat_conjugate(other.q), self.q)),
                self.v - other.v,
                self.bg - other.bg,
                self.ba - other.ba,
            ]
        )

    def biases_within(self, max_bg: float, max_ba: float) -> bool:
        return bool(
            np.all(np.abs(self.bg) < max_bg) and np.all(np.abs(self.ba) < max_ba)
        )


@dataclass(frozen=True)
class EarthRotationTerms:
    """Interval-length dependent terms of the closed-form solution."""

    A: np.ndarray
    G_v: np.ndarray
    G_p: np.ndarray
    exp_2wT: np.ndarray
    q_earth: np.ndarray


def earth_rotation_terms(frame: WorldFrame, T: float) -> EarthRotationTerms:
    """Series A = Σ(−2Ω)ⁿTⁿ⁺¹/(n+1)!, G_v = Σ(2Ω)ⁿgTⁿ⁺¹/(n+1)!, G_p = Σ(−2Ω)ⁿgTⁿ⁺²/(n+2)!."""
    omega = frame.earth_rate
    g = frame.gravity
    two_w = 2.0 * skew(omega)
    A = np.zeros((3, 3))
    G_v = np.zeros(3)
    G_p = np.zeros(3)
    pos = np.eye(3)  # (2Ω)ⁿ
    neg = np.eye(3)  # (−2Ω)ⁿ
    for n in range(SERIES_TERMS):
        A += neg * T ** (n + 1) / math.factorial(n + 1)
        G_v += pos @ g * T ** (n + 1) / math.factorial(n + 1)
        G_p += neg @ g * T ** (n + 2) / math.factorial(n + 2)
        pos = pos @ two_w
        neg = -neg @ two_w
    return EarthRotationTerms(
        A=A,
        G_v=G_v,
        G_p=G_p,
        exp_2wT=so3_exp(2.0 * omega * T),
        q_earth=quat_exp(-omega * T),
    )


def rotated_deltas(
    dv: np.ndarray, dp: np.ndarray, moments: np.ndarray, omega_b: np.ndarray, T: float
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Body-frame velocity and position increments including Earth rotation.

    Args:
        dv: M0 (possibly bias-corrected)
        dp: T·M0 − M1 (possibly bias-corrected)
        moments: (4, 3) array of M0..M3
        omega_b: Earth rate in the interval start body frame
        T: Interval length

    Returns:
        (D_v, D_p)
    """
    W = skew(omega_b)
    W2 = W @ W
    W3 = W2 @ W
    M0, M1, M2, M3 = moments
    D_v = dv + W @ M1 + 0.5 * W2 @ M2 + W3 @ M3 / 6.0
    N1 = T * M1 - T**2 * M0
    N2 = 0.5 * T * M2 - T**2 * M1 + 2.0 / 3.0 * T**3 * M0 - M3 / 6.0
    N3 = T * M3 / 6.0 - 0.5 * T**2 * M2 + 2.0 / 3.0 * T**3 * M1 - T**4 * M0 / 3.0
    D_p = dp + W @ N1 + W2 @ N2 + W3 @ N3
    return D_v, D_p


@dataclass(frozen=True)
class IntervalIncrement:
    """Quantities of one sample interval, bias-corrected at (bg, ba)."""

    dt: float
    dq: np.ndarray
    dR: np.ndarray
    omega: np.ndarray
    a0: np.ndarray
    a1: np.ndarray
    u1: np.ndarray
    mu: np.ndarray  # (4, 3): ∫τⁱ a dτ


def interval_increment(
    prev: ImuSample, cur: ImuSample, bg: np.ndarray, ba: np.ndarray
) -> IntervalIncrement:
    dt = cur.t - prev.t
    omega = 0.5 * (prev.angular_rate + cur.angular_rate) - bg
    dq = quat_exp(omega * dt)
    dR = quat_to_rotmat(dq)
    a0 = prev.specific_force - ba
    u1 = cur.specific_force - ba
    a1 = dR @ u1
    mu = np.array(
        [dt ** (i + 1) * (a0 / ((i + 1) * (i + 2)) + a1 / (i + 2)) for i in range(4)]
    )
    return IntervalIncrement(dt, dq, dR, omega, a0, a1, u1, mu)


def mechanize_step(
    state: NavState, prev: ImuSample, cur: ImuSample, frame: WorldFrame
) -> NavState:
    """
    Advance state from prev.t to cur.t.

    Biases held in the state are removed from the raw samples first.

    Raises:
        InputError: If timestamps are not increasing
    """
    if cur.t <= prev.t or cur.t <= state.t:
        raise InputError(
            f"Non-monotonic IMU timestamps: {prev.t} -> {cur.t} (state at {state.t})",
            t=cur.t,
        )
    inc = interval_increment(prev, cur, state.bg, state.ba)
    dt = inc.dt
    terms = earth_rotation_terms(frame, dt)
    R = state.R
    dp = dt * dt * (inc.a0 / 3.0 + inc.a1 / 6.0)
    D_v, D_p = rotated_deltas(inc.mu[0], dp, inc.mu, R.T @ frame.earth_rate, dt)

    p = state.p + terms.A @ state.v + terms.G_p + R @ D_p
    v = terms.exp_2wT.T @ (state.v + terms.G_v + R @ D_v)
    q = quat_normalize(quat_multiply(terms.q_earth, quat_multiply(state.q, inc.dq)))
    return NavState(cur.t, p, v, q, state.bg.copy(), state.ba.copy())


def interpolate_sample(a: ImuSample, b: ImuSample, t: float) -> ImuSample:
    """Linear interpolation between two bracketing samples."""
    if abs(t - a.t) < TIME_EPS:
        return a
    if abs(t - b.t) < TIME_EPS:
        return b
    w = (t - a.t) / (b.t - a.t)
    return ImuSample(
        t,
        (1.0 - w) * a.angular_rate + w * b.angular_rate,
        (1.0 - w) * a.specific_force + w * b.specific_force,
    )


def samples_between(
    buffer: Sequence[ImuSample], t0: float, t1: float, max_gap: float = 0.05
) -> List[ImuSample]:
    """
    Samples spanning [t0, t1] with interpolated end points.

    Raises:
        CoverageError: If the buffer does not cover the interval or has a gap
            larger than max_gap inside it
    """
    if t1 < t0:
        raise InputError(f"Interval end {t1} precedes start {t0}", t=t1)
    if not buffer or buffer[0].t > t0 + TIME_EPS or buffer[-1].t < t1 - TIME_EPS:
        first = buffer[0].t if buffer else None
        last = buffer[-1].t if buffer else None
        raise CoverageError(
            f"IMU buffer [{first}, {last}] does not cover [{t0}, {t1}]",
            t0=t0,
            t1=t1,
        )
    times = np.fromiter((s.t for s in buffer), dtype=float, count=len(buffer))
    lo = int(np.searchsorted(times, t0 + TIME_EPS, side="right")) - 1
    hi = int(np.searchsorted(times, t1 - TIME_EPS, side="left"))
    lo = max(lo, 0)
    hi = min(hi, len(buffer) - 1)
    if hi - lo >= 1:
        gaps = np.diff(times[lo : hi + 1])
        if gaps.size and float(gaps.max()) > max_gap + TIME_EPS:
            raise CoverageError(
                f"IMU gap of {gaps.max():.3f}s exceeds {max_gap}s",
                gap_seconds=float(gaps.max()),
            )

    out = [interpolate_sample(buffer[lo], buffer[min(lo + 1, len(buffer) - 1)], t0)]
    for s in buffer[lo + 1 : hi]:
        if s.t > t0 + TIME_EPS and s.t < t1 - TIME_EPS:
            out.append(s)
    if t1 - t0 > TIME_EPS:
        out.append(interpolate_sample(buffer[max(hi - 1, 0)], buffer[hi], t1))
    return out


def propagate_to(
    state: NavState,
    buffer: Sequence[ImuSample],
    t: float,
    frame: WorldFrame,
    max_gap: float = 0.05,
) -> NavState:
    """
    Mechanize state forward to time t through the buffered samples.

    Raises:
        CoverageError: If the buffer does not cover [state.t, t]
        InputError: If t precedes the state time
    """
    if abs(t - state.t) < TIME_EPS:
        return state
    if t < state.t:
        raise InputError(f"Cannot propagate backwards from {state.t} to {t}", t=t)
    samples = samples_between(buffer, state.t, t, max_gap)
    current = state
    for prev, cur in zip(samples[:-1], samples[1:]):
        current = mechanize_step(current, prev, cur, frame)
    return current


class InsNavigator:
    """
    Real-time INS: owns the IMU buffer and the anchor state.

    The anchor is the newest optimized state; every incoming sample is
    mechanized from it and the result is published as the real-time state.
    """

    def __init__(
        self, frame: WorldFrame, anchor: NavState, max_gap: float = 0.05
    ) -> None:
        self.frame = frame
        self.max_gap = max_gap
        self._buffer: List[ImuSample] = []
        self._anchor = anchor
        self._current = anchor
        self._lock = threading.Lock()
        self._published = anchor

    @property
    def anchor(self) -> NavState:
        return self._anchor

    @property
    def current(self) -> NavState:
        return self._current

    @property
    def buffer(self) -> List[ImuSample]:
        return self._buffer

    def add_sample(self, sample: ImuSample) -> NavState:
        """Buffer a sample and return the real-time state at its timestamp."""
        if self._buffer and sample.t <= self._buffer[-1].t:
            raise InputError(
                f"Non-monotonic IMU timestamp {sample.t} after {self._buffer[-1].t}",
                t=sample.t,
            )
        self._buffer.append(sample)
        if len(self._buffer) >= 2 and sample.t > self._current.t + TIME_EPS:
            recent = (
                self._buffer[-2:]
                if self._buffer[-2].t <= self._current.t + TIME_EPS
                else self._buffer
            )
            self._current = propagate_to(
                self._current, recent, sample.t, self.frame, self.max_gap
            )
        self._publish(self._current)
        return self._current

    def extend(self, samples: Sequence[ImuSample]) -> NavState:
        for sample in samples:
            self.add_sample(sample)
        return self._current

    def reset_anchor(self, state: NavState) -> NavState:
        """
        Replace the anchor with an optimized state and re-propagate.

        Samples older than the one bracketing the anchor are dropped.
        """
        self._anchor = state
        times = [s.t for s in self._buffer]
        keep_from = max(int(np.searchsorted(times, state.t + TIME_EPS, side="right")) - 1, 0)
        self._buffer = self._buffer[keep_from:]
        if self._buffer and self._buffer[-1].t > state.t + TIME_EPS:
            self._current = propagate_to(
                state, self._buffer, self._buffer[-1].t, self.frame, self.max_gap
            )
        else:
            self._current = state
        self._publish(self._current)
        return self._current

    def state_at(self, t: float) -> NavState:
        """State at t, propagated from the anchor."""
        return propagate_to(self._anchor, self._buffer, t, self.frame, self.max_gap)

    def samples_between(self, t0: float, t1: float) -> List[ImuSample]:
        return samples_between(self._buffer, t0, t1, self.max_gap)

    def snapshot(self) -> NavState:
        """Latest published real-time state."""
        with self._lock:
            return self._published

    def _publish(self, state: NavState) -> None:
        with self._lock:
            self._published = state
