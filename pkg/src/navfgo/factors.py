"""
Factors of the sliding-window problem and the window's parameter values.

Parameter blocks are keyed ``("state", node_id)`` (15-dim error state),
``("extrinsics",)`` (6-dim, δp then δθ) and ``("depth", landmark_id)``
(inverse depth). Every factor returns residuals already whitened by its
square-root information.
"""

from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Mapping, Sequence, Tuple

import numpy as np

from .geodesy import GeodeticPosition, WorldFrame
from .ins import NavState
from .preintegration import PreintegratedImu, residual_and_jacobians, sqrt_information
from .rotation import right_jacobian_inv, skew
from .solver import BlockGroup, Factor, Key, Linearization, Values
from .visual import Extrinsics, reprojection_batch

STATE = "state"
EXTRINSICS = "extrinsics"
DEPTH = "depth"
EXTRINSICS_KEY: Key = (EXTRINSICS,)


def state_key(node_id: int) -> Key:
    return (STATE, node_id)


def depth_key(landmark_id: int) -> Key:
    return (DEPTH, landmark_id)


@dataclass
class NavValues:
    """Node states, camera extrinsics and landmark inverse depths."""

    states: Dict[int, NavState]
    extrinsics: Extrinsics
    inv_depths: Dict[int, float] = field(default_factory=dict)

    def dim(self, key: Key) -> int:
        if key[0] == STATE:
            return 15
        if key[0] == EXTRINSICS:
            return 6
        return 1

    def retract(self, deltas: Mapping[Key, np.ndarray]) -> "NavValues":
        states = dict(self.states)
        inv_depths = dict(self.inv_depths)
        extrinsics = self.extrinsics
        for key, delta in deltas.items():
            if key[0] == STATE:
                states[key[1]] = states[key[1]].oplus(delta)
            elif key[0] == EXTRINSICS:
                extrinsics = extrinsics.oplus(delta)
            else:
                inv_depths[key[1]] = inv_depths[key[1]] + float(delta[0])
        return NavValues(states, extrinsics, inv_depths)

    def local(self, key: Key, lin: Values) -> Tuple[np.ndarray, np.ndarray]:
        assert isinstance(lin, NavValues)
        if key[0] == STATE:
            delta = self.states[key[1]].ominus(lin.states[key[1]])
            jac = np.eye(15)
            jac[3:6, 3:6] = right_jacobian_inv(delta[3:6])
            return delta, jac
        if key[0] == EXTRINSICS:
            delta = self.extrinsics.ominus(lin.extrinsics)
            jac = np.eye(6)
            jac[3:6, 3:6] = right_jacobian_inv(delta[3:6])
            return delta, jac
        return np.array([self.inv_depths[key[1]] - lin.inv_depths[key[1]]]), np.eye(1)

    def snapshot(self, keys: Iterable[Key]) -> "NavValues":
        states = {}
        inv_depths = {}
        for key in keys:
            if key[0] == STATE:
                states[key[1]] = self.states[key[1]].copy()
            elif key[0] == DEPTH:
                inv_depths[key[1]] = self.inv_depths[key[1]]
        return NavValues(states, self.extrinsics, inv_depths)


class ImuFactor(Factor):
    """Preintegration factor between two consecutive nodes."""

    kind = "imu"

    def __init__(
        self,
        pre: PreintegratedImu,
        node0: int,
        node1: int,
        frame: WorldFrame,
        compensate_earth_rotation: bool = True,
    ) -> None:
        self.pre = pre
        self.node0 = node0
        self.node1 = node1
        self.frame = frame
        self.compensate_earth_rotation = compensate_earth_rotation
        self.sqrt_info = sqrt_information(pre.cov)

    @property
    def keys(self) -> Sequence[Key]:
        return [state_key(self.node0), state_key(self.node1)]

    def linearize(self, values: Values) -> Linearization:
        assert isinstance(values, NavValues)
        r, J0, J1 = residual_and_jacobians(
            self.pre,
            values.states[self.node0],
            values.states[self.node1],
            self.frame,
            self.compensate_earth_rotation,
        )
        W = self.sqrt_info
        rw = W @ r
        return Linearization(
            rw,
            [
                BlockGroup.single(state_key(self.node0), W @ J0),
                BlockGroup.single(state_key(self.node1), W @ J1),
            ],
            0.5 * float(rw @ rw),
        )


@dataclass(frozen=True)
class GnssFix:
    """GNSS position fix; sigma is the per-axis (N, E, D) standard deviation."""

    t: float
    position: GeodeticPosition
    sigma: np.ndarray
    lever_arm: np.ndarray
    valid: bool = True


def gnss_residual(state: NavState, fix: GnssFix, frame: WorldFrame) -> np.ndarray:
    """Antenna position predicted from the state minus the fix, in the world frame."""
    return state.p + state.R @ fix.lever_arm - frame.to_world(fix.position)


def gnss_jacobian(state: NavState, lever_arm: np.ndarray) -> np.ndarray:
    """3×15 Jacobian of the GNSS residual with respect to the error state."""
    J = np.zeros((3, 15))
    J[:, 0:3] = np.eye(3)
    J[:, 3:6] = -state.R @ skew(lever_arm)
    return J


class GnssFactor(Factor):
    kind = "gnss"

    def __init__(self, fix: GnssFix, node: int, frame: WorldFrame) -> None:
        self.fix = fix
        self.node = node
        self.position_w = frame.to_world(fix.position)
        self.whitening = 1.0 / np.asarray(fix.sigma, dtype=float)

    @property
    def keys(self) -> Sequence[Key]:
        return [state_key(self.node)]

    def linearize(self, values: Values) -> Linearization:
        assert isinstance(values, NavValues)
        state = values.states[self.node]
        r = self.whitening * (state.p + state.R @ self.fix.lever_arm - self.position_w)
        J = self.whitening[:, None] * gnss_jacobian(state, self.fix.lever_arm)
        return Linearization(r, [BlockGroup.single(state_key(self.node), J)], 0.5 * float(r @ r))


@dataclass(frozen=True)
class VisualObservationRef:
    """One reprojection term: landmark seen at node, anchored at anchor_node."""

    landmark_id: int
    anchor_node: int
    node: int
    anchor_unit: np.ndarray
    unit: np.ndarray


def huber_weights(squared: np.ndarray, delta: float) -> Tuple[np.ndarray, np.ndarray]:
    """IRLS weights ρ'(s) and costs ρ(s) of the Huber loss on squared norms s."""
    d2 = delta * delta
    root = np.sqrt(np.maximum(squared, 1e-300))
    inlier = squared <= d2
    weights = np.where(inlier, 1.0, delta / root)
    costs = np.where(inlier, squared, 2.0 * delta * root - d2)
    return weights, costs


class VisualFactorSet(Factor):
    """
    All reprojection factors of a window, evaluated as one batch.

    Residuals are whitened by focal/pixel_sigma; with Huber enabled each
    observation is re-weighted by the square root of the loss derivative.
    """

    kind = "visual"

    def __init__(
        self,
        observations: Sequence[VisualObservationRef],
        whitening: float,
        huber_delta: float = 1.0,
        use_huber: bool = True,
    ) -> None:
        self.observations = list(observations)
        self.whitening = whitening
        self.huber_delta = huber_delta
        self.use_huber = use_huber
        self._anchor_unit = np.array([o.anchor_unit for o in self.observations]).reshape(-1, 2)
        self._unit = np.array([o.unit for o in self.observations]).reshape(-1, 2)
        # States are gathered once per node and indexed per observation
        self._nodes = sorted(
            {o.anchor_node for o in self.observations} | {o.node for o in self.observations}
        )
        index = {node: k for k, node in enumerate(self._nodes)}
        self._anchor_index = np.array([index[o.anchor_node] for o in self.observations], dtype=int)
        self._node_index = np.array([index[o.node] for o in self.observations], dtype=int)
        self._landmarks = [o.landmark_id for o in self.observations]
        self._anchor_keys = [state_key(o.anchor_node) for o in self.observations]
        self._node_keys = [state_key(o.node) for o in self.observations]
        self._depth_keys = [depth_key(o.landmark_id) for o in self.observations]
        self._rows = np.arange(2 * len(self.observations)).reshape(-1, 2)
        keys: Dict[Key, None] = {}
        for o in self.observations:
            keys.setdefault(state_key(o.anchor_node), None)
            keys.setdefault(state_key(o.node), None)
            keys.setdefault(depth_key(o.landmark_id), None)
        if self.observations:
            keys.setdefault(EXTRINSICS_KEY, None)
        self._keys = list(keys)

    def __len__(self) -> int:
        return len(self.observations)

    @property
    def keys(self) -> Sequence[Key]:
        return self._keys

    def _gather(self, values: NavValues) -> Tuple[np.ndarray, ...]:
        states = [values.states[node] for node in self._nodes]
        R = np.array([s.R for s in states])
        p = np.array([s.p for s in states])
        inv_depth = np.array([values.inv_depths[lm] for lm in self._landmarks], dtype=float)
        a, b = self._anchor_index, self._node_index
        return R[a], p[a], R[b], p[b], inv_depth

    def whitened_squared_errors(self, values: Values) -> np.ndarray:
        """Per-observation r̃ᵀr̃ without robust re-weighting (chi-square statistic)."""
        assert isinstance(values, NavValues)
        if not self.observations:
            return np.zeros(0)
        R_i, p_i, R_j, p_j, inv_depth = self._gather(values)
        batch = reprojection_batch(
            R_i, p_i, R_j, p_j, values.extrinsics, inv_depth,
            self._anchor_unit, self._unit, with_jacobians=False,
        )
        rw = self.whitening * batch.residual
        return np.einsum("ni,ni->n", rw, rw)

    def _robust(self, squared: np.ndarray) -> Tuple[np.ndarray, float]:
        if not self.use_huber:
            return np.ones_like(squared), 0.5 * float(np.sum(squared))
        weights, costs = huber_weights(squared, self.huber_delta)
        return weights, 0.5 * float(np.sum(costs))

    def cost(self, values: Values) -> float:
        if not self.observations:
            return 0.0
        return self._robust(self.whitened_squared_errors(values))[1]

    def linearize(self, values: Values) -> Linearization:
        assert isinstance(values, NavValues)
        n = len(self.observations)
        if n == 0:
            return Linearization(np.zeros(0), [], 0.0)
        R_i, p_i, R_j, p_j, inv_depth = self._gather(values)
        batch = reprojection_batch(
            R_i, p_i, R_j, p_j, values.extrinsics, inv_depth, self._anchor_unit, self._unit
        )
        rw = self.whitening * batch.residual
        squared = np.einsum("ni,ni->n", rw, rw)
        weights, cost = self._robust(squared)
        scale = self.whitening * np.sqrt(weights)

        residual = (np.sqrt(weights)[:, None] * rw).reshape(-1)

        # Only the (δp, δθ) columns of the state blocks are non-zero
        J_i = np.concatenate([batch.p_i, batch.theta_i], axis=2)
        J_j = np.concatenate([batch.p_j, batch.theta_j], axis=2)
        J_e = np.concatenate([batch.p_bc, batch.theta_bc], axis=2)
        J_d = batch.inv_depth[:, :, None]
        s = scale[:, None, None]

        groups = [
            BlockGroup(self._anchor_keys, self._rows, s * J_i),
            BlockGroup(self._node_keys, self._rows, s * J_j),
            BlockGroup(self._depth_keys, self._rows, s * J_d),
            BlockGroup([EXTRINSICS_KEY] * n, self._rows, s * J_e),
        ]
        return Linearization(residual, groups, cost)


def count_factors(factors: Sequence[Factor]) -> Dict[str, int]:
    """Factor counts per kind; a visual set counts each observation."""
    counts: Dict[str, int] = {"prior": 0, "imu": 0, "visual": 0, "gnss": 0}
    for factor in factors:
        if isinstance(factor, VisualFactorSet):
            counts["visual"] += len(factor)
        else:
            counts[factor.kind] = counts.get(factor.kind, 0) + 1
    return counts


def factors_touching(factors: Sequence[Factor], keys: Iterable[Key]) -> List[Factor]:
    wanted = set(keys)
    return [f for f in factors if wanted.intersection(f.keys)]
