"""
Sliding-window estimator.

Owns the window of time nodes, landmarks and preintegrations, assembles the
factor graph, runs the two-step optimization with chi-square gating, culls
outliers, removes observation frames, marginalizes the oldest node and feeds
the newest optimized state back to the INS.
"""

import enum
from dataclasses import dataclass, field, replace
from typing import Any, Dict, List, Mapping, Optional, Sequence, Set, Tuple

import numpy as np
from scipy.stats import chi2

from .config import RunConfig
from .errors import ContractError, InputError, PredictionInvalidError
from .factors import (
    EXTRINSICS_KEY,
    GnssFactor,
    GnssFix,
    ImuFactor,
    NavValues,
    VisualFactorSet,
    VisualObservationRef,
    count_factors,
    factors_touching,
    state_key,
)
from .geodesy import WorldFrame
from .ins import InsNavigator, NavState
from .logging import get_logger
from .preintegration import (
    TIMESTAMP_TOLERANCE,
    PreintegratedImu,
    integrate,
    merge,
    needs_reintegration,
    reintegrate,
)
from .rotation import quat_to_rotmat
from .solver import (
    Factor,
    MarginalizationPrior,
    PriorFactor,
    SolverConfig,
    levenberg_marquardt,
)
from .solver import marginalize as marginalize_factors
from .timing import Timer
from .visual import (
    CameraModel,
    Extrinsics,
    FeatureObservation,
    Landmark,
    LandmarkStatus,
    gate_observation,
    landmark_world_positions,
    observation_depths_and_errors,
    predict_observation,
    triangulate,
)

logger = get_logger(__name__)

VISUAL_DOF = 2


class NodeKind(enum.Flag):
    KEYFRAME = enum.auto()
    GNSS_EPOCH = enum.auto()
    OBSERVATION_FRAME = enum.auto()


@dataclass
class TimeNode:
    """A state in the window; one node may be both a keyframe and a GNSS epoch."""

    id: int
    t: float
    kind: NodeKind
    state: NavState
    frame_id: Optional[int] = None
    fix: Optional[GnssFix] = None

    @property
    def is_keyframe(self) -> bool:
        return bool(self.kind & NodeKind.KEYFRAME)

    @property
    def is_observation_frame(self) -> bool:
        return bool(self.kind & NodeKind.OBSERVATION_FRAME)

    @property
    def has_valid_fix(self) -> bool:
        return self.fix is not None and self.fix.valid


@dataclass
class SlidingWindow:
    """
    The estimated state: nodes, extrinsics, landmarks, preintegrations and prior.

    ``preints[k]`` spans ``nodes[k]`` to ``nodes[k + 1]``.
    """

    frame: WorldFrame
    nodes: List[TimeNode]
    extrinsics: Extrinsics
    landmarks: Dict[int, Landmark] = field(default_factory=dict)
    preints: List[PreintegratedImu] = field(default_factory=list)
    prior: Optional[MarginalizationPrior] = None
    next_node_id: int = 0

    def __post_init__(self) -> None:
        if self.nodes:
            self.next_node_id = max(self.next_node_id, max(n.id for n in self.nodes) + 1)

    @property
    def newest(self) -> TimeNode:
        return self.nodes[-1]

    @property
    def fixes(self) -> List[GnssFix]:
        return [n.fix for n in self.nodes if n.fix is not None and n.fix.valid]

    def node(self, node_id: int) -> TimeNode:
        for node in self.nodes:
            if node.id == node_id:
                return node
        raise KeyError(node_id)

    def node_ids(self) -> List[int]:
        return [n.id for n in self.nodes]

    def keyframe_states(self) -> Dict[int, NavState]:
        return {n.id: n.state for n in self.nodes if n.is_keyframe}

    def states(self) -> Dict[int, NavState]:
        return {n.id: n.state for n in self.nodes}

    def allocate_id(self) -> int:
        node_id = self.next_node_id
        self.next_node_id += 1
        return node_id

    def values(self) -> NavValues:
        ids = set(self.node_ids())
        inv_depths = {
            lm.id: lm.inv_depth
            for lm in self.landmarks.values()
            if lm.is_triangulated and lm.ref_keyframe in ids
        }
        return NavValues(self.states(), self.extrinsics, inv_depths)

    def apply(self, values: NavValues) -> None:
        """Write optimized values back into the window."""
        for node in self.nodes:
            if node.id in values.states:
                node.state = values.states[node.id]
        self.extrinsics = values.extrinsics
        for lm_id, inv_depth in values.inv_depths.items():
            if lm_id in self.landmarks:
                self.landmarks[lm_id].inv_depth = inv_depth

    def valid_landmark_count(self) -> int:
        ids = set(self.node_ids())
        return sum(
            1 for lm in self.landmarks.values() if lm.is_triangulated and lm.ref_keyframe in ids
        )

    def check_invariants(self) -> None:
        """
        Raises:
            ContractError: If nodes are out of order or a preintegration does not
                span its node pair
        """
        if len(self.preints) != max(len(self.nodes) - 1, 0):
            raise ContractError(
                f"{len(self.preints)} preintegrations for {len(self.nodes)} nodes"
            )
        for k, pre in enumerate(self.preints):
            n0, n1 = self.nodes[k], self.nodes[k + 1]
            if n1.t <= n0.t:
                raise ContractError(f"Nodes {n0.id} and {n1.id} are not ordered in time")
            if abs(pre.t0 - n0.t) > TIMESTAMP_TOLERANCE or abs(pre.t1 - n1.t) > TIMESTAMP_TOLERANCE:
                raise ContractError(
                    f"Preintegration [{pre.t0}, {pre.t1}] does not span nodes "
                    f"{n0.id} ({n0.t}) and {n1.id} ({n1.t})"
                )


@dataclass
class MeasurementEvent:
    """A new node request: keyframe, observation frame and/or GNSS epoch."""

    t: float
    kind: NodeKind
    frame_id: Optional[int] = None
    observations: Dict[int, FeatureObservation] = field(default_factory=dict)
    fix: Optional[GnssFix] = None


@dataclass
class InsertionReport:
    node: TimeNode
    merged: bool = False
    gated: int = 0
    triangulated: int = 0


@dataclass
class OptimizationReport:
    """Per-optimization diagnostics."""

    t: float
    node_count: int = 0
    landmark_count: int = 0
    valid_landmarks: int = 0
    factor_counts: Dict[str, int] = field(default_factory=dict)
    cost_before: float = 0.0
    cost_after: float = 0.0
    iterations: int = 0
    chi2_rejected: int = 0
    culled_observations: int = 0
    culled_landmarks: int = 0
    reintegrated: int = 0
    diverged: bool = False
    converged: bool = True
    regularized: bool = False
    removed_observation_frames: int = 0
    marginalized: int = 0
    optimize_ms: float = 0.0
    marginalize_ms: float = 0.0

    def to_dict(self) -> Dict[str, Any]:
        data: Dict[str, Any] = {
            "t": self.t,
            "node_count": self.node_count,
            "landmark_count": self.landmark_count,
            "valid_landmarks": self.valid_landmarks,
            "cost_before": self.cost_before,
            "cost_after": self.cost_after,
            "iterations": self.iterations,
            "chi2_rejected": self.chi2_rejected,
            "culled_observations": self.culled_observations,
            "culled_landmarks": self.culled_landmarks,
            "reintegrated": self.reintegrated,
            "diverged": self.diverged,
            "converged": self.converged,
            "regularized": self.regularized,
            "removed_observation_frames": self.removed_observation_frames,
            "marginalized": self.marginalized,
            "optimize_ms": self.optimize_ms,
            "marginalize_ms": self.marginalize_ms,
        }
        for kind, count in self.factor_counts.items():
            data[f"{kind}_factors"] = count
        return data


def chi2_threshold(confidence: float, dof: int = VISUAL_DOF) -> float:
    """Chi-square quantile used to gate visual factors (5.991 at 95 %, 2 dof)."""
    return float(chi2.ppf(confidence, dof))


def yaw_gauge(state: NavState) -> np.ndarray:
    """Constraint rows (4×15) fixing the position and yaw of a node."""
    C = np.zeros((4, 15))
    C[0:3, 0:3] = np.eye(3)
    # yaw is the world-z component of the right-perturbation rotation
    C[3, 3:6] = quat_to_rotmat(state.q)[2, :]
    return C


class Estimator:
    """
    Sliding-window GNSS/visual/inertial estimator.

    Args:
        window: Initialized window (from the initializer)
        config: Run configuration
        camera: Camera model for gating, parallax and culling
        navigator: Real-time INS providing prior states and IMU samples
    """

    def __init__(
        self,
        window: SlidingWindow,
        config: RunConfig,
        camera: CameraModel,
        navigator: InsNavigator,
    ) -> None:
        self.window = window
        self.config = config
        self.camera = camera
        self.navigator = navigator
        self.use_gnss = True
        self.removed_landmarks: Set[int] = set()
        # (frame_id, feature_id) of every gated, rejected or culled observation
        self.flagged: Set[Tuple[int, int]] = set()
        self.retired: List[TimeNode] = []
        est = config.estimator
        self.solver_config = SolverConfig(
            max_iterations=est.max_iterations, use_schur=est.use_schur
        )
        self.chi2_gate = chi2_threshold(est.chi2_confidence)
        self.whitening = camera.focal / config.visual.pixel_sigma

    # -- insertion ---------------------------------------------------------

    def insert_measurement(self, event: MeasurementEvent) -> InsertionReport:
        """
        Append a node at the event time, or merge into the newest node when the
        times coincide.

        Raises:
            InputError: If the event is older than the newest node
        """
        window = self.window
        newest = window.newest
        if event.t < newest.t - TIMESTAMP_TOLERANCE:
            raise InputError(
                f"Event at {event.t} precedes newest node at {newest.t}", t=event.t
            )

        if abs(event.t - newest.t) <= TIMESTAMP_TOLERANCE:
            node = newest
            node.kind |= event.kind
            merged = True
        else:
            state = self.navigator.state_at(event.t)
            samples = self.navigator.samples_between(newest.t, event.t)
            pre = integrate(samples, newest.state.bg, newest.state.ba, self.config.imu_noise)
            node = TimeNode(window.allocate_id(), event.t, event.kind, state)
            window.nodes.append(node)
            window.preints.append(pre)
            merged = False

        if event.frame_id is not None:
            node.frame_id = event.frame_id
        if event.fix is not None:
            node.fix = event.fix
        gated = self._add_observations(node, event.observations)
        triangulated = self.triangulate_landmarks() if node.is_keyframe else 0
        window.check_invariants()
        return InsertionReport(node, merged, gated, triangulated)

    def _add_observations(
        self, node: TimeNode, observations: Mapping[int, FeatureObservation]
    ) -> int:
        window = self.window
        ids = set(window.node_ids())
        gate = self.config.visual.ins_aided_gating
        gated = 0
        for feature_id, obs in observations.items():
            if feature_id in self.removed_landmarks:
                self.flagged.add((obs.frame_id, feature_id))
                continue
            lm = window.landmarks.get(feature_id)
            if lm is None:
                lm = Landmark(feature_id)
                window.landmarks[feature_id] = lm
            elif gate and lm.is_triangulated and lm.ref_keyframe in ids:
                anchor = window.node(lm.ref_keyframe).state
                try:
                    predicted = predict_observation(
                        node.state, window.extrinsics, lm, self.camera, anchor
                    )
                    accepted = gate_observation(
                        predicted, obs.pixel, self.config.visual.gate_radius
                    )
                except PredictionInvalidError:
                    accepted = False
                if not accepted:
                    gated += 1
                    self.flagged.add((obs.frame_id, feature_id))
                    continue
            lm.add_observation(node.id, obs)
        return gated

    def triangulate_landmarks(self) -> int:
        """Triangulate candidate landmarks from the prior keyframe poses."""
        window = self.window
        poses = window.keyframe_states()
        count = 0
        for lm_id, lm in list(window.landmarks.items()):
            if lm.status is not LandmarkStatus.CANDIDATE:
                continue
            updated = triangulate(lm, poses, window.extrinsics, self.camera, self.config.visual)
            if updated.status is LandmarkStatus.TRIANGULATED:
                count += 1
            window.landmarks[lm_id] = updated
        return count

    # -- problem -----------------------------------------------------------

    def visual_observations(self) -> List[VisualObservationRef]:
        """One reference per (triangulated landmark, non-anchor usable observation)."""
        window = self.window
        ids = window.node_ids()
        id_set = set(ids)
        refs = []
        for lm in window.landmarks.values():
            if not lm.is_triangulated or lm.ref_keyframe not in id_set:
                continue
            anchor_unit = lm.anchor_observation.unit_plane
            for node_id in lm.usable_frames(ids):
                if node_id == lm.ref_keyframe:
                    continue
                refs.append(
                    VisualObservationRef(
                        lm.id,
                        lm.ref_keyframe,
                        node_id,
                        anchor_unit,
                        lm.observations[node_id].unit_plane,
                    )
                )
        return refs

    def build_problem(
        self, exclude: Optional[Set[Tuple[int, int]]] = None
    ) -> List[Factor]:
        """
        Factors of the current window.

        Args:
            exclude: (landmark_id, node_id) visual observations left out

        Returns:
            Prior, preintegration, visual (one batched set) and GNSS factors
        """
        window = self.window
        est = self.config.estimator
        factors: List[Factor] = []
        if window.prior is not None:
            factors.append(PriorFactor(window.prior))
        for k, pre in enumerate(window.preints):
            factors.append(
                ImuFactor(
                    pre,
                    window.nodes[k].id,
                    window.nodes[k + 1].id,
                    window.frame,
                    est.compensate_earth_rotation,
                )
            )
        refs = self.visual_observations()
        if exclude:
            refs = [r for r in refs if (r.landmark_id, r.node) not in exclude]
        if refs:
            factors.append(
                VisualFactorSet(refs, self.whitening, est.huber_delta, est.huber)
            )
        if self.use_gnss:
            for node in window.nodes:
                if node.has_valid_fix:
                    assert node.fix is not None
                    factors.append(GnssFactor(node.fix, node.id, window.frame))
        return factors

    def _fixed_keys(self) -> List[Any]:
        return [] if self.config.estimator.estimate_extrinsics else [EXTRINSICS_KEY]

    def _gauge(self, factors: Sequence[Factor]) -> Optional[Dict[Any, np.ndarray]]:
        if any(f.kind in ("prior", "gnss") for f in factors):
            return None
        first = self.window.nodes[0]
        return {state_key(first.id): yaw_gauge(first.state)}

    # -- optimization ------------------------------------------------------

    def reintegrate_preintegrations(self) -> int:
        """Re-integrate preintegrations whose start bias moved past the thresholds."""
        est = self.config.estimator
        count = 0
        for k, pre in enumerate(self.window.preints):
            state = self.window.nodes[k].state
            if needs_reintegration(
                pre, state.bg, state.ba, est.reintegrate_gyro_bias, est.reintegrate_accel_bias
            ):
                self.window.preints[k] = reintegrate(pre, state.bg, state.ba)
                count += 1
        return count

    def optimize(self) -> OptimizationReport:
        """
        Two-step optimization followed by outlier culling.

        Step one solves the full problem; visual factors whose whitened squared
        error exceeds the chi-square gate are then dropped from the problem
        (not from the map) and the problem is solved again.
        """
        window = self.window
        timer = Timer()
        report = OptimizationReport(t=window.newest.t)
        report.reintegrated = self.reintegrate_preintegrations()

        fixed = self._fixed_keys()
        factors = self.build_problem()
        values = window.values()
        first = levenberg_marquardt(
            factors, values, self.solver_config, fixed, "depth", self._gauge(factors)
        )
        report.cost_before = first.cost_before
        report.iterations = first.iterations
        values = first.values
        diverged = first.diverged
        converged = first.converged

        excluded: Set[Tuple[int, int]] = set()
        for factor in factors:
            if isinstance(factor, VisualFactorSet) and len(factor):
                errors = factor.whitened_squared_errors(values)
                for ref, err in zip(factor.observations, errors):
                    if err > self.chi2_gate:
                        excluded.add((ref.landmark_id, ref.node))
        report.chi2_rejected = len(excluded)
        for lm_id, node_id in excluded:
            self.flagged.add((window.landmarks[lm_id].observations[node_id].frame_id, lm_id))

        final_cost = first.cost_after
        if excluded:
            window.apply(values)
            factors = self.build_problem(exclude=excluded)
            second = levenberg_marquardt(
                factors, values, self.solver_config, fixed, "depth", self._gauge(factors)
            )
            values = second.values
            final_cost = second.cost_after
            report.iterations += second.iterations
            diverged = diverged or second.diverged
            converged = second.converged

        window.apply(values)
        report.cost_after = final_cost
        report.diverged = diverged
        report.converged = converged
        report.factor_counts = count_factors(factors)
        report.culled_observations, report.culled_landmarks = self.cull_outliers()
        report.node_count = len(window.nodes)
        report.landmark_count = len(window.landmarks)
        report.valid_landmarks = window.valid_landmark_count()
        report.optimize_ms = timer.elapsed_ms()
        if diverged:
            logger.warning(
                "Optimization diverged; keeping last good state",
                extra={"operation": "optimize", "t": report.t, "cost": final_cost},
            )
        return report

    def cull_outliers(self) -> Tuple[int, int]:
        """
        Mark bad observations and remove bad landmarks.

        An observation is an outlier when the landmark depth in its camera is
        outside the depth gate or its pixel error exceeds the reprojection
        gate. A landmark is removed when its anchor depth is out of range or
        the mean pixel error of its remaining non-anchor observations exceeds
        the landmark gate.

        Returns:
            (outlier observations, removed landmarks)
        """
        window = self.window
        visual = self.config.visual
        est = self.config.estimator
        ids = window.node_ids()
        id_set = set(ids)
        culled_lms = 0
        tracks: List[Tuple[Landmark, List[int]]] = []
        for lm_id, lm in list(window.landmarks.items()):
            if not lm.is_triangulated or lm.ref_keyframe not in id_set:
                continue
            if not visual.min_depth <= lm.depth <= visual.max_depth:
                self._remove_landmark(lm_id)
                culled_lms += 1
                continue
            frames = [n for n in lm.usable_frames(ids) if n != lm.ref_keyframe]
            if frames:
                tracks.append((lm, frames))
        if not tracks:
            return 0, culled_lms

        rotations = {node.id: node.state.R for node in window.nodes}
        positions = {node.id: node.state.p for node in window.nodes}
        ext = window.extrinsics
        p_lm = landmark_world_positions(
            np.array([lm.inv_depth for lm, _ in tracks]),
            np.array([lm.anchor_observation.bearing for lm, _ in tracks]),
            np.array([rotations[lm.ref_keyframe] for lm, _ in tracks]),
            np.array([positions[lm.ref_keyframe] for lm, _ in tracks]),
            ext,
        )
        counts = [len(frames) for _, frames in tracks]
        observers = [n for _, frames in tracks for n in frames]
        depths, errors = observation_depths_and_errors(
            np.repeat(p_lm, counts, axis=0),
            np.array([rotations[n] for n in observers]),
            np.array([positions[n] for n in observers]),
            ext,
            self.camera,
            np.array([lm.observations[n].pixel for lm, frames in tracks for n in frames]),
        )
        outlier = (
            (depths < visual.min_depth)
            | (depths > visual.max_depth)
            | (errors > est.max_reprojection_error)
        )

        start = 0
        for (lm, frames), count in zip(tracks, counts):
            bad = outlier[start : start + count]
            kept = errors[start : start + count][~bad]
            start += count
            for node_id, is_bad in zip(frames, bad):
                if is_bad:
                    lm.rejected_frames.add(node_id)
                    self.flagged.add((lm.observations[node_id].frame_id, lm.id))
            if kept.size and float(kept.mean()) > est.max_landmark_error:
                self._remove_landmark(lm.id)
                culled_lms += 1
        return int(outlier.sum()), culled_lms

    def _remove_landmark(self, lm_id: int) -> None:
        lm = self.window.landmarks.pop(lm_id, None)
        if lm is not None:
            self.flagged.update((obs.frame_id, lm_id) for obs in lm.observations.values())
        self.removed_landmarks.add(lm_id)

    # -- window maintenance ------------------------------------------------

    def remove_observation_frames(self) -> int:
        """
        Drop single-use observation frames after the optimization that used them.

        A frame that is also a GNSS epoch or keyframe stays as a node and only
        loses its visual observations; otherwise the node is removed and the
        adjacent preintegrations are merged.
        """
        window = self.window
        removed = 0
        for node in list(window.nodes):
            if not node.is_observation_frame:
                continue
            for lm in window.landmarks.values():
                lm.remove_frame(node.id)
            node.kind &= ~NodeKind.OBSERVATION_FRAME
            if node.kind:
                continue
            k = window.nodes.index(node)
            self.retired.append(node)
            if k == len(window.nodes) - 1:
                window.preints.pop()
            elif k == 0:
                del window.preints[0]
            else:
                window.preints[k - 1] = merge(window.preints[k - 1], window.preints[k])
                del window.preints[k]
            del window.nodes[k]
            removed += 1
        self._prune_landmarks()
        window.check_invariants()
        return removed

    def marginalize(self) -> Tuple[int, bool]:
        """
        Marginalize the oldest nodes until the window is within capacity.

        Visual factors touching the departing node are dropped, not
        marginalized: their information is lost rather than carried into the
        new prior. The old prior and the preintegration and GNSS factors
        touching the node are folded into that prior by Schur complement.
        Landmarks anchored at the departing node
        are re-triangulated at their next observing keyframe.

        Returns:
            (number of nodes marginalized, whether the marginal Hessian had to
            be regularized)
        """
        window = self.window
        capacity = self.config.estimator.window_capacity
        count = 0
        regularized = False
        while len(window.nodes) > capacity:
            oldest = window.nodes[0]
            key = state_key(oldest.id)
            factors = [
                f for f in self.build_problem() if not isinstance(f, VisualFactorSet)
            ]
            touching = factors_touching(factors, [key])
            prior = marginalize_factors(
                touching, window.values(), [key], self._fixed_keys()
            )
            window.prior = prior
            if prior is not None and prior.regularized:
                regularized = True

            self.retired.append(oldest)
            del window.nodes[0]
            del window.preints[0]
            reanchor = []
            for lm in window.landmarks.values():
                if lm.ref_keyframe == oldest.id:
                    reanchor.append(lm.id)
                lm.remove_frame(oldest.id)
            for lm_id in reanchor:
                lm = window.landmarks[lm_id]
                window.landmarks[lm_id] = replace(
                    lm, ref_keyframe=None, inv_depth=0.0, status=LandmarkStatus.CANDIDATE
                )
            self._prune_landmarks()
            count += 1
        if count:
            self.triangulate_landmarks()
        window.check_invariants()
        return count, regularized

    def _prune_landmarks(self) -> None:
        ids = set(self.window.node_ids())
        for lm_id, lm in list(self.window.landmarks.items()):
            if not any(node_id in ids for node_id in lm.observations):
                del self.window.landmarks[lm_id]
            elif lm.status is LandmarkStatus.OUTLIER:
                self._remove_landmark(lm_id)

    def feedback(self) -> NavState:
        """Reset the INS anchor to the newest optimized node."""
        return self.navigator.reset_anchor(self.window.newest.state)

    def process(self, event: MeasurementEvent) -> OptimizationReport:
        """Insert, optimize, drop observation frames, feed back and marginalize."""
        insertion = self.insert_measurement(event)
        report = self.optimize()
        report.removed_observation_frames = self.remove_observation_frames()
        self.feedback()
        timer = Timer()
        report.marginalized, report.regularized = self.marginalize()
        report.marginalize_ms = timer.elapsed_ms()
        report.node_count = len(self.window.nodes)
        report.landmark_count = len(self.window.landmarks)
        report.valid_landmarks = self.window.valid_landmark_count()
        logger.debug(
            "Processed node",
            extra={
                "operation": "process",
                "t": event.t,
                "gated": insertion.gated,
                "merged": insertion.merged,
            },
        )
        return report
