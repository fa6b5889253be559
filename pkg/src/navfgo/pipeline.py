"""
Orchestrator for an estimator run.

Coordinates the whole run: load dataset → initialize → per-event
insert/optimize/marginalize/feedback → write trajectories and diagnostics.
"""

from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Set, Tuple

import numpy as np

from .config import RunConfig
from .dataset import CameraFrame, Dataset, load_dataset
from .errors import InitializationPendingError
from .estimator import Estimator, MeasurementEvent, NodeKind, OptimizationReport, TimeNode
from .evaluation import Trajectory, save_trajectory
from .factors import GnssFix
from .initializer import InitializationResult, initialize
from .ins import ImuSample, InsNavigator, NavState
from .logging import close_diagnostics_log, get_logger, setup_diagnostics_log
from .preintegration import TIMESTAMP_TOLERANCE
from .timing import StageStats, Timer, measure_time
from .visual import (
    CameraModel,
    Extrinsics,
    KeyframeDecision,
    frame_parallax,
    relative_camera_rotation,
    select_keyframe,
)

logger = get_logger(__name__)

GNSS_EPOCH_TOLERANCE = 1e-3


@dataclass
class RunRequest:
    """Input parameters for a run."""

    config: RunConfig
    output_dir: Path


@dataclass
class RunResult:
    """Result of a completed run."""

    mode: str
    output_dir: Path
    trajectory_path: Path
    realtime_path: Path
    diagnostics_path: Path
    init_time: float
    nodes: int
    optimizations: int
    skipped_frames: int
    elapsed_ms: float
    mean_optimize_ms: float
    max_optimize_ms: float
    trajectory: Trajectory
    realtime: Trajectory
    reports: List[Dict[str, Any]] = field(default_factory=list)
    # (frame_id, feature_id) observations the estimator gated, rejected or culled
    flagged: Set[Tuple[int, int]] = field(default_factory=set)
    processed_frames: Set[int] = field(default_factory=set)


def gnss_epochs(fixes: Sequence[GnssFix], epoch: float) -> List[GnssFix]:
    """Fixes whose timestamps fall on the GNSS epoch grid."""
    selected = []
    for fix in fixes:
        offset = fix.t - round(fix.t / epoch) * epoch
        if abs(offset) <= GNSS_EPOCH_TOLERANCE:
            selected.append(fix)
    return selected


def run_initialization(
    dataset: Dataset, config: RunConfig, extrinsics: Extrinsics
) -> InitializationResult:
    """
    Retry initialization at each GNSS epoch with the data received so far.

    Raises:
        InitializationPendingError: If still pending once the timeout has elapsed
    """
    if not dataset.imu:
        raise InitializationPendingError("No IMU data")
    timeout = config.initializer.timeout
    t_start = dataset.imu[0].t
    imu_times = np.array([s.t for s in dataset.imu])
    last: Optional[InitializationPendingError] = None
    for k, fix in enumerate(dataset.fixes):
        if fix.t - t_start > timeout:
            break
        n = int(np.searchsorted(imu_times, fix.t + TIMESTAMP_TOLERANCE, side="right"))
        try:
            return initialize(dataset.imu[:n], dataset.fixes[: k + 1], config, extrinsics)
        except InitializationPendingError as e:
            last = e
    reason = str(last) if last is not None else "no GNSS data"
    raise InitializationPendingError(
        f"Initialization pending after {timeout} s: {reason}", timeout=timeout
    )


def build_events(
    frames: Sequence[CameraFrame], fixes: Sequence[GnssFix], after: float
) -> List[Tuple[float, Optional[CameraFrame], Optional[GnssFix]]]:
    """Time-ordered camera frames and GNSS epochs after ``after``; coincident ones pair up."""
    items: List[Tuple[float, Optional[CameraFrame], Optional[GnssFix]]] = []
    items.extend((f.t, f, None) for f in frames if f.t > after + TIMESTAMP_TOLERANCE)
    items.extend((g.t, None, g) for g in fixes if g.t > after + TIMESTAMP_TOLERANCE)
    items.sort(key=lambda item: (item[0], item[1] is None))

    events: List[Tuple[float, Optional[CameraFrame], Optional[GnssFix]]] = []
    for t, frame, fix in items:
        if events and abs(t - events[-1][0]) <= TIMESTAMP_TOLERANCE:
            t0, frame0, fix0 = events[-1]
            if (frame0 is None or frame is None) and (fix0 is None or fix is None):
                events[-1] = (t0, frame0 or frame, fix0 or fix)
                continue
        events.append((t, frame, fix))
    return events


class FrontEnd:
    """Keyframe / observation-frame / skip decisions for incoming camera frames."""

    def __init__(self, camera: CameraModel, config: RunConfig) -> None:
        self.camera = camera
        self.config = config.visual
        self.keyframe_units: Optional[Dict[int, np.ndarray]] = None
        self.keyframe_state: Optional[NavState] = None
        self.last_visual_t: Optional[float] = None

    def decide(
        self, frame: CameraFrame, prior: NavState, extrinsics: Extrinsics
    ) -> KeyframeDecision:
        if self.keyframe_units is None or self.keyframe_state is None:
            return KeyframeDecision.KEYFRAME
        rotation = relative_camera_rotation(self.keyframe_state, prior, extrinsics)
        parallax = frame_parallax(frame.unit_points(), self.keyframe_units, rotation, self.camera)
        assert self.last_visual_t is not None
        return select_keyframe(parallax, frame.t - self.last_visual_t, self.config)

    def accept(self, frame: CameraFrame, decision: KeyframeDecision, state: NavState) -> None:
        if decision is KeyframeDecision.KEYFRAME:
            self.keyframe_units = frame.unit_points()
            self.keyframe_state = state
        if decision is not KeyframeDecision.SKIP:
            self.last_visual_t = frame.t


def _trajectory(times: List[float], states: List[NavState]) -> Trajectory:
    if not states:
        return Trajectory(np.zeros(0), np.zeros((0, 3)), np.zeros((0, 4)))
    return Trajectory(
        np.array(times),
        np.array([s.p for s in states]),
        np.array([s.q for s in states]),
    )


def _node_at(estimator: Estimator, t: float) -> Optional[TimeNode]:
    for node in estimator.window.nodes:
        if abs(node.t - t) <= TIMESTAMP_TOLERANCE:
            return node
    return None


def node_trajectory(nodes: Sequence[TimeNode]) -> Trajectory:
    """Optimized node states in time order, one row per node."""
    unique: Dict[int, TimeNode] = {n.id: n for n in nodes}
    ordered = sorted(unique.values(), key=lambda n: n.t)
    return _trajectory([n.t for n in ordered], [n.state for n in ordered])


def run_pipeline(request: RunRequest) -> RunResult:
    """
    Run the estimator over a dataset.

    Steps:
    1. Load the dataset
    2. Initialize the INS and the first window
    3. Feed IMU samples to the real-time navigator; for every camera frame
       or GNSS epoch decide the node kind and process it
    4. Write ``trajectory.txt``, ``realtime.txt`` and ``diagnostics.jsonl``

    Args:
        request: Run parameters

    Returns:
        RunResult with output paths and summary statistics

    Raises:
        NavError: Structured errors for all failure modes
    """
    config = request.config
    output_dir = Path(request.output_dir)
    diagnostics_path = output_dir / "diagnostics.jsonl"
    timer = Timer()

    with measure_time("load_dataset", logger):
        dataset = load_dataset(config)
    camera = CameraModel.from_config(dataset.camera)
    extrinsics = Extrinsics.from_config(dataset.camera)

    with measure_time("initialize", logger):
        init = run_initialization(dataset, config, extrinsics)
    window = init.window
    anchor = window.newest.state

    imu = dataset.imu
    imu_times = np.array([s.t for s in imu])
    idx = max(int(np.searchsorted(imu_times, anchor.t + TIMESTAMP_TOLERANCE, side="right")) - 1, 0)
    navigator = InsNavigator(init.frame, anchor, config.estimator.max_imu_gap)
    realtime_t: List[float] = []
    realtime_states: List[NavState] = []

    def feed(sample: ImuSample) -> None:
        state = navigator.add_sample(sample)
        if sample.t >= anchor.t - TIMESTAMP_TOLERANCE:
            realtime_t.append(sample.t)
            realtime_states.append(state)

    feed(imu[idx])
    idx += 1

    estimator = Estimator(window, config, camera, navigator)
    use_gnss = config.mode == "gvins"
    estimator.use_gnss = use_gnss
    fixes = gnss_epochs(dataset.fixes, config.estimator.gnss_epoch) if use_gnss else []
    events = build_events(dataset.frames, fixes, init.end_time)
    frontend = FrontEnd(camera, config)

    diagnostics = setup_diagnostics_log(diagnostics_path)
    reports: List[Dict[str, Any]] = []
    skipped = 0
    processed_frames: Set[int] = set()
    try:
        for t, frame, fix in events:
            while idx < len(imu) and navigator.buffer[-1].t < t - TIMESTAMP_TOLERANCE:
                feed(imu[idx])
                idx += 1
            if navigator.buffer[-1].t < t - TIMESTAMP_TOLERANCE:
                logger.info(
                    "IMU data ends before the next event; stopping",
                    extra={"operation": "run_pipeline", "t": t},
                )
                break

            frontend_timer = Timer()
            kind = NodeKind(0)
            observations = {}
            decision = KeyframeDecision.SKIP
            if frame is not None:
                prior = navigator.state_at(t)
                decision = frontend.decide(frame, prior, estimator.window.extrinsics)
                if decision is KeyframeDecision.KEYFRAME:
                    kind |= NodeKind.KEYFRAME
                elif decision is KeyframeDecision.OBSERVATION_FRAME:
                    kind |= NodeKind.OBSERVATION_FRAME
                else:
                    skipped += 1
                if kind:
                    observations = frame.observations
            if fix is not None:
                kind |= NodeKind.GNSS_EPOCH
            if not kind:
                continue
            frontend_ms = frontend_timer.elapsed_ms()

            event = MeasurementEvent(
                t,
                kind,
                frame.frame_id if frame is not None and observations else None,
                observations,
                fix,
            )
            step_timer = Timer()
            report: OptimizationReport = estimator.process(event)
            if event.frame_id is not None:
                processed_frames.add(event.frame_id)
            if frame is not None and decision is not KeyframeDecision.SKIP:
                node = _node_at(estimator, t)
                state = node.state if node is not None else navigator.state_at(t)
                frontend.accept(frame, decision, state)

            record = report.to_dict()
            record.update(
                {
                    "kind": kind.name or str(kind),
                    "frontend_ms": frontend_ms,
                    "runtime_ms": frontend_ms + step_timer.elapsed_ms(),
                }
            )
            diagnostics.info("optimization", extra=record)
            reports.append(record)

        while idx < len(imu):
            feed(imu[idx])
            idx += 1
    finally:
        close_diagnostics_log()

    trajectory = node_trajectory(list(estimator.retired) + list(estimator.window.nodes))
    realtime = _trajectory(realtime_t, realtime_states)
    trajectory_path = output_dir / "trajectory.txt"
    realtime_path = output_dir / "realtime.txt"
    output_dir.mkdir(parents=True, exist_ok=True)
    save_trajectory(trajectory, trajectory_path)
    save_trajectory(realtime, realtime_path)

    optimize = StageStats.of(reports, "optimize_ms")
    result = RunResult(
        mode=config.mode,
        output_dir=output_dir,
        trajectory_path=trajectory_path,
        realtime_path=realtime_path,
        diagnostics_path=diagnostics_path,
        init_time=init.end_time,
        nodes=len(trajectory),
        optimizations=len(reports),
        skipped_frames=skipped,
        elapsed_ms=timer.elapsed_ms(),
        mean_optimize_ms=optimize.mean_ms,
        max_optimize_ms=optimize.max_ms,
        trajectory=trajectory,
        realtime=realtime,
        reports=reports,
        flagged=set(estimator.flagged),
        processed_frames=processed_frames,
    )
    logger.info(
        "Run complete",
        extra={
            "operation": "run_pipeline",
            "mode": result.mode,
            "nodes": result.nodes,
            "optimizations": result.optimizations,
            "elapsed_ms": result.elapsed_ms,
        },
    )
    return result
