"""Open-loop imitation metrics and log-playback closed-loop simulation."""
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from typing import List, Optional, Sequence, Tuple

import numpy as np
import shapely

from gcplan.core.config import settings
from gcplan.core.errors import HorizonMismatchError
from gcplan.models.scenario import AgentState, ScenarioRecord, Trajectory
from gcplan.observability.tracker import EvaluationTracker
from gcplan.schemas.metrics import (
    AGGREGATE_ID,
    CSV_FIELDS,
    ClosedLoopMetrics,
    EvaluationReport,
    MetricRow,
    OpenLoopMetrics,
)
from gcplan.services.collision import OrientedBox, at_fault_collision, boxes_overlap
from gcplan.services.planner import BasePlanner
from gcplan.services.scenario import expert_state
from gcplan.utils.geometry import Polyline, wrap_angle

logger = logging.getLogger(__name__)


def ade_fde(plan: Trajectory, expert: Trajectory) -> Tuple[float, float]:
    """
    Average and final displacement errors.

    Raises:
        HorizonMismatchError: If the trajectories differ in length or step
    """
    if len(plan) != len(expert) or not math.isclose(plan.dt, expert.dt):
        raise HorizonMismatchError(
            f"plan has {len(plan)} waypoints at dt={plan.dt}, expert has {len(expert)} at dt={expert.dt}"
        )
    errors = np.linalg.norm(plan.waypoints - expert.waypoints, axis=1)
    return float(errors.mean()), float(errors[-1])


def miss(plan: Trajectory, expert: Trajectory, threshold: float = settings.MISS_THRESHOLD) -> bool:
    return ade_fde(plan, expert)[1] > threshold


def tpi(plan_at_tau: Trajectory, plan_at_tau_plus: Trajectory) -> float:
    """Distance between the two plans' positions at the same absolute time, the earlier plan's last waypoint."""
    if len(plan_at_tau_plus) < 2:
        raise HorizonMismatchError("the later plan needs at least two waypoints")
    return float(np.linalg.norm(plan_at_tau.waypoints[-1] - plan_at_tau_plus.waypoints[-2]))


def progress_series(sdv_positions, expert_path) -> np.ndarray:
    """Fraction of the expert path covered after each frame; the projection never moves backwards."""
    path = expert_path if isinstance(expert_path, Polyline) else Polyline(expert_path)
    if path.length <= 0:
        raise ValueError("expert path must have positive length")
    arc = 0.0
    series = []
    for position in np.asarray(sdv_positions, dtype=float).reshape(-1, 2):
        arc = max(arc, path.project(position, s_min=arc).arc)
        series.append(min(max(arc, 0.0), path.length) / path.length)
    return np.maximum.accumulate(np.array(series))


def progress(sdv_positions, expert_path) -> float:
    series = progress_series(sdv_positions, expert_path)
    return float(series[-1]) if len(series) else 0.0


def drivable_compliance(sdv_boxes: Sequence[OrientedBox], drivable_area) -> float:
    """
    Fraction of frames whose box corners and centre all lie on the drivable area.

    Args:
        sdv_boxes: One box per frame
        drivable_area: A shapely geometry or a sequence of polygon rings

    Returns:
        Compliance in [0, 1]; points on the boundary count as inside
    """
    if not sdv_boxes:
        raise ValueError("compliance needs at least one frame")
    if not isinstance(drivable_area, shapely.Geometry):
        drivable_area = shapely.union_all([shapely.Polygon(ring) for ring in drivable_area])
    samples = np.stack([np.vstack([box.corners, box.center[None, :]]) for box in sdv_boxes])
    inside = shapely.covers(drivable_area, shapely.points(samples.reshape(-1, 2))).reshape(len(sdv_boxes), 5)
    return float(inside.all(axis=1).mean())


def evaluate_open_loop(
    record: ScenarioRecord, planner: BasePlanner, sweep_steps: int = settings.TPI_SWEEP_STEPS
) -> OpenLoopMetrics:
    """Plan at t = 0 against the expert, then replan from the expert state every step for the instability sweep."""
    plans = [planner.plan(record, record.sdv_state, 0)]
    for tau in range(1, sweep_steps + 1):
        plans.append(planner.plan(record, expert_state(record, tau), tau))
    ade, fde = ade_fde(plans[0], record.expert_future)
    instability = [tpi(a, b) for a, b in zip(plans[:-1], plans[1:])]
    return OpenLoopMetrics(
        ade=ade,
        fde=fde,
        miss=fde > settings.MISS_THRESHOLD,
        tpi_mean=float(np.mean(instability)) if instability else None,
    )


def _next_state(current: AgentState, position: np.ndarray, dt: float) -> AgentState:
    displacement = position - current.xy
    distance = float(np.hypot(*displacement))
    heading = math.atan2(displacement[1], displacement[0]) if distance > 1e-6 else current.heading
    speed = distance / dt
    return AgentState(
        x=float(position[0]),
        y=float(position[1]),
        v=speed,
        a=(speed - current.v) / dt,
        omega=float(wrap_angle(heading - current.heading)) / dt,
        heading=float(wrap_angle(heading)),
    )


def _at_fault_frames(
    record: ScenarioRecord, states: Sequence[AgentState], stationary_speed: float, rear_fraction: float
) -> List[Tuple[int, str]]:
    hits = []
    footprint = record.sdv_footprint
    for frame, state in enumerate(states):
        sdv_box = OrientedBox(state.x, state.y, state.heading, footprint.length, footprint.width)
        for agent in record.agents:
            other = agent.state_at(frame)
            agent_box = OrientedBox(other.x, other.y, other.heading, agent.footprint.length, agent.footprint.width)
            if boxes_overlap(sdv_box, agent_box) and at_fault_collision(
                sdv_box, agent_box, other.v, stationary_speed, rear_fraction
            ):
                hits.append((frame, agent.agent_id))
    return hits


def evaluate_closed_loop(
    record: ScenarioRecord, planner: BasePlanner, steps: int = settings.SIM_STEPS, dt: float = settings.DT
) -> ClosedLoopMetrics:
    """
    Roll the planner out against the logged agents.

    The SDV replans every step and moves exactly to the first waypoint of
    its plan. Frames 0..steps are scored.
    """
    states = [record.sdv_state]
    instability = []
    previous: Optional[Trajectory] = None
    for step in range(steps):
        plan = planner.plan(record, states[-1], step)
        if previous is not None:
            instability.append(tpi(previous, plan))
        previous = plan
        states.append(_next_state(states[-1], plan.waypoints[0], dt))

    positions = np.array([[s.x, s.y] for s in states])
    footprint = record.sdv_footprint
    boxes = [OrientedBox(s.x, s.y, s.heading, footprint.length, footprint.width) for s in states]
    hits = _at_fault_frames(record, states, settings.STATIONARY_SPEED, settings.REAR_FAULT_FRACTION)
    if hits:
        frame, agent_id = hits[0]
        logger.info(f"At-fault collision in {record.scenario_id} with {agent_id} at frame {frame}")
    covered = progress(positions, record.expert_path)
    compliance = drivable_compliance(boxes, record.drivable_union)
    collision_free = not hits
    return ClosedLoopMetrics(
        progress=covered,
        drivable_compliance=compliance,
        collision_free=collision_free,
        tpi_mean=float(np.mean(instability)) if instability else None,
        score=float(collision_free) * 0.5 * (covered + compliance),
    )


def _evaluate_one(args) -> MetricRow:
    loop, record, planner = args
    name = planner.kind.value
    with EvaluationTracker(loop, name, record.scenario_id) as tracker:
        if loop == "open":
            metrics = evaluate_open_loop(record, planner)
            return MetricRow.from_open_loop(record.scenario_id, record.scenario_type, name, metrics)
        metrics = evaluate_closed_loop(record, planner)
        if not metrics.collision_free:
            tracker.record_collision()
        return MetricRow.from_closed_loop(record.scenario_id, record.scenario_type, name, metrics)


def aggregate_rows(rows: Sequence[MetricRow], planner: str, scenario_id: str = AGGREGATE_ID) -> MetricRow:
    """Mean of every populated metric over the rows, reduced in scenario-id order."""
    ordered = sorted(rows, key=lambda row: row.scenario_id)
    values = {}
    for field in CSV_FIELDS[3:]:
        present = [getattr(row, field) for row in ordered if getattr(row, field) is not None]
        values[field] = float(np.mean(present)) if present else None
    return MetricRow(scenario_id=scenario_id, scenario_type="all", planner=planner, **values)


def _run(loop: str, scenarios: Sequence[ScenarioRecord], planner: BasePlanner, jobs: int) -> EvaluationReport:
    if not scenarios:
        raise ValueError("no scenarios to evaluate")
    tasks = [(loop, record, planner) for record in scenarios]
    if jobs <= 1:
        rows = [_evaluate_one(task) for task in tasks]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_evaluate_one, tasks, chunksize=max(1, len(tasks) // (4 * jobs))))
    rows.sort(key=lambda row: row.scenario_id)
    name = planner.kind.value
    aggregate = aggregate_rows(rows, name)
    logger.info(f"{loop}-loop evaluation of {name} over {len(rows)} scenarios: score {aggregate.score:.4f}")
    return EvaluationReport(loop=loop, planner=name, rows=rows, aggregate=aggregate)


def run_open_loop(scenarios: Sequence[ScenarioRecord], planner: BasePlanner, jobs: int = 1) -> EvaluationReport:
    """
    Open-loop evaluation: one plan per scenario at t = 0.

    The aggregate holds mean ADE/FDE, the miss rate in ``miss``, the mean
    instability of the replanning sweep and the score 1 - MR.
    """
    return _run("open", scenarios, planner, jobs)


def run_closed_loop(scenarios: Sequence[ScenarioRecord], planner: BasePlanner, jobs: int = 1) -> EvaluationReport:
    return _run("closed", scenarios, planner, jobs)
