import logging
import math
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import networkx as nx
import numpy as np

from gcplan.core.config import settings
from gcplan.core.errors import EmptyRouteError
from gcplan.models.driver import AgentPrediction, IdmParams, LaneChangeSituation, MobilParams
from gcplan.models.graph import EdgeKind, LaneGraph, RouteMask
from gcplan.models.scenario import AgentState, ScenarioRecord, Trajectory
from gcplan.services.reference_path import build_reference_path
from gcplan.utils.geometry import Polyline

logger = logging.getLogger(__name__)

MIN_GAP_EPS = 0.1


def default_idm(v0: float) -> IdmParams:
    return IdmParams(
        v0=v0,
        time_headway=settings.TIME_HEADWAY,
        min_gap=settings.MIN_GAP,
        max_accel=settings.MAX_ACCEL,
        comfortable_decel=settings.COMFORTABLE_DECEL,
        delta=settings.DELTA,
    )


def desired_gap(p: IdmParams, v: float, dv: float) -> float:
    return p.min_gap + max(0.0, v * p.time_headway + v * dv / (2.0 * math.sqrt(p.max_accel * p.comfortable_decel)))


def idm_acceleration(p: IdmParams, v: float, gap: Optional[float], dv: float = 0.0) -> float:
    """
    IDM acceleration, clipped to [-2 * b_comf, a_max].

    Args:
        p: IDM parameters
        v: Ego speed (m/s)
        gap: Bumper-to-bumper gap to the lead (m), None on a free road
        dv: Closing speed, ego speed minus lead speed (m/s)

    Returns:
        Acceleration in m/s^2
    """
    free = 1.0 - (max(v, 0.0) / p.v0) ** p.delta
    if gap is None:
        accel = p.max_accel * free
    else:
        if gap <= 0:
            raise ValueError("gap must be positive")
        accel = p.max_accel * (free - (desired_gap(p, v, dv) / gap) ** 2)
    return float(min(max(accel, -2.0 * p.comfortable_decel), p.max_accel))


def ballistic_step(v: float, accel: float, dt: float) -> Tuple[float, float]:
    """Advance one step at constant acceleration; stops inside the step instead of reversing."""
    v_next = v + accel * dt
    if v_next < 0.0:
        return (v * v / (-2.0 * accel) if accel < 0 else 0.0), 0.0
    return v * dt + 0.5 * accel * dt * dt, v_next


def mobil_decision(
    p: MobilParams,
    ego_gain: float,
    new_follower_gain: float = 0.0,
    old_follower_gain: float = 0.0,
    new_follower_accel: Optional[float] = None,
) -> bool:
    """Safety veto on the new follower, then the symmetric incentive test."""
    if new_follower_accel is not None and new_follower_accel < -p.safe_decel:
        return False
    return ego_gain + p.politeness * (new_follower_gain + old_follower_gain) > p.accel_threshold


def mobil_should_change(
    p: MobilParams, idm: IdmParams, situation: LaneChangeSituation, ego_length: float = 4.5
) -> bool:
    """Decide a lane change from the gaps and speeds around the ego vehicle."""
    s = situation
    v = s.ego_speed
    accel_current = idm_acceleration(idm, v, s.current_lead_gap, v - s.current_lead_speed)
    accel_target = idm_acceleration(idm, v, s.target_lead_gap, v - s.target_lead_speed)
    ego_gain = accel_target - accel_current

    new_follower_gain, new_follower_accel = 0.0, None
    if s.target_follower_gap is not None:
        vf = s.target_follower_speed
        if s.target_lead_gap is not None:
            before = idm_acceleration(
                idm, vf, s.target_follower_gap + ego_length + s.target_lead_gap, vf - s.target_lead_speed
            )
        else:
            before = idm_acceleration(idm, vf, None)
        new_follower_accel = idm_acceleration(idm, vf, max(s.target_follower_gap, MIN_GAP_EPS), vf - v)
        new_follower_gain = new_follower_accel - before

    old_follower_gain = 0.0
    if s.current_follower_gap is not None:
        vf = s.current_follower_speed
        before = idm_acceleration(idm, vf, max(s.current_follower_gap, MIN_GAP_EPS), vf - v)
        if s.current_lead_gap is not None:
            after = idm_acceleration(
                idm, vf, s.current_follower_gap + ego_length + s.current_lead_gap, vf - s.current_lead_speed
            )
        else:
            after = idm_acceleration(idm, vf, None)
        old_follower_gain = after - before

    return mobil_decision(p, ego_gain, new_follower_gain, old_follower_gain, new_follower_accel)


def route_node_sequence(
    graph: LaneGraph,
    route: RouteMask,
    start_node: int,
    goal_node: int,
    proximal_penalty: float = settings.PROXIMAL_ROUTE_PENALTY,
) -> List[int]:
    """Shortest on-route node sequence by arc length, with a penalty per lane change."""
    subgraph = graph.digraph.subgraph(route.on_route_nodes)

    def weight(u, v, data):
        return data["length"] + (proximal_penalty if data["kind"] == EdgeKind.PROXIMAL.value else 0.0)

    try:
        return list(nx.shortest_path(subgraph, start_node, goal_node, weight=weight))
    except (nx.NetworkXNoPath, nx.NodeNotFound):
        raise EmptyRouteError(start_node, goal_node)


def predictions_from_playback(record: ScenarioRecord, frame: int, steps: int) -> List[AgentPrediction]:
    """Agent positions replayed from the log, frames frame..frame+steps."""
    predictions = []
    for agent in record.agents:
        states = [agent.state_at(frame + i) for i in range(steps + 1)]
        predictions.append(_prediction(states, agent.footprint.length, agent.footprint.width))
    return predictions


def constant_velocity_predictions(
    states: Sequence[AgentState], footprints: Sequence[Tuple[float, float]], steps: int, dt: float
) -> List[AgentPrediction]:
    predictions = []
    t = np.arange(steps + 1) * dt
    for state, (length, width) in zip(states, footprints):
        direction = np.array([math.cos(state.heading), math.sin(state.heading)])
        positions = state.xy[None, :] + (state.v * t)[:, None] * direction[None, :]
        predictions.append(
            AgentPrediction(
                positions=positions,
                headings=np.full(steps + 1, state.heading),
                speeds=np.full(steps + 1, state.v),
                length=length,
                width=width,
            )
        )
    return predictions


def _prediction(states: Sequence[AgentState], length: float, width: float) -> AgentPrediction:
    return AgentPrediction(
        positions=np.array([[s.x, s.y] for s in states]),
        headings=np.array([s.heading for s in states]),
        speeds=np.array([s.v for s in states]),
        length=length,
        width=width,
    )


@dataclass
class _Neighbour:
    gap: Optional[float] = None
    speed: float = 0.0


def _neighbours_on_path(
    path: Polyline,
    ego_arc: float,
    ego_length: float,
    predictions: Sequence[AgentPrediction],
    frame: int,
    lateral_limit: float,
) -> Tuple[_Neighbour, _Neighbour]:
    """Nearest agent ahead and behind the ego along a path, within the lateral limit."""
    lead, follower = _Neighbour(), _Neighbour()
    start_heading = path.heading_at(0.0)
    start_dir = np.array([math.cos(start_heading), math.sin(start_heading)])
    for prediction in predictions:
        i = prediction.frame(frame)
        position = prediction.positions[i]
        projection = path.project(position)
        agent_arc = projection.arc
        if agent_arc <= 1e-9:
            # behind the path start: measure along the start direction
            rel = position - path.points[0]
            agent_arc = float(np.dot(rel, start_dir))
            lateral = float(start_dir[0] * rel[1] - start_dir[1] * rel[0])
        else:
            lateral = projection.lateral
        if abs(lateral) > lateral_limit:
            continue
        along = prediction.speeds[i] * math.cos(prediction.headings[i] - path.heading_at(max(agent_arc, 0.0)))
        half = 0.5 * (ego_length + prediction.length)
        if agent_arc > ego_arc:
            gap = max(agent_arc - ego_arc - half, MIN_GAP_EPS)
            if lead.gap is None or gap < lead.gap:
                lead = _Neighbour(gap, max(along, 0.0))
        else:
            gap = max(ego_arc - agent_arc - half, MIN_GAP_EPS)
            if follower.gap is None or gap < follower.gap:
                follower = _Neighbour(gap, max(along, 0.0))
    return lead, follower


@dataclass(frozen=True, eq=False)
class RouteRollout:
    positions: np.ndarray
    speeds: np.ndarray
    path: np.ndarray
    lane_changes: int = 0


def follow_route(
    graph: LaneGraph,
    route: RouteMask,
    start_node: int,
    goal_node: int,
    sdv_state: AgentState,
    idm: IdmParams,
    predictions: Sequence[AgentPrediction] = (),
    steps: int = settings.HORIZON_STEPS,
    dt: float = settings.DT,
    ego_length: float = 4.5,
    mobil: Optional[MobilParams] = None,
    lateral_limit: float = settings.LEAD_LATERAL_LIMIT,
) -> RouteRollout:
    """
    Drive the route centreline with IDM for ``steps`` steps of ``dt``.

    The lead is the nearest predicted agent ahead on the path within the
    lateral limit; the path end acts as a stationary obstacle. With MOBIL
    enabled, on-route proximal transitions are evaluated each time the ego
    enters a new snippet.
    """
    nodes = route_node_sequence(graph, route, start_node, goal_node)
    points = build_reference_path(graph, nodes, sdv_state.xy)
    path = Polyline(points)
    arc, v = 0.0, sdv_state.v
    node_index = 0
    positions, speeds = [], []
    lane_changes = 0

    for step in range(steps):
        if mobil is not None:
            new_index = _current_node_index(graph, nodes, node_index, path.point_at(arc))
            if new_index != node_index:
                node_index = new_index
                switched = _consider_lane_change(
                    graph, route, nodes, node_index, goal_node, path, arc, v, idm, mobil,
                    predictions, step, ego_length, lateral_limit,
                )
                if switched is not None:
                    nodes, points = switched
                    path = Polyline(points)
                    arc, node_index = 0.0, 0
                    lane_changes += 1
        arc, v = _idm_step(path, arc, v, idm, predictions, step, ego_length, lateral_limit, dt)
        positions.append(path.point_at(arc))
        speeds.append(v)

    return RouteRollout(
        positions=np.array(positions).reshape(-1, 2),
        speeds=np.array(speeds),
        path=points,
        lane_changes=lane_changes,
    )


def _idm_step(path, arc, v, idm, predictions, frame, ego_length, lateral_limit, dt) -> Tuple[float, float]:
    lead, _ = _neighbours_on_path(path, arc, ego_length, predictions, frame, lateral_limit)
    end_gap = path.length - arc
    gap, lead_speed = lead.gap, lead.speed
    if gap is None or end_gap < gap:
        gap, lead_speed = max(end_gap, MIN_GAP_EPS), 0.0
    accel = idm_acceleration(idm, v, gap, v - lead_speed)
    ds, v = ballistic_step(v, accel, dt)
    return min(arc + ds, path.length), v


def drive_path(
    path: Polyline,
    initial_speed: float,
    idm: IdmParams,
    predictions: Sequence[AgentPrediction] = (),
    steps: int = settings.HORIZON_STEPS,
    dt: float = settings.DT,
    ego_length: float = 4.5,
    lateral_limit: float = settings.LEAD_LATERAL_LIMIT,
) -> Tuple[np.ndarray, np.ndarray]:
    """IDM along a fixed path; returns arc positions and speeds after each step."""
    arc, v = 0.0, initial_speed
    arcs, speeds = [], []
    for step in range(steps):
        arc, v = _idm_step(path, arc, v, idm, predictions, step, ego_length, lateral_limit, dt)
        arcs.append(arc)
        speeds.append(v)
    return np.array(arcs), np.array(speeds)


def _current_node_index(graph: LaneGraph, nodes: Sequence[int], index: int, point: np.ndarray) -> int:
    best, best_dist = index, graph.nodes[nodes[index]].polyline.project(point).distance
    for j in range(index + 1, min(index + 3, len(nodes))):
        dist = graph.nodes[nodes[j]].polyline.project(point).distance
        if dist < best_dist - 1e-9:
            best, best_dist = j, dist
    return best


def _consider_lane_change(
    graph, route, nodes, node_index, goal_node, path, arc, v, idm, mobil, predictions, step, ego_length, lateral_limit
):
    current = nodes[node_index]
    ego_xy = path.point_at(arc)
    lead, follower = _neighbours_on_path(path, arc, ego_length, predictions, step, lateral_limit)
    for edge in graph.edges_from(current):
        if edge.kind != EdgeKind.PROXIMAL or not route.contains(edge):
            continue
        if node_index + 1 < len(nodes) and nodes[node_index + 1] == edge.target:
            continue
        try:
            rest = route_node_sequence(graph, route, edge.target, goal_node)
        except EmptyRouteError:
            continue
        candidate_nodes = [current] + rest
        candidate_points = build_reference_path(graph, candidate_nodes, ego_xy)
        candidate = Polyline(candidate_points)
        target_lead, target_follower = _neighbours_on_path(
            candidate, 0.0, ego_length, predictions, step, lateral_limit
        )
        situation = LaneChangeSituation(
            ego_speed=v,
            current_lead_gap=lead.gap,
            current_lead_speed=lead.speed,
            current_follower_gap=follower.gap,
            current_follower_speed=follower.speed,
            target_lead_gap=target_lead.gap,
            target_lead_speed=target_lead.speed,
            target_follower_gap=target_follower.gap,
            target_follower_speed=target_follower.speed,
        )
        if mobil_should_change(mobil, idm, situation, ego_length):
            logger.debug(f"MOBIL lane change {current} -> {edge.target} at step {step}")
            return candidate_nodes, candidate_points
    return None


def idm_route_planner(
    record: ScenarioRecord,
    route: RouteMask,
    p: IdmParams,
    mobil: Optional[MobilParams] = None,
    sdv_state: Optional[AgentState] = None,
    start_node: Optional[int] = None,
    predictions: Optional[Sequence[AgentPrediction]] = None,
    horizon_steps: int = settings.HORIZON_STEPS,
    dt: float = settings.DT,
) -> Trajectory:
    """IDM (optionally MOBIL) route follower over the planning horizon; agents replay the log by default."""
    state = sdv_state if sdv_state is not None else record.sdv_state
    node = start_node if start_node is not None else record.start_node
    if predictions is None:
        predictions = predictions_from_playback(record, 0, horizon_steps)
    rollout = follow_route(
        record.graph,
        route,
        node,
        record.goal_node,
        state,
        p,
        predictions=predictions,
        steps=horizon_steps,
        dt=dt,
        ego_length=record.sdv_footprint.length,
        mobil=mobil,
    )
    return Trajectory(rollout.positions, dt)
