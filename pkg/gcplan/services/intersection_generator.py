"""Synthetic four-way intersection scenarios.

Right-hand traffic. Arm ``a`` points along angle a * pi / 2 from the
junction centre. Inbound lanes lie on the driver's right of the arm axis,
lane 0 innermost. Left turns leave from the innermost lane, right turns
from the outermost one, and every lane may go straight.
"""
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from gcplan.core.config import settings
from gcplan.models.driver import AgentPrediction
from gcplan.models.graph import LaneGraph, Pose, RawLane
from gcplan.models.scenario import (
    AgentClass,
    AgentState,
    AgentTrack,
    Footprint,
    ScenarioRecord,
    ScenarioType,
    Trajectory,
)
from gcplan.observability import telemetry
from gcplan.schemas.run_config import IntersectionConfig
from gcplan.services.baselines import default_idm, drive_path, follow_route
from gcplan.services.collision import OrientedBox, boxes_overlap, headings_from_positions
from gcplan.services.lane_graph import assign_sdv_node, build_graph, compute_route_mask
from gcplan.services.reference_path import build_reference_path
from gcplan.utils.geometry import Polyline, wrap_angle
from gcplan.utils.rng import derive_seed, record_rng

logger = logging.getLogger(__name__)

SCENARIO_TYPES = (ScenarioType.TRAVERSE, ScenarioType.LEFT_TURN, ScenarioType.RIGHT_TURN)
VEHICLE_FOOTPRINT = Footprint(4.5, 2.0)
PEDESTRIAN_FOOTPRINT = Footprint(0.6, 0.6)
PEDESTRIAN_SPEED = 1.4
SDV_START_WINDOW = (20.0, 45.0)
AGENT_SPACING = 12.0


def _direction(angle: float) -> np.ndarray:
    return np.array([math.cos(angle), math.sin(angle)])


def _straight(
    start: np.ndarray, end: np.ndarray, heading: float, spacing: float = 5.0
) -> List[Tuple[float, float, float]]:
    count = max(2, math.ceil(np.linalg.norm(end - start) / spacing) + 1)
    return [(float(x), float(y), float(wrap_angle(heading))) for x, y in np.linspace(start, end, count)]


def _arc(center: np.ndarray, radius: float, phi_start: float, phi_end: float) -> List[Tuple[float, float, float]]:
    count = max(4, math.ceil(radius * abs(phi_end - phi_start) / 2.0) + 1)
    turn = 1.0 if phi_end > phi_start else -1.0
    points = []
    for phi in np.linspace(phi_start, phi_end, count):
        x, y = center + radius * _direction(phi)
        points.append((float(x), float(y), float(wrap_angle(phi + turn * math.pi / 2))))
    return points


@dataclass
class IntersectionMap:
    lanes: List[RawLane]
    inbound: Dict[Tuple[int, int], int]
    outbound: Dict[Tuple[int, int], int]
    connectors: Dict[Tuple[int, int, str], int]
    drivable_area: List[np.ndarray]
    junction_half: float
    road_half: float
    graph: Optional[LaneGraph] = field(default=None)


def build_intersection_map(config: IntersectionConfig) -> IntersectionMap:
    """Lane polylines, topology and drivable area of one four-way intersection."""
    n_lanes, w, arm = config.lanes_per_arm, config.lane_width, config.arm_length
    road_half = n_lanes * w
    hj = road_half + config.junction_margin
    offsets = [w / 2 + i * w for i in range(n_lanes)]
    raw: Dict[int, dict] = {}
    inbound, outbound, connectors = {}, {}, {}

    def add(points, **topology) -> int:
        lane_id = len(raw)
        raw[lane_id] = dict(points=points, successors=[], neighbours=[], **topology)
        return lane_id

    for a in range(4):
        theta = a * math.pi / 2
        d, n = _direction(theta), _direction(theta + math.pi / 2)
        for i, o in enumerate(offsets):
            pts = _straight(d * (hj + arm) + n * o, d * hj + n * o, theta + math.pi)
            inbound[(a, i)] = add(pts, stop_lines=[len(pts) - 1], crosswalks=[])
    for a in range(4):
        theta = a * math.pi / 2
        d, n = _direction(theta), _direction(theta + math.pi / 2)
        for i, o in enumerate(offsets):
            pts = _straight(d * hj - n * o, d * (hj + arm) - n * o, theta)
            outbound[(a, i)] = add(pts, stop_lines=[], crosswalks=[0])

    for a in range(4):
        theta = a * math.pi / 2
        d, n = _direction(theta), _direction(theta + math.pi / 2)
        for i, o in enumerate(offsets):
            lane = add(_straight(d * hj + n * o, -d * hj + n * o, theta + math.pi), stop_lines=[], crosswalks=[])
            connectors[(a, i, "straight")] = lane
            raw[lane]["successors"].append(outbound[((a + 2) % 4, i)])
        o_in = offsets[0]
        center = hj * (d - n)
        left = add(_arc(center, hj + o_in, theta + math.pi / 2, theta + math.pi), stop_lines=[], crosswalks=[])
        connectors[(a, 0, "left")] = left
        raw[left]["successors"].append(outbound[((a + 3) % 4, 0)])
        o_out = offsets[-1]
        center = hj * (d + n)
        right = add(_arc(center, hj - o_out, theta - math.pi / 2, theta - math.pi), stop_lines=[], crosswalks=[])
        connectors[(a, n_lanes - 1, "right")] = right
        raw[right]["successors"].append(outbound[((a + 1) % 4, n_lanes - 1)])

    for (a, i, _), lane in connectors.items():
        raw[inbound[(a, i)]]["successors"].append(lane)
    for a in range(4):
        for i in range(n_lanes - 1):
            raw[inbound[(a, i)]]["neighbours"].append(inbound[(a, i + 1)])
            raw[outbound[(a, i)]]["neighbours"].append(outbound[(a, i + 1)])

    lanes = [
        RawLane(
            id=lane_id,
            points=tuple(entry["points"]),
            successors=tuple(entry["successors"]),
            neighbours=tuple(entry["neighbours"]),
            stop_lines=tuple(entry["stop_lines"]),
            crosswalks=tuple(entry["crosswalks"]),
        )
        for lane_id, entry in raw.items()
    ]

    square = np.array([[-hj, -hj], [hj, -hj], [hj, hj], [-hj, hj]])
    area = [square]
    for a in range(4):
        theta = a * math.pi / 2
        d, n = _direction(theta), _direction(theta + math.pi / 2)
        area.append(
            np.array(
                [
                    d * hj - n * road_half,
                    d * (hj + arm) - n * road_half,
                    d * (hj + arm) + n * road_half,
                    d * hj + n * road_half,
                ]
            )
        )
    return IntersectionMap(lanes, inbound, outbound, connectors, area, hj, road_half)


def _target_outbound(kind: ScenarioType, arm: int, lane: int, n_lanes: int) -> Tuple[int, int]:
    if kind == ScenarioType.TRAVERSE:
        return (arm + 2) % 4, lane
    if kind == ScenarioType.LEFT_TURN:
        return (arm + 3) % 4, 0
    return (arm + 1) % 4, n_lanes - 1


def _lane_route(graph: LaneGraph, lane_id: int, position: np.ndarray, tail: Sequence[int]) -> List[int]:
    """Node sequence from the node of lane_id nearest to position, through the given follow-on lanes."""
    nodes = list(graph.lane_nodes[lane_id])
    dists = [graph.nodes[v].polyline.project(position).distance for v in nodes]
    start = int(np.argmin(dists))
    sequence = nodes[start:]
    for lane in tail:
        sequence.extend(graph.lane_nodes[lane])
    return sequence


def _history(position: np.ndarray, heading: float, speed: float, steps: int, dt: float) -> Tuple[AgentState, ...]:
    direction = _direction(heading)
    states = []
    for j in range(steps):
        back = (steps - 1 - j) * dt * speed
        x, y = position - direction * back
        states.append(AgentState(x=float(x), y=float(y), v=float(speed), heading=float(wrap_angle(heading))))
    return tuple(states)


def _playback(positions: np.ndarray, speeds: np.ndarray, current: AgentState, dt: float) -> Tuple[AgentState, ...]:
    headings = headings_from_positions(np.vstack([current.xy[None, :], positions]), current.heading)
    states = []
    prev_v, prev_h = current.v, current.heading
    for (x, y), v, h in zip(positions, speeds, headings[1:]):
        states.append(
            AgentState(
                x=float(x),
                y=float(y),
                v=float(max(v, 0.0)),
                a=float((v - prev_v) / dt),
                omega=float(wrap_angle(h - prev_h) / dt),
                heading=float(wrap_angle(h)),
            )
        )
        prev_v, prev_h = v, h
    return tuple(states)


def _prediction_from_track(track: AgentTrack, steps: int) -> AgentPrediction:
    states = [track.state_at(i) for i in range(steps + 1)]
    return AgentPrediction(
        positions=np.array([[s.x, s.y] for s in states]),
        headings=np.array([s.heading for s in states]),
        speeds=np.array([s.v for s in states]),
        length=track.footprint.length,
        width=track.footprint.width,
    )


def _spawn_vehicles(
    rng: np.random.Generator,
    imap: IntersectionMap,
    config: IntersectionConfig,
    sdv_lane: int,
    sdv_arc: float,
) -> List[Tuple[int, float, str]]:
    """(lane id, arc position, manoeuvre) for every spawned vehicle, lanes in id order."""
    spawned = []
    n_lanes = config.lanes_per_arm
    expected = config.agent_density * config.arm_length / 100.0
    lanes = [(lane, key, True) for key, lane in imap.inbound.items()]
    lanes += [(lane, key, False) for key, lane in imap.outbound.items()]
    for lane, (arm, index), is_inbound in sorted(lanes):
        count = int(rng.poisson(expected)) if expected > 0 else 0
        taken: List[float] = [sdv_arc] if lane == sdv_lane else []
        for _ in range(count):
            for _attempt in range(10):
                arc = float(rng.uniform(0.0, config.arm_length - 5.0))
                if all(abs(arc - other) >= AGENT_SPACING for other in taken):
                    break
            else:
                continue
            taken.append(arc)
            manoeuvre = "outbound"
            if is_inbound:
                options = ["straight"]
                if index == 0:
                    options.append("left")
                if index == n_lanes - 1:
                    options.append("right")
                manoeuvre = options[int(rng.integers(len(options)))]
            spawned.append((lane, arc, manoeuvre))
    return spawned


def _simulate_vehicles(
    rng: np.random.Generator,
    imap: IntersectionMap,
    graph: LaneGraph,
    config: IntersectionConfig,
    spawned: List[Tuple[int, float, str]],
) -> List[AgentTrack]:
    """Roll every vehicle along its lane route with IDM, front-most first."""
    lane_lookup = {lane: (key, True) for key, lane in imap.inbound.items()}
    lane_lookup.update({lane: (key, False) for key, lane in imap.outbound.items()})
    lanes_by_id = {lane.id: lane for lane in imap.lanes}
    idm = default_idm(config.speed_limit)
    dt, steps = settings.DT, settings.SIM_STEPS

    def order_key(item):
        lane, arc, _ = item
        _, is_inbound = lane_lookup[lane]
        # outbound vehicles lead everything; inbound ones by distance to the stop line
        return (0 if not is_inbound else 1, -arc if not is_inbound else config.arm_length - arc, lane)

    tracks: List[AgentTrack] = []
    predictions: List[AgentPrediction] = []
    for number, (lane, arc, manoeuvre) in enumerate(sorted(spawned, key=order_key)):
        (arm, index), is_inbound = lane_lookup[lane]
        line = Polyline(np.asarray(lanes_by_id[lane].points)[:, :2])
        position = line.point_at(arc)
        heading = line.heading_at(arc)
        speed = float(rng.uniform(0.5, 1.0) * config.speed_limit)
        tail: List[int] = []
        if is_inbound:
            connector = imap.connectors[(arm, index, manoeuvre)]
            tail = [connector] + list(lanes_by_id[connector].successors)
        nodes = _lane_route(graph, lane, position, tail)
        path = Polyline(build_reference_path(graph, nodes, position))
        arcs, speeds = drive_path(path, speed, idm, predictions, steps=steps, dt=dt)
        history = _history(position, heading, speed, settings.HISTORY_STEPS, dt)
        track = AgentTrack(
            agent_id=f"vehicle-{number}",
            class_indicator=AgentClass.VEHICLE,
            history=history,
            future_playback=_playback(path.point_at(arcs), speeds, history[-1], dt),
            footprint=VEHICLE_FOOTPRINT,
        )
        tracks.append(track)
        predictions.append(_prediction_from_track(track, steps))
    return tracks


def _pedestrian(rng: np.random.Generator, imap: IntersectionMap, config: IntersectionConfig) -> AgentTrack:
    """One pedestrian walking along a sidewalk, outside the drivable area."""
    arm = int(rng.integers(4))
    side = 1.0 if rng.random() < 0.5 else -1.0
    theta = arm * math.pi / 2
    d, n = _direction(theta), _direction(theta + math.pi / 2)
    margin = min(60.0, config.arm_length / 3)
    along = float(rng.uniform(imap.junction_half + margin, imap.junction_half + config.arm_length - margin))
    position = d * along + n * side * (imap.road_half + 1.5)
    heading = theta if rng.random() < 0.5 else theta + math.pi
    direction = _direction(heading)
    dt, steps = settings.DT, settings.SIM_STEPS
    history = _history(position, heading, PEDESTRIAN_SPEED, settings.HISTORY_STEPS, dt)
    future = np.array([position + direction * PEDESTRIAN_SPEED * dt * (k + 1) for k in range(steps)])
    return AgentTrack(
        agent_id="pedestrian-0",
        class_indicator=AgentClass.PEDESTRIAN,
        history=history,
        future_playback=_playback(future, np.full(steps, PEDESTRIAN_SPEED), history[-1], dt),
        footprint=PEDESTRIAN_FOOTPRINT,
    )


def _colliding_agents(
    positions: np.ndarray, headings: np.ndarray, footprint: Footprint, agents: Sequence[AgentTrack]
) -> List[str]:
    hits = []
    for agent in agents:
        for frame, ((x, y), h) in enumerate(zip(positions, headings)):
            state = agent.state_at(frame)
            sdv_box = OrientedBox(float(x), float(y), float(h), footprint.length, footprint.width)
            agent_box = OrientedBox(state.x, state.y, state.heading, agent.footprint.length, agent.footprint.width)
            if boxes_overlap(sdv_box, agent_box):
                hits.append(agent.agent_id)
                break
    return hits


def generate_intersection(
    seed: int, index: int, config: IntersectionConfig, imap: Optional[IntersectionMap] = None
) -> ScenarioRecord:
    """Generate scenario ``index`` of the stream identified by ``seed``."""
    imap = imap or build_intersection_map(config)
    graph = imap.graph or build_graph(imap.lanes)
    rng = record_rng(seed, "scenario", index)
    dt = settings.DT
    n_lanes = config.lanes_per_arm

    kind = SCENARIO_TYPES[(index + derive_seed(seed, "types") % 3) % 3]
    arm = int(rng.integers(4))
    lane_index = int(rng.integers(n_lanes))
    start_lane = imap.inbound[(arm, lane_index)]
    goal_lane = imap.outbound[_target_outbound(kind, arm, lane_index, n_lanes)]
    goal_node = graph.lane_nodes[goal_lane][-1]

    theta = arm * math.pi / 2
    d, n = _direction(theta), _direction(theta + math.pi / 2)
    offset = config.lane_width / 2 + lane_index * config.lane_width
    before_stop = float(rng.uniform(*SDV_START_WINDOW))
    position = d * (imap.junction_half + before_stop) + n * offset
    heading = theta + math.pi
    speed = float(rng.uniform(0.5, 1.0) * config.speed_limit)
    sdv_history = _history(position, heading, speed, settings.HISTORY_STEPS, dt)
    sdv_state = sdv_history[-1]
    start_node = assign_sdv_node(graph, Pose(sdv_state.x, sdv_state.y, sdv_state.heading))
    route = compute_route_mask(graph, start_node, goal_node)

    spawned = _spawn_vehicles(rng, imap, config, start_lane, config.arm_length - before_stop)
    agents = _simulate_vehicles(rng, imap, graph, config, spawned)
    agents.append(_pedestrian(rng, imap, config))

    idm = default_idm(config.speed_limit)
    while True:
        predictions = [_prediction_from_track(agent, settings.SIM_STEPS) for agent in agents]
        rollout = follow_route(
            graph, route, start_node, goal_node, sdv_state, idm,
            predictions=predictions, steps=settings.SIM_STEPS, dt=dt, ego_length=VEHICLE_FOOTPRINT.length,
        )
        frames = np.vstack([sdv_state.xy[None, :], rollout.positions])
        headings = headings_from_positions(frames, sdv_state.heading)
        hits = _colliding_agents(frames, headings, VEHICLE_FOOTPRINT, agents)
        if not hits:
            break
        logger.debug(f"Removing agents {hits} that collide with the expert in scenario {index}")
        agents = [agent for agent in agents if agent.agent_id not in hits]

    corrupt_rng = record_rng(seed, "corrupt", index)
    if config.corrupt_route_fraction > 0 and corrupt_rng.random() < config.corrupt_route_fraction:
        others = [
            graph.lane_nodes[imap.outbound[_target_outbound(other, arm, lane_index, n_lanes)]][-1]
            for other in SCENARIO_TYPES
            if other != kind
        ]
        others = [node for node in others if node != goal_node]
        if others:
            goal_node = others[int(corrupt_rng.integers(len(others)))]

    telemetry.SCENARIOS_GENERATED.labels(scenario_type=kind.value).inc()
    expert_log = rollout.positions
    return ScenarioRecord(
        scenario_id=f"isec-{seed}-{index:05d}",
        scenario_type=kind.value,
        graph=graph,
        drivable_area=tuple(imap.drivable_area),
        agents=tuple(agents),
        sdv_history=sdv_history,
        sdv_footprint=VEHICLE_FOOTPRINT,
        start_node=start_node,
        goal_node=goal_node,
        expert_future=Trajectory(expert_log[: settings.HORIZON_STEPS], dt),
        speed_limit=config.speed_limit,
        expert_log=expert_log,
    )


def _generate_chunk(args) -> List[ScenarioRecord]:
    seed, indices, config = args
    imap = build_intersection_map(config)
    imap.graph = build_graph(imap.lanes)
    return [generate_intersection(seed, i, config, imap) for i in indices]


def generate_intersections(
    seed: int, count: int, config: Optional[IntersectionConfig] = None, jobs: int = 1
) -> List[ScenarioRecord]:
    """
    Generate ``count`` intersection scenarios.

    Record i depends only on (seed, i, config), so the output is identical for
    any number of worker processes.

    Args:
        seed: Stream seed
        count: Number of scenarios (>= 1)
        config: Map and traffic parameters
        jobs: Worker processes

    Returns:
        Records in index order
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    config = config or IntersectionConfig()
    if jobs <= 1:
        records = _generate_chunk((seed, list(range(count)), config))
    else:
        chunks = [chunk for chunk in (list(range(count))[k::jobs] for k in range(jobs)) if chunk]
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            parts = list(pool.map(_generate_chunk, [(seed, chunk, config) for chunk in chunks]))
        by_index = {i: r for chunk, part in zip(chunks, parts) for i, r in zip(chunk, part)}
        records = [by_index[i] for i in range(count)]
    logger.info(f"Generated {len(records)} intersection scenarios with seed {seed}")
    return records
