import json
import logging
import math
from pathlib import Path
from typing import List, Sequence

import numpy as np
from pydantic import ValidationError

from gcplan.core.config import settings
from gcplan.core.errors import (
    EmptyRouteError,
    GraphConstructionError,
    LabelingError,
    ScenarioValidationError,
)
from gcplan.models.graph import RawLane
from gcplan.models.plan import Traversal
from gcplan.models.scenario import (
    AgentClass,
    AgentState,
    AgentTrack,
    Footprint,
    ScenarioRecord,
    Trajectory,
)
from gcplan.observability import telemetry
from gcplan.schemas.scenario_file import (
    AgentSchema,
    LaneSchema,
    MapSchema,
    RouteSchema,
    ScenarioFileHeader,
    ScenarioSchema,
    SdvSchema,
)
from gcplan.services.lane_graph import build_graph, compute_route_mask
from gcplan.utils.geometry import wrap_angle

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1


def _error_path(error: dict) -> str:
    return ".".join(str(part) for part in error["loc"])


def _states(index: int, field: str, rows) -> tuple:
    states = []
    for i, row in enumerate(rows):
        try:
            states.append(AgentState(*row))
        except ValueError as e:
            raise ScenarioValidationError(index, f"{field}.{i}", str(e))
    return tuple(states)


def _footprint(index: int, field: str, values) -> Footprint:
    length, width = values
    if length <= 0 or width <= 0:
        raise ScenarioValidationError(index, field, "footprint length and width must be positive")
    return Footprint(float(length), float(width))


def record_from_schema(index: int, schema: ScenarioSchema) -> ScenarioRecord:
    """Turn a validated scenario entry into a ScenarioRecord, checking every invariant."""
    lanes = [
        RawLane(
            id=lane.id,
            points=tuple(tuple(p) for p in lane.points),
            successors=tuple(lane.successors),
            neighbours=tuple(lane.neighbours),
            stop_lines=tuple(lane.stop_lines),
            crosswalks=tuple(lane.crosswalks),
        )
        for lane in schema.map.lanes
    ]
    try:
        graph = build_graph(lanes)
    except GraphConstructionError as e:
        raise ScenarioValidationError(index, "map.lanes", str(e))

    for field in ("start_node", "goal_node"):
        node = getattr(schema.route, field)
        if not graph.has_node(node):
            raise ScenarioValidationError(
                index, f"route.{field}", f"node {node} not found in a {graph.num_nodes}-node graph"
            )

    sdv_history = _states(index, "sdv.history", schema.sdv.history)
    if len(sdv_history) != settings.HISTORY_STEPS:
        raise ScenarioValidationError(
            index, "sdv.history", f"expected {settings.HISTORY_STEPS} states, got {len(sdv_history)}"
        )

    agents = []
    for i, agent in enumerate(schema.agents):
        history = _states(index, f"agents.{i}.history", agent.history)
        if len(history) != settings.HISTORY_STEPS:
            raise ScenarioValidationError(
                index, f"agents.{i}.history", f"expected {settings.HISTORY_STEPS} states, got {len(history)}"
            )
        agents.append(
            AgentTrack(
                agent_id=agent.agent_id,
                class_indicator=AgentClass(agent.class_indicator),
                history=history,
                future_playback=_states(index, f"agents.{i}.future_playback", agent.future_playback),
                footprint=_footprint(index, f"agents.{i}.footprint", agent.footprint),
            )
        )

    if len(schema.expert_future) != settings.HORIZON_STEPS:
        raise ScenarioValidationError(
            index, "expert_future", f"expected {settings.HORIZON_STEPS} waypoints, got {len(schema.expert_future)}"
        )
    try:
        expert_future = Trajectory(np.array(schema.expert_future, dtype=float), settings.DT)
    except ValueError as e:
        raise ScenarioValidationError(index, "expert_future", str(e))
    expert_log = np.array(schema.expert_log, dtype=float).reshape(-1, 2) if schema.expert_log else None
    if expert_log is not None and not np.allclose(expert_log[: settings.HORIZON_STEPS], expert_future.waypoints):
        raise ScenarioValidationError(index, "expert_log", "expert_log must start with expert_future")

    return ScenarioRecord(
        scenario_id=schema.scenario_id,
        scenario_type=schema.scenario_type,
        graph=graph,
        drivable_area=tuple(np.array(ring, dtype=float) for ring in schema.map.drivable_area),
        agents=tuple(agents),
        sdv_history=sdv_history,
        sdv_footprint=_footprint(index, "sdv.footprint", schema.sdv.footprint),
        start_node=schema.route.start_node,
        goal_node=schema.route.goal_node,
        expert_future=expert_future,
        speed_limit=schema.map.speed_limit,
        expert_log=expert_log,
    )


def parse_scenarios(data) -> List[ScenarioRecord]:
    try:
        header = ScenarioFileHeader.model_validate(data)
    except ValidationError as e:
        error = e.errors()[0]
        raise ScenarioValidationError(None, _error_path(error), error["msg"])
    records = []
    seen = set()
    for index, raw in enumerate(header.scenarios):
        try:
            schema = ScenarioSchema.model_validate(raw)
        except ValidationError as e:
            error = e.errors()[0]
            raise ScenarioValidationError(index, _error_path(error), error["msg"])
        if schema.scenario_id in seen:
            raise ScenarioValidationError(index, "scenario_id", f"duplicate scenario id {schema.scenario_id}")
        seen.add(schema.scenario_id)
        records.append(record_from_schema(index, schema))
    return records


def load_scenarios(path) -> List[ScenarioRecord]:
    """
    Load and validate a scenario file.

    Raises:
        ScenarioValidationError: With the record index and field path of the first problem
        OSError: If the file cannot be read
    """
    text = Path(path).read_text(encoding="utf-8")
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise ScenarioValidationError(None, "<json>", str(e))
    records = parse_scenarios(data)
    logger.info(f"Loaded {len(records)} scenarios from {path}")
    return records


def _rows(states: Sequence[AgentState]) -> list:
    return [list(state.as_row()) for state in states]


def record_to_schema(record: ScenarioRecord) -> ScenarioSchema:
    lanes = [
        LaneSchema(
            id=lane.id,
            points=[tuple(float(v) for v in p) for p in lane.points],
            successors=list(lane.successors),
            neighbours=list(lane.neighbours),
            stop_lines=list(lane.stop_lines),
            crosswalks=list(lane.crosswalks),
        )
        for lane in record.graph.lanes
    ]
    return ScenarioSchema(
        scenario_id=record.scenario_id,
        scenario_type=record.scenario_type,
        map=MapSchema(
            lanes=lanes,
            drivable_area=[[tuple(float(v) for v in xy) for xy in ring] for ring in record.drivable_area],
            speed_limit=record.speed_limit,
        ),
        agents=[
            AgentSchema(
                agent_id=agent.agent_id,
                class_indicator=agent.class_indicator,
                history=_rows(agent.history),
                future_playback=_rows(agent.future_playback),
                footprint=(agent.footprint.length, agent.footprint.width),
            )
            for agent in record.agents
        ],
        sdv=SdvSchema(
            history=_rows(record.sdv_history),
            footprint=(record.sdv_footprint.length, record.sdv_footprint.width),
        ),
        route=RouteSchema(start_node=record.start_node, goal_node=record.goal_node),
        expert_future=[tuple(float(v) for v in xy) for xy in record.expert_future.waypoints],
        expert_log=[] if record.expert_log is None else [tuple(float(v) for v in xy) for xy in record.expert_log],
    )


def dumps_scenarios(records: Sequence[ScenarioRecord]) -> str:
    """Canonical text: one scenario per line, fields in schema order, shortest round-trip floats."""
    lines = [
        json.dumps(record_to_schema(record).model_dump(mode="json"), allow_nan=False)
        for record in records
    ]
    return f'{{"format_version": {FORMAT_VERSION}, "scenarios": [\n' + ",\n".join(lines) + "\n]}\n"


def save_scenarios(path, records: Sequence[ScenarioRecord]) -> None:
    Path(path).write_text(dumps_scenarios(records), encoding="utf-8")
    logger.info(f"Wrote {len(records)} scenarios to {path}")


def expert_traversal(record: ScenarioRecord, radius: float = settings.LABEL_RADIUS) -> Traversal:
    """
    Project the expert future onto the lane graph, starting at the start node.

    For each waypoint the label advances along outgoing edges while a target
    node is strictly closer to the waypoint than the current node; ties are
    resolved by the distances of the following waypoints.

    Raises:
        LabelingError: If a waypoint is farther than ``radius`` from every candidate node
    """
    graph = record.graph
    waypoints = record.expert_future.waypoints
    if len(waypoints) == 0:
        raise LabelingError(f"scenario {record.scenario_id} has no expert waypoints")
    current = record.start_node
    nodes = [current]

    def distance(node: int, point) -> float:
        return graph.nodes[node].polyline.project(point).distance

    for w_index, point in enumerate(waypoints):
        lookahead = waypoints[w_index + 1 : w_index + 4]
        for _ in range(graph.num_nodes):
            d_current = distance(current, point)
            best, best_key = None, None
            for edge in graph.edges_from(current):
                if edge.is_terminal or edge.target in nodes:
                    continue
                d = distance(edge.target, point)
                if d >= d_current - 1e-6:
                    continue
                ahead = graph.nodes[edge.target].polyline.distances(lookahead).sum() if len(lookahead) else 0.0
                key = (round(d, 6), float(ahead), edge.target)
                if best_key is None or key < best_key:
                    best, best_key = edge.target, key
            if best is None:
                break
            current = best
            nodes.append(current)
        if distance(current, point) > radius:
            telemetry.LABELING_ERRORS.inc()
            raise LabelingError(
                f"scenario {record.scenario_id}: waypoint {w_index} is {distance(current, point):.2f} m "
                f"from the lane graph"
            )
    return Traversal(nodes=tuple(nodes), terminated=True)


def check_route_consistency(record: ScenarioRecord) -> bool:
    """True iff the expert traversal exists and stays on the labelled route."""
    try:
        traversal = expert_traversal(record)
        route = compute_route_mask(record.graph, record.start_node, record.goal_node)
    except (LabelingError, EmptyRouteError):
        return False
    return all(node in route.on_route_nodes for node in traversal.nodes)


def filter_compromised(records: Sequence[ScenarioRecord]) -> List[ScenarioRecord]:
    kept = [record for record in records if check_route_consistency(record)]
    if len(kept) < len(records):
        logger.warning(f"Removed {len(records) - len(kept)} scenarios with inconsistent route labels")
    return kept


def expert_state(record: ScenarioRecord, step: int, dt: float = settings.DT) -> AgentState:
    """SDV state at a replan instant reconstructed from the expert log (step 0 is the current state)."""
    if step <= 0:
        return record.sdv_state
    path = record.expert_path
    step = min(step, len(path) - 1)
    displacement = path[step] - path[step - 1]
    speed = float(np.hypot(*displacement)) / dt
    if speed > 1e-6:
        heading = math.atan2(displacement[1], displacement[0])
    else:
        heading = expert_state(record, step - 1, dt).heading
    return AgentState(x=float(path[step][0]), y=float(path[step][1]), v=speed, heading=float(wrap_angle(heading)))
