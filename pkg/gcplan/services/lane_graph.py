import logging
import math
from typing import Dict, List, Sequence, Set, Tuple

import networkx as nx
import numpy as np

from gcplan.core.config import settings
from gcplan.core.errors import EmptyRouteError, GraphConstructionError
from gcplan.models.graph import (
    TERMINAL,
    CentrelinePoint,
    Edge,
    EdgeKind,
    LaneGraph,
    LaneNode,
    Pose,
    RawLane,
    RouteMask,
)
from gcplan.utils.geometry import (
    Polyline,
    cumulative_lengths,
    heading_difference,
    resample,
    segment_headings,
    wrap_angle,
)

logger = logging.getLogger(__name__)


def _validate_topology(lanes: Sequence[RawLane]) -> None:
    ids = [lane.id for lane in lanes]
    known = set(ids)
    if len(known) != len(ids):
        seen: Set[int] = set()
        for lane_id in ids:
            if lane_id in seen:
                raise GraphConstructionError(lane_id, "duplicate lane id")
            seen.add(lane_id)
    for lane in lanes:
        if len(lane.points) < 2:
            raise GraphConstructionError(lane.id, "lane polyline needs at least 2 points")
        for ref in tuple(lane.successors) + tuple(lane.neighbours):
            if ref not in known:
                raise GraphConstructionError(lane.id, f"references unknown lane {ref}")
        if lane.id in lane.neighbours:
            raise GraphConstructionError(lane.id, "lane lists itself as a neighbour")
        for index in tuple(lane.stop_lines) + tuple(lane.crosswalks):
            if not 0 <= index < len(lane.points):
                raise GraphConstructionError(lane.id, f"flag index {index} outside the polyline")


def _interpolate(raw: np.ndarray, cum: np.ndarray, arc: float) -> Tuple[float, float, float, int, float]:
    """Pose at an arc position of a raw lane; also returns the segment index and fraction."""
    idx = int(np.searchsorted(cum, arc, side="right")) - 1
    idx = min(max(idx, 0), len(raw) - 2)
    seg = cum[idx + 1] - cum[idx]
    t = 0.0 if seg <= 0 else min(max((arc - cum[idx]) / seg, 0.0), 1.0)
    a, b = raw[idx], raw[idx + 1]
    heading = a[2] + t * wrap_angle(b[2] - a[2])
    return (
        float(a[0] + t * (b[0] - a[0])),
        float(a[1] + t * (b[1] - a[1])),
        float(heading),
        idx,
        t,
    )


def _split_lane(lane: RawLane, snippet_length_max: float, max_points: int) -> List[List[CentrelinePoint]]:
    raw = np.asarray(lane.points, dtype=float)
    stop_lines = set(lane.stop_lines)
    crosswalks = set(lane.crosswalks)
    cum = cumulative_lengths(raw[:, :2])
    total = float(cum[-1])

    def raw_point(i: int) -> CentrelinePoint:
        return CentrelinePoint(
            Pose(float(raw[i, 0]), float(raw[i, 1]), float(raw[i, 2])),
            stop_line=i in stop_lines,
            crosswalk=i in crosswalks,
        )

    def boundary_point(arc: float) -> CentrelinePoint:
        x, y, heading, idx, t = _interpolate(raw, cum, arc)
        if t <= 1e-9:
            return raw_point(idx)
        if t >= 1.0 - 1e-9:
            return raw_point(idx + 1)
        return CentrelinePoint(Pose(x, y, heading))

    if total <= 0.0:
        return [[raw_point(i) for i in range(min(len(raw), max_points))]]

    count = max(1, math.ceil(total / snippet_length_max - 1e-9))
    bounds = [total * k / count for k in range(count + 1)]
    snippets = []
    for k in range(count):
        lo, hi = bounds[k], bounds[k + 1]
        points = [boundary_point(lo)]
        for i in range(len(raw)):
            if lo + 1e-9 < cum[i] < hi - 1e-9:
                points.append(raw_point(i))
        points.append(boundary_point(hi))
        if len(points) > max_points:
            xy = np.array([[p.pose.x, p.pose.y] for p in points])
            new_xy = resample(xy, max_points)
            headings = segment_headings(new_xy)
            headings = np.append(headings, headings[-1])
            points = [
                CentrelinePoint(
                    Pose(float(x), float(y), float(h)),
                    stop_line=(j == len(new_xy) - 1 and points[-1].stop_line),
                    crosswalk=(j == 0 and points[0].crosswalk),
                )
                for j, ((x, y), h) in enumerate(zip(new_xy, headings))
            ]
        snippets.append(points)
    return snippets


def _arc_range_on(lane_line: Polyline, node: LaneNode) -> Tuple[float, float]:
    first = lane_line.project(node.xy[0]).arc
    last = lane_line.project(node.xy[-1]).arc
    return min(first, last), max(first, last)


def build_graph(
    lanes: Sequence[RawLane],
    snippet_length_max: float = settings.SNIPPET_LENGTH_MAX,
    max_points: int = settings.MAX_POINTS,
    gap_tolerance: float = settings.SUCCESSOR_GAP_TOLERANCE,
    overlap_ratio: float = settings.PROXIMAL_OVERLAP_RATIO,
) -> LaneGraph:
    """
    Build the lane graph from raw lane polylines.

    Each lane is split into ceil(length / snippet_length_max) snippets of
    near-equal length. Successor edges chain snippets within a lane and link
    the last snippet of a lane to the first snippet of each successor lane.
    Proximal edges join snippets of neighbouring lanes whose arc-length ranges
    overlap by at least ``overlap_ratio`` of the shorter snippet.

    Args:
        lanes: Raw lanes with successor/neighbour topology
        snippet_length_max: Maximum snippet arc length in metres
        max_points: Maximum number of points per snippet
        gap_tolerance: Maximum end-to-start gap for successor edges in metres
        overlap_ratio: Required arc-length overlap for proximal edges

    Returns:
        An immutable LaneGraph

    Raises:
        GraphConstructionError: On malformed topology, naming the lane id
    """
    if snippet_length_max <= 0 or max_points < 2:
        raise ValueError("snippet_length_max must be positive and max_points >= 2")
    _validate_topology(lanes)

    nodes: List[LaneNode] = []
    lane_nodes: Dict[int, List[int]] = {}
    lane_lines: Dict[int, Polyline] = {}
    for lane in lanes:
        ids = []
        for points in _split_lane(lane, snippet_length_max, max_points):
            xy = np.array([[p.pose.x, p.pose.y] for p in points])
            node = LaneNode(
                id=len(nodes),
                points=tuple(points),
                arc_length=float(cumulative_lengths(xy)[-1]),
                lane_id=lane.id,
            )
            nodes.append(node)
            ids.append(node.id)
        lane_nodes[lane.id] = ids
        lane_lines[lane.id] = Polyline(np.asarray(lane.points, dtype=float)[:, :2])

    successors: Dict[int, List[int]] = {node.id: [] for node in nodes}
    for lane in lanes:
        ids = lane_nodes[lane.id]
        for a, b in zip(ids[:-1], ids[1:]):
            successors[a].append(b)
        last = nodes[ids[-1]]
        for succ_lane in lane.successors:
            first = nodes[lane_nodes[succ_lane][0]]
            gap = float(np.hypot(*(first.xy[0] - last.xy[-1])))
            if gap > gap_tolerance:
                raise GraphConstructionError(
                    lane.id, f"successor lane {succ_lane} starts {gap:.3f} m from the lane end"
                )
            if first.id == last.id:
                raise GraphConstructionError(lane.id, "successor edge would form a self-loop")
            if first.id not in successors[last.id]:
                successors[last.id].append(first.id)

    neighbour_pairs: Set[Tuple[int, int]] = set()
    for lane in lanes:
        for other in lane.neighbours:
            neighbour_pairs.add((lane.id, other))
            neighbour_pairs.add((other, lane.id))

    proximal: Dict[int, Set[int]] = {node.id: set() for node in nodes}
    for lane_a, lane_b in sorted(neighbour_pairs):
        line_a = lane_lines[lane_a]
        for a in lane_nodes[lane_a]:
            a_range = _arc_range_on(line_a, nodes[a])
            for b in lane_nodes[lane_b]:
                b_range = _arc_range_on(line_a, nodes[b])
                overlap = min(a_range[1], b_range[1]) - max(a_range[0], b_range[0])
                shorter = min(nodes[a].arc_length, nodes[b].arc_length)
                if overlap > 0 and overlap >= overlap_ratio * shorter:
                    proximal[a].add(b)

    out_edges = []
    for node in nodes:
        edges = [Edge(node.id, target, EdgeKind.SUCCESSOR) for target in successors[node.id]]
        edges += [Edge(node.id, target, EdgeKind.PROXIMAL) for target in sorted(proximal[node.id])]
        edges.append(Edge(node.id, TERMINAL, EdgeKind.TERMINAL))
        out_edges.append(tuple(edges))

    graph = LaneGraph(nodes=tuple(nodes), out_edges=tuple(out_edges), lanes=tuple(lanes))
    logger.debug(f"Built lane graph with {len(nodes)} nodes from {len(lanes)} lanes")
    return graph


def reachable_route_nodes(digraph: nx.DiGraph, start_node: int, goal_node: int) -> Set[int]:
    """Nodes reachable from start that can also reach goal (empty when goal is unreachable)."""
    forward = nx.descendants(digraph, start_node) | {start_node}
    if goal_node not in forward:
        return set()
    backward = nx.ancestors(digraph, goal_node) | {goal_node}
    return forward & backward


def compute_route_mask(graph: LaneGraph, start_node: int, goal_node: int) -> RouteMask:
    """
    Compute the on-route nodes and edges between start and goal.

    Raises:
        EmptyRouteError: If the goal cannot be reached from the start
    """
    for name, node in (("start_node", start_node), ("goal_node", goal_node)):
        if not graph.has_node(node):
            raise ValueError(f"{name} {node} not found in lane graph")
    on_route = reachable_route_nodes(graph.digraph, start_node, goal_node)
    if not on_route:
        raise EmptyRouteError(start_node, goal_node)

    route_edges = set()
    for node in on_route:
        for edge in graph.edges_from(node):
            if edge.is_terminal:
                route_edges.add((node, TERMINAL))
            elif edge.target in on_route:
                route_edges.add((node, edge.target))
    return RouteMask(on_route_nodes=frozenset(on_route), route_edges=frozenset(route_edges))


def _assignment_key(node: LaneNode, point: np.ndarray, heading: float) -> Tuple[float, float, int]:
    projection = node.polyline.project(point)
    if len(node.points) > 1:
        seg_heading = float(segment_headings(node.xy)[projection.segment])
    else:
        seg_heading = node.start_heading
    return (round(projection.distance, 6), heading_difference(heading, seg_heading), node.id)


def rank_nodes(graph: LaneGraph, sdv_pose: Pose) -> List[Tuple[float, float, int]]:
    """Assignment keys (distance, heading difference, node id) for every node, best first."""
    point = np.array([sdv_pose.x, sdv_pose.y])
    return sorted(_assignment_key(node, point, sdv_pose.heading) for node in graph.nodes)


def assign_sdv_node(graph: LaneGraph, sdv_pose: Pose) -> int:
    """Closest node to the SDV; ties go to the smaller heading difference, then the smaller id."""
    if not graph.nodes:
        raise ValueError("cannot assign a node in an empty lane graph")
    return rank_nodes(graph, sdv_pose)[0][2]
