import enum
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Dict, FrozenSet, List, Optional, Tuple

import networkx as nx
import numpy as np

from gcplan.utils.geometry import Polyline, wrap_angle

TERMINAL = -1


class EdgeKind(str, enum.Enum):
    SUCCESSOR = "successor"
    PROXIMAL = "proximal"
    TERMINAL = "terminal"


@dataclass(frozen=True)
class Pose:
    x: float
    y: float
    heading: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y) and math.isfinite(self.heading)):
            raise ValueError("pose must be finite")
        object.__setattr__(self, "heading", wrap_angle(self.heading))


@dataclass(frozen=True)
class CentrelinePoint:
    pose: Pose
    stop_line: bool = False
    crosswalk: bool = False


@dataclass(frozen=True)
class RawLane:
    """A lane centreline as it appears in the map section of a scenario file."""

    id: int
    points: Tuple[Tuple[float, float, float], ...]
    successors: Tuple[int, ...] = ()
    neighbours: Tuple[int, ...] = ()
    stop_lines: Tuple[int, ...] = ()
    crosswalks: Tuple[int, ...] = ()


@dataclass(frozen=True)
class LaneNode:
    id: int
    points: Tuple[CentrelinePoint, ...]
    arc_length: float
    lane_id: int

    @cached_property
    def xy(self) -> np.ndarray:
        return np.array([[p.pose.x, p.pose.y] for p in self.points], dtype=float)

    @cached_property
    def polyline(self) -> Polyline:
        return Polyline(self.xy)

    @property
    def start_heading(self) -> float:
        return self.points[0].pose.heading

    @property
    def end_heading(self) -> float:
        return self.points[-1].pose.heading


@dataclass(frozen=True)
class Edge:
    source: int
    target: int
    kind: EdgeKind

    @property
    def is_terminal(self) -> bool:
        return self.kind == EdgeKind.TERMINAL


@dataclass(frozen=True, eq=False)
class LaneGraph:
    """Directed graph of centreline snippets.

    ``out_edges[u]`` lists the outgoing edges of node ``u``: successors first,
    then proximal edges by target id, then the terminal edge.
    """

    nodes: Tuple[LaneNode, ...]
    out_edges: Tuple[Tuple[Edge, ...], ...]
    lanes: Tuple[RawLane, ...] = field(default=())

    def __len__(self) -> int:
        return len(self.nodes)

    @property
    def num_nodes(self) -> int:
        return len(self.nodes)

    def edges_from(self, node: int) -> Tuple[Edge, ...]:
        return self.out_edges[node]

    def has_node(self, node: int) -> bool:
        return 0 <= node < len(self.nodes)

    def edges(self) -> List[Edge]:
        return [edge for edges in self.out_edges for edge in edges]

    @cached_property
    def lane_nodes(self) -> Dict[int, Tuple[int, ...]]:
        mapping: Dict[int, List[int]] = {}
        for node in self.nodes:
            mapping.setdefault(node.lane_id, []).append(node.id)
        return {lane: tuple(ids) for lane, ids in mapping.items()}

    @cached_property
    def digraph(self) -> nx.DiGraph:
        """networkx view over successor and proximal edges, weighted by target arc length."""
        graph = nx.DiGraph()
        graph.add_nodes_from(range(len(self.nodes)))
        for edges in self.out_edges:
            for edge in edges:
                if edge.is_terminal:
                    continue
                graph.add_edge(
                    edge.source,
                    edge.target,
                    kind=edge.kind.value,
                    length=self.nodes[edge.target].arc_length,
                )
        return graph

    def edge_between(self, source: int, target: int) -> Optional[Edge]:
        for edge in self.out_edges[source]:
            if edge.target == target:
                return edge
        return None

    def terminal_edge(self, node: int) -> Edge:
        return self.out_edges[node][-1]


@dataclass(frozen=True)
class RouteMask:
    on_route_nodes: FrozenSet[int]
    route_edges: FrozenSet[Tuple[int, int]]

    def contains(self, edge: Edge) -> bool:
        if edge.is_terminal:
            return True
        return (edge.source, edge.target) in self.route_edges

    def edge_mask(self, edges) -> np.ndarray:
        return np.array([self.contains(edge) for edge in edges], dtype=bool)
