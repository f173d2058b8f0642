import math
from typing import Sequence

import numpy as np

from gcplan.core.config import settings
from gcplan.models.graph import EdgeKind, LaneGraph
from gcplan.utils.geometry import Polyline


def _dedupe(points: np.ndarray) -> np.ndarray:
    if len(points) < 2:
        return points
    keep = np.ones(len(points), dtype=bool)
    keep[1:] = np.linalg.norm(np.diff(points, axis=0), axis=1) > 1e-9
    return points[keep]


def build_reference_path(
    graph: LaneGraph,
    nodes: Sequence[int],
    start_xy,
    blend_length: float = settings.BLEND_LENGTH,
) -> np.ndarray:
    """
    Concatenate the centrelines of a node sequence into one path.

    The path starts at the projection of ``start_xy`` onto the first node.
    Successor transitions append the next centreline. A proximal transition
    replaces the current node's portion with a linear cross-fade onto the
    target lane over ``blend_length`` metres, then follows the target.
    """
    first = graph.nodes[nodes[0]].polyline
    path = first.slice_from(first.project(np.asarray(start_xy, dtype=float)).arc)
    node_start = 0.0
    for prev, nxt in zip(nodes[:-1], nodes[1:]):
        edge = graph.edge_between(prev, nxt)
        target = graph.nodes[nxt].polyline
        if edge is None or edge.kind != EdgeKind.PROXIMAL:
            node_start = Polyline(path).length
            tail = target.points
            if np.linalg.norm(tail[0] - path[-1]) < 1e-6:
                tail = tail[1:]
            path = np.vstack([path, tail]) if len(tail) else path
            continue
        current = Polyline(path)
        anchor = current.point_at(node_start)
        s_target = target.project(anchor).arc
        blend = min(blend_length, target.length - s_target)
        base = current.slice_to(node_start)[:-1]
        if blend > 1e-6:
            d = np.linspace(0.0, blend, max(2, math.ceil(blend) + 1))
            w = (d / blend)[:, None]
            blended = (1.0 - w) * current.point_at(node_start + d) + w * target.point_at(s_target + d)
            rest = target.slice_from(s_target + blend)[1:]
            path = np.vstack([base, blended, rest])
        else:
            path = np.vstack([base, target.slice_from(s_target)])
        path = _dedupe(path)
    return _dedupe(path)
