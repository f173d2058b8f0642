import logging
import math
from typing import List, Tuple

import numpy as np

from gcplan.core.config import settings
from gcplan.core.errors import EnumerationGuardError
from gcplan.models.graph import TERMINAL
from gcplan.models.plan import SamplerConfig, Traversal
from gcplan.models.policy import EdgeDistribution
from gcplan.observability import telemetry
from gcplan.utils.rng import derive_seed, step_uniforms

logger = logging.getLogger(__name__)


class _SamplingTables:
    """Padded cumulative tables: row u holds node u's edges in their original order."""

    def __init__(self, dist: EdgeDistribution):
        width = max(len(edges) for edges in dist.edges)
        n = len(dist.edges)
        self.targets = np.full((n, width), TERMINAL, dtype=np.int64)
        self.cdf = np.full((n, width), np.inf)
        self.last_positive = np.zeros(n, dtype=np.int64)
        for u, (edges, probs) in enumerate(zip(dist.edges, dist.probs)):
            p = np.asarray(probs, dtype=float)
            self.targets[u, : len(edges)] = [edge.target for edge in edges]
            self.cdf[u, : len(edges)] = np.cumsum(p)
            positive = np.flatnonzero(p > 0)
            self.last_positive[u] = positive[-1] if len(positive) else len(edges) - 1

    def draw(self, nodes: np.ndarray, uniforms: np.ndarray) -> np.ndarray:
        """Inverse-CDF draw: the first column whose cumulative mass exceeds the uniform."""
        column = (self.cdf[nodes] <= uniforms[:, None]).sum(axis=1)
        column = np.minimum(column, self.last_positive[nodes])
        return self.targets[nodes, column]


def sample_traversals(dist: EdgeDistribution, start: int, cfg: SamplerConfig) -> List[Traversal]:
    """
    Sample K traversals from start.

    The uniform used by sample k at step j is entry k of the Philox stream
    keyed by (seed, j), so every sample is independent of K and of how the
    samples are split across workers. No edge is drawn at the T-th node.

    Args:
        dist: Per-node edge distribution
        start: Start node id
        cfg: Sample count, node cap and seed

    Returns:
        K traversals in sample-index order
    """
    if not 0 <= start < len(dist.edges):
        raise ValueError(f"start node {start} not found")
    tables = _SamplingTables(dist)
    key = derive_seed(cfg.seed, "traversal")
    k = cfg.num_samples
    nodes = np.full((k, cfg.max_nodes), TERMINAL, dtype=np.int64)
    nodes[:, 0] = start
    lengths = np.ones(k, dtype=np.int64)
    terminated = np.zeros(k, dtype=bool)
    current = np.full(k, start, dtype=np.int64)
    active = np.ones(k, dtype=bool)

    for step in range(cfg.max_nodes - 1):
        if not active.any():
            break
        uniforms = step_uniforms(key, step, k)
        idx = np.flatnonzero(active)
        chosen = tables.draw(current[idx], uniforms[idx])
        stop = chosen == TERMINAL
        terminated[idx[stop]] = True
        active[idx[stop]] = False
        moving = idx[~stop]
        nodes[moving, step + 1] = chosen[~stop]
        current[moving] = chosen[~stop]
        lengths[moving] += 1

    telemetry.TRAVERSALS_SAMPLED.inc(k)
    return [
        Traversal(nodes=tuple(int(v) for v in nodes[i, : lengths[i]]), terminated=bool(terminated[i]))
        for i in range(k)
    ]


def traversal_log_prob(dist: EdgeDistribution, traversal: Traversal) -> float:
    """Log probability of a traversal; -inf when an edge lies outside the support."""
    total = 0.0
    steps = list(zip(traversal.nodes[:-1], traversal.nodes[1:]))
    if traversal.terminated:
        steps.append((traversal.nodes[-1], TERMINAL))
    for source, target in steps:
        if not 0 <= source < len(dist.edges):
            return -math.inf
        p = float(dist.probability(source, target))
        if p <= 0.0:
            return -math.inf
        total += math.log(p)
    return total


def enumerate_traversals(
    dist: EdgeDistribution, start: int, max_nodes: int, limit: int = settings.ENUMERATION_LIMIT
) -> List[Tuple[Traversal, float]]:
    """
    Exhaustive depth-first expansion of every traversal with positive probability.

    Raises:
        EnumerationGuardError: If more than ``limit`` traversals would be produced
    """
    results: List[Tuple[Traversal, float]] = []
    stack: List[Tuple[Tuple[int, ...], float]] = [((start,), 1.0)]
    while stack:
        path, prob = stack.pop()
        if len(path) >= max_nodes:
            results.append((Traversal(nodes=path, terminated=False), prob))
        else:
            children = []
            for edge, p in dist.for_node(path[-1]):
                p = float(p)
                if p <= 0.0:
                    continue
                if edge.is_terminal:
                    results.append((Traversal(nodes=path, terminated=True), prob * p))
                else:
                    children.append((path + (edge.target,), prob * p))
            stack.extend(reversed(children))
        if len(results) + len(stack) > limit:
            raise EnumerationGuardError(f"more than {limit} traversals from node {start}")
    return results
