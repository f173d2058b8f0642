"""Goal conditioning of edge distributions.

Both masks work on any numeric dtype, including object arrays of
``fractions.Fraction``, so ratio properties can be checked exactly.
Terminal edges always count as on-route.
"""
import math

import numpy as np

from gcplan.models.graph import RouteMask
from gcplan.models.policy import EdgeDistribution


def _validate_beta(beta: float) -> None:
    if not math.isfinite(float(beta)) or beta < 0:
        raise ValueError(f"beta must be finite and non-negative, got {beta}")


def soft_mask_node(probs: np.ndarray, on_route: np.ndarray, beta) -> np.ndarray:
    """
    Add the bonus beta to the node's on-route mass and renormalize.

    The bonus is shared among on-route edges in proportion to their
    probability, so p_i = pi_i * (1 + beta * m_i / P_on) / (1 + beta).
    With all on-route mass at zero the bonus is split evenly instead.
    """
    if beta == 0 or bool(np.all(on_route)):
        return probs
    p_on = sum(p for p, m in zip(probs, on_route) if m)
    n_on = int(np.count_nonzero(on_route))
    total = 1 + beta
    if p_on == 0:
        return np.array([(p + beta / n_on if m else p) / total for p, m in zip(probs, on_route)], dtype=probs.dtype)
    return np.array(
        [p * (1 + beta / p_on) / total if m else p / total for p, m in zip(probs, on_route)],
        dtype=probs.dtype,
    )


def hard_mask_node(probs: np.ndarray, on_route: np.ndarray, terminal_column: int) -> np.ndarray:
    """Zero off-route edges and renormalize the remaining mass."""
    if not any(p > 0 for p, m in zip(probs, on_route) if not m):
        return probs
    p_on = sum(p for p, m in zip(probs, on_route) if m)
    if p_on == 0:
        out = np.array([0 * p for p in probs], dtype=probs.dtype)
        out[terminal_column] = 1
        return out
    return np.array([p / p_on if m else 0 * p for p, m in zip(probs, on_route)], dtype=probs.dtype)


def soft_mask(dist: EdgeDistribution, route: RouteMask, beta: float) -> EdgeDistribution:
    _validate_beta(beta)
    if beta == 0:
        return dist
    return dist.replace(
        [soft_mask_node(probs, route.edge_mask(edges), beta) for edges, probs in zip(dist.edges, dist.probs)]
    )


def hard_mask(dist: EdgeDistribution, route: RouteMask) -> EdgeDistribution:
    masked = []
    for edges, probs in zip(dist.edges, dist.probs):
        terminal_column = next(i for i, edge in enumerate(edges) if edge.is_terminal)
        masked.append(hard_mask_node(probs, route.edge_mask(edges), terminal_column))
    return dist.replace(masked)


def on_route_mass(dist: EdgeDistribution, route: RouteMask, node: int):
    mask = route.edge_mask(dist.edges[node])
    return sum(p for p, m in zip(dist.probs[node], mask) if m)
