from typing import Sequence

import numpy as np
from scipy.spatial.distance import cdist

from gcplan.core.config import settings
from gcplan.models.plan import PlanMode, PlanSet
from gcplan.models.scenario import Trajectory


def _farthest_point_init(points: np.ndarray, num_modes: int, seed: int) -> np.ndarray:
    """Seeded first centre, then repeatedly the point farthest from the chosen centres."""
    first = int(np.random.default_rng(seed).integers(len(points)))
    chosen = [first]
    nearest = cdist(points, points[first : first + 1])[:, 0]
    while len(chosen) < num_modes:
        candidate = int(np.argmax(nearest))
        if nearest[candidate] <= 0.0:
            break
        chosen.append(candidate)
        nearest = np.minimum(nearest, cdist(points, points[candidate : candidate + 1])[:, 0])
    return points[chosen].copy()


def kmeans(
    points: np.ndarray,
    num_modes: int,
    seed: int,
    max_iter: int = settings.KMEANS_MAX_ITER,
    tolerance: float = settings.KMEANS_TOLERANCE,
):
    """
    Lloyd iterations from a farthest-point initialisation.

    Returns:
        (centroids, labels) where centroids that ended up empty are kept;
        assignment ties go to the lower centroid index
    """
    centroids = _farthest_point_init(points, num_modes, seed)
    labels = np.zeros(len(points), dtype=np.int64)
    for _ in range(max_iter):
        labels = np.argmin(cdist(points, centroids), axis=1)
        updated = centroids.copy()
        for c in range(len(centroids)):
            members = labels == c
            if members.any():
                updated[c] = points[members].mean(axis=0)
        shift = float(np.max(np.linalg.norm(updated - centroids, axis=1)))
        centroids = updated
        if shift < tolerance:
            break
    labels = np.argmin(cdist(points, centroids), axis=1)
    return centroids, labels


def cluster_plans(trajectories: Sequence[Trajectory], num_modes: int, seed: int) -> PlanSet:
    """
    Cluster candidate trajectories into at most ``num_modes`` plans.

    Each mode is a cluster centroid with probability equal to its member
    fraction. Empty clusters are dropped; ranks follow descending member
    count with ties broken by the lower centroid index.
    """
    if not trajectories:
        raise ValueError("cannot cluster an empty trajectory set")
    if num_modes < 1:
        raise ValueError("num_modes must be >= 1")
    dt = trajectories[0].dt
    shape = trajectories[0].waypoints.shape
    points = np.stack([t.waypoints.reshape(-1) for t in trajectories])
    centroids, labels = kmeans(points, num_modes, seed)
    counts = np.bincount(labels, minlength=len(centroids))
    order = sorted((c for c in range(len(centroids)) if counts[c] > 0), key=lambda c: (-counts[c], c))
    total = len(trajectories)
    modes = tuple(
        PlanMode(
            trajectory=Trajectory(centroids[c].reshape(shape), dt),
            probability=counts[c] / total,
            rank=rank,
            centroid_index=c,
        )
        for rank, c in enumerate(order, start=1)
    )
    return PlanSet(modes=modes)
