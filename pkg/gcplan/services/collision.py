import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from shapely.geometry import Polygon

from gcplan.core.config import settings


@dataclass(frozen=True)
class OrientedBox:
    x: float
    y: float
    heading: float
    length: float
    width: float

    def __post_init__(self):
        if self.length <= 0 or self.width <= 0:
            raise ValueError("box length and width must be positive")

    @cached_property
    def axes(self) -> np.ndarray:
        c, s = math.cos(self.heading), math.sin(self.heading)
        return np.array([[c, s], [-s, c]])

    @cached_property
    def corners(self) -> np.ndarray:
        """Corners counter-clockwise from front-left."""
        forward, left = self.axes
        hl, hw = 0.5 * self.length, 0.5 * self.width
        center = np.array([self.x, self.y])
        return np.array(
            [
                center + hl * forward + hw * left,
                center - hl * forward + hw * left,
                center - hl * forward - hw * left,
                center + hl * forward - hw * left,
            ]
        )

    @property
    def center(self) -> np.ndarray:
        return np.array([self.x, self.y])

    def polygon(self) -> Polygon:
        return Polygon(self.corners)


def boxes_overlap(a: OrientedBox, b: OrientedBox) -> bool:
    """Separating-axis test; touching boxes count as overlapping."""
    for axis in np.vstack([a.axes, b.axes]):
        pa = a.corners @ axis
        pb = b.corners @ axis
        if pa.max() < pb.min() or pb.max() < pa.min():
            return False
    return True


def contact_point(sdv_box: OrientedBox, agent_box: OrientedBox) -> np.ndarray:
    """Centroid of the overlap region, falling back to the midpoint of the centres."""
    overlap = sdv_box.polygon().intersection(agent_box.polygon())
    if overlap.is_empty:
        return 0.5 * (sdv_box.center + agent_box.center)
    centroid = overlap.centroid
    return np.array([centroid.x, centroid.y])


def at_fault_collision(
    sdv_box: OrientedBox,
    agent_box: OrientedBox,
    agent_speed: float,
    stationary_speed: float = settings.STATIONARY_SPEED,
    rear_fraction: float = settings.REAR_FAULT_FRACTION,
) -> bool:
    """
    Classify an SDV contact as at-fault.

    The SDV is at fault when the agent is stationary, or when the contact
    lies outside the rear quarter of the SDV body (longitudinal coordinate
    >= -rear_fraction * length in the SDV frame).
    """
    if agent_speed < stationary_speed:
        return True
    point = contact_point(sdv_box, agent_box)
    forward = sdv_box.axes[0]
    longitudinal = float(np.dot(point - sdv_box.center, forward))
    return longitudinal >= -rear_fraction * sdv_box.length


def headings_from_positions(positions: np.ndarray, initial_heading: float, min_step: float = 1e-6) -> np.ndarray:
    """Heading per frame from displacements; holds the previous heading when standing still."""
    headings = np.empty(len(positions))
    heading = initial_heading
    for i in range(len(positions)):
        if i > 0:
            delta = positions[i] - positions[i - 1]
            if np.hypot(*delta) > min_step:
                heading = math.atan2(delta[1], delta[0])
        headings[i] = heading
    return headings
