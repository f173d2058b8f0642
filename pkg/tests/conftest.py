import math

import pytest

from gcplan.models.graph import RawLane
from gcplan.services.lane_graph import build_graph
from tests.factories import straight_lane


@pytest.fixture
def chain_graph():
    """One 60 m lane along +x: nodes 0 -> 1 -> 2."""
    return build_graph([straight_lane(0, (0, 0), (60, 0))])


@pytest.fixture
def long_chain_graph():
    """One 200 m lane along +x split into ten 20 m nodes."""
    return build_graph([straight_lane(0, (0, 0), (200, 0))])


@pytest.fixture
def fork_graph():
    """
    Lane 0 (nodes 0, 1) runs 40 m along +x and forks into lane 1
    (straight on, nodes 2, 3) and lane 2 (diagonal to the left, nodes 4, 5).
    """
    return build_graph(
        [
            straight_lane(0, (0, 0), (40, 0), successors=[1, 2]),
            straight_lane(1, (40, 0), (80, 0)),
            RawLane(
                id=2,
                points=((40.0, 0.0, math.pi / 4), (50.0, 10.0, math.pi / 4), (60.0, 20.0, math.pi / 4)),
            ),
        ]
    )


@pytest.fixture
def parallel_graph():
    """Two neighbouring 60 m lanes: lane 0 (nodes 0-2) at y = 0, lane 1 (nodes 3-5) at y = 3.5."""
    return build_graph(
        [
            straight_lane(0, (0, 0), (60, 0), neighbours=[1]),
            straight_lane(1, (0, 3.5), (60, 3.5)),
        ]
    )


@pytest.fixture
def diamond_graph():
    """
    Two parallel 40 m lanes that both continue into a shared exit lane.

    lane 0: nodes 0, 1 at y = 0; lane 1: nodes 2, 3 at y = 3.5, neighbours;
    lane 2 (exit, from the end of lane 0): nodes 4, 5.
    """
    return build_graph(
        [
            straight_lane(0, (0, 0), (40, 0), successors=[2], neighbours=[1]),
            straight_lane(1, (0, 3.5), (40, 3.5)),
            straight_lane(2, (40, 0), (80, 0)),
        ]
    )
