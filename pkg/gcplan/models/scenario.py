import enum
import math
from dataclasses import dataclass
from functools import cached_property
from typing import Optional, Tuple

import numpy as np
import shapely
from shapely.geometry import Polygon
from shapely.ops import unary_union

from gcplan.models.graph import LaneGraph, Pose


class AgentClass(str, enum.Enum):
    VEHICLE = "vehicle"
    PEDESTRIAN = "pedestrian"


class ScenarioType(str, enum.Enum):
    TRAVERSE = "traverse"
    LEFT_TURN = "left_turn"
    RIGHT_TURN = "right_turn"


@dataclass(frozen=True)
class AgentState:
    x: float
    y: float
    v: float
    a: float = 0.0
    omega: float = 0.0
    heading: float = 0.0

    def __post_init__(self):
        values = (self.x, self.y, self.v, self.a, self.omega, self.heading)
        if not all(math.isfinite(value) for value in values):
            raise ValueError("agent state must be finite")
        if self.v < 0:
            raise ValueError("agent speed must be non-negative")

    @property
    def xy(self) -> np.ndarray:
        return np.array([self.x, self.y])

    @property
    def pose(self) -> Pose:
        return Pose(self.x, self.y, self.heading)

    def as_row(self) -> Tuple[float, ...]:
        return (self.x, self.y, self.v, self.a, self.omega, self.heading)


@dataclass(frozen=True)
class Footprint:
    length: float
    width: float


@dataclass(frozen=True)
class AgentTrack:
    agent_id: str
    class_indicator: AgentClass
    history: Tuple[AgentState, ...]
    future_playback: Tuple[AgentState, ...]
    footprint: Footprint

    def state_at(self, frame: int) -> AgentState:
        """State at simulation frame (0 = current time), held at the last playback state."""
        if frame <= 0 or not self.future_playback:
            return self.history[-1]
        return self.future_playback[min(frame, len(self.future_playback)) - 1]


@dataclass(frozen=True, eq=False)
class Trajectory:
    waypoints: np.ndarray
    dt: float = 0.5

    def __post_init__(self):
        waypoints = np.array(self.waypoints, dtype=float).reshape(-1, 2)
        if not np.all(np.isfinite(waypoints)):
            raise ValueError("trajectory waypoints must be finite")
        waypoints.setflags(write=False)
        object.__setattr__(self, "waypoints", waypoints)

    def __len__(self) -> int:
        return len(self.waypoints)

    @property
    def final(self) -> np.ndarray:
        return self.waypoints[-1]


@dataclass(frozen=True, eq=False)
class ScenarioRecord:
    scenario_id: str
    scenario_type: str
    graph: LaneGraph
    drivable_area: Tuple[np.ndarray, ...]
    agents: Tuple[AgentTrack, ...]
    sdv_history: Tuple[AgentState, ...]
    sdv_footprint: Footprint
    start_node: int
    goal_node: int
    expert_future: Trajectory
    speed_limit: float
    expert_log: Optional[np.ndarray] = None

    @property
    def sdv_state(self) -> AgentState:
        return self.sdv_history[-1]

    @cached_property
    def drivable_union(self):
        union = unary_union([Polygon(ring) for ring in self.drivable_area])
        shapely.prepare(union)
        return union

    @cached_property
    def expert_positions(self) -> np.ndarray:
        """Expert positions over the whole simulation horizon (falls back to the 8 s future)."""
        if self.expert_log is not None and len(self.expert_log):
            return np.asarray(self.expert_log, dtype=float)
        return self.expert_future.waypoints

    @cached_property
    def expert_path(self) -> np.ndarray:
        return np.vstack([self.sdv_state.xy[None, :], self.expert_positions])
