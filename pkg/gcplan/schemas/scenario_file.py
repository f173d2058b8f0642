from typing import List, Literal, Tuple

from pydantic import BaseModel, field_validator

from gcplan.models.scenario import AgentClass

# [x, y, v, a, omega, heading]
StateRow = Tuple[float, float, float, float, float, float]


class LaneSchema(BaseModel):
    id: int
    points: List[Tuple[float, float, float]]
    successors: List[int] = []
    neighbours: List[int] = []
    stop_lines: List[int] = []
    crosswalks: List[int] = []

    class Config:
        extra = "forbid"

    @field_validator("points")
    def check_points(cls, v: List[Tuple[float, float, float]]) -> List[Tuple[float, float, float]]:
        if len(v) < 2:
            raise ValueError("a lane needs at least 2 points")
        return v


class MapSchema(BaseModel):
    lanes: List[LaneSchema]
    drivable_area: List[List[Tuple[float, float]]]
    speed_limit: float = 10.0

    class Config:
        extra = "forbid"

    @field_validator("drivable_area")
    def check_polygons(cls, v: List[List[Tuple[float, float]]]) -> List[List[Tuple[float, float]]]:
        for ring in v:
            if len(ring) < 3:
                raise ValueError("a drivable-area polygon needs at least 3 vertices")
        return v

    @field_validator("speed_limit")
    def check_speed_limit(cls, v: float) -> float:
        if v <= 0:
            raise ValueError("speed_limit must be positive")
        return v


class AgentSchema(BaseModel):
    agent_id: str
    class_indicator: AgentClass
    history: List[StateRow]
    future_playback: List[StateRow] = []
    footprint: Tuple[float, float]

    class Config:
        extra = "forbid"


class SdvSchema(BaseModel):
    history: List[StateRow]
    footprint: Tuple[float, float]

    class Config:
        extra = "forbid"


class RouteSchema(BaseModel):
    start_node: int
    goal_node: int

    class Config:
        extra = "forbid"


class ScenarioSchema(BaseModel):
    scenario_id: str
    scenario_type: str
    map: MapSchema
    agents: List[AgentSchema] = []
    sdv: SdvSchema
    route: RouteSchema
    expert_future: List[Tuple[float, float]]
    expert_log: List[Tuple[float, float]] = []

    class Config:
        extra = "forbid"


class ScenarioFileHeader(BaseModel):
    format_version: Literal[1]
    scenarios: list

    class Config:
        extra = "forbid"
