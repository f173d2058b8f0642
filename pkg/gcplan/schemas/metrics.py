from typing import List, Optional

from pydantic import BaseModel, field_validator

CSV_FIELDS = (
    "scenario_id",
    "scenario_type",
    "planner",
    "ade",
    "fde",
    "miss",
    "tpi_mean",
    "progress",
    "drivable_compliance",
    "collision_free",
    "score",
)
AGGREGATE_ID = "__aggregate__"
MEAN_ID = "__mean__"
STD_ID = "__std__"
SUMMARY_IDS = (AGGREGATE_ID, MEAN_ID, STD_ID)


class OpenLoopMetrics(BaseModel):
    ade: float
    fde: float
    miss: bool
    tpi_mean: Optional[float] = None

    @field_validator("ade", "fde")
    def check_non_negative(cls, v: float) -> float:
        if v < 0:
            raise ValueError("displacement errors are non-negative")
        return v


class ClosedLoopMetrics(BaseModel):
    progress: float
    drivable_compliance: float
    collision_free: bool
    tpi_mean: Optional[float] = None
    score: float

    @field_validator("progress", "drivable_compliance", "score")
    def check_unit_interval(cls, v: float) -> float:
        if not 0.0 <= v <= 1.0:
            raise ValueError("must lie in [0, 1]")
        return v


class MetricRow(BaseModel):
    """One CSV row; for aggregate rows, miss and collision_free hold rates."""

    scenario_id: str
    scenario_type: str
    planner: str
    ade: Optional[float] = None
    fde: Optional[float] = None
    miss: Optional[float] = None
    tpi_mean: Optional[float] = None
    progress: Optional[float] = None
    drivable_compliance: Optional[float] = None
    collision_free: Optional[float] = None
    score: Optional[float] = None

    class Config:
        extra = "forbid"

    @property
    def is_summary(self) -> bool:
        return self.scenario_id in SUMMARY_IDS

    @classmethod
    def from_open_loop(cls, scenario_id: str, scenario_type: str, planner: str, m: OpenLoopMetrics) -> "MetricRow":
        return cls(
            scenario_id=scenario_id,
            scenario_type=scenario_type,
            planner=planner,
            ade=m.ade,
            fde=m.fde,
            miss=float(m.miss),
            tpi_mean=m.tpi_mean,
            score=1.0 - float(m.miss),
        )

    @classmethod
    def from_closed_loop(cls, scenario_id: str, scenario_type: str, planner: str, m: ClosedLoopMetrics) -> "MetricRow":
        return cls(
            scenario_id=scenario_id,
            scenario_type=scenario_type,
            planner=planner,
            tpi_mean=m.tpi_mean,
            progress=m.progress,
            drivable_compliance=m.drivable_compliance,
            collision_free=float(m.collision_free),
            score=m.score,
        )


class EvaluationReport(BaseModel):
    loop: str
    planner: str
    rows: List[MetricRow]
    aggregate: MetricRow
