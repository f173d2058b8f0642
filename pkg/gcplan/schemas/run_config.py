from typing import List, Literal, Optional

from pydantic import BaseModel, field_validator, model_validator

from gcplan.core.config import settings
from gcplan.models.plan import PlannerKind
from gcplan.models.policy import TrainingMode


class IntersectionConfig(BaseModel):
    arm_length: float = settings.ARM_LENGTH
    lanes_per_arm: int = settings.LANES_PER_ARM
    speed_limit: float = settings.SPEED_LIMIT
    agent_density: float = settings.AGENT_DENSITY
    lane_width: float = settings.LANE_WIDTH
    junction_margin: float = settings.JUNCTION_MARGIN
    corrupt_route_fraction: float = 0.0

    class Config:
        extra = "forbid"
        frozen = True

    @field_validator("arm_length", "speed_limit", "lane_width")
    def check_positive(cls, v: float) -> float:
        if v <= 0:
            raise ValueError("must be positive")
        return v

    @field_validator("arm_length")
    def check_arm_length(cls, v: float) -> float:
        if v < 100:
            raise ValueError("arms shorter than 100 m cannot hold the SDV start window")
        return v

    @field_validator("lanes_per_arm")
    def check_lanes(cls, v: int) -> int:
        if v < 1:
            raise ValueError("lanes_per_arm must be >= 1")
        return v

    @field_validator("agent_density", "junction_margin")
    def check_non_negative(cls, v: float) -> float:
        if v < 0:
            raise ValueError("must be non-negative")
        return v

    @field_validator("corrupt_route_fraction")
    def check_fraction(cls, v: float) -> float:
        if not 0.0 <= v <= 1.0:
            raise ValueError("corrupt_route_fraction must lie in [0, 1]")
        return v


class PlannerConfig(BaseModel):
    num_samples: int = settings.NUM_SAMPLES
    max_nodes: int = settings.MAX_NODES
    num_modes: int = settings.NUM_MODES
    seed: int = 0
    beta: Optional[float] = None
    dt: float = settings.DT
    horizon_steps: int = settings.HORIZON_STEPS
    filter_radius: float = settings.FILTER_RADIUS
    use_mobil: bool = True
    time_headway: float = settings.TIME_HEADWAY
    min_gap: float = settings.MIN_GAP
    max_accel: float = settings.MAX_ACCEL
    comfortable_decel: float = settings.COMFORTABLE_DECEL
    delta: float = settings.DELTA
    politeness: float = settings.POLITENESS
    accel_threshold: float = settings.ACCEL_THRESHOLD
    safe_decel: float = settings.SAFE_DECEL

    class Config:
        extra = "forbid"
        frozen = True

    @field_validator("num_samples", "max_nodes", "num_modes", "horizon_steps")
    def check_counts(cls, v: int) -> int:
        if v < 1:
            raise ValueError("must be >= 1")
        return v

    @field_validator("beta")
    def check_beta(cls, v: Optional[float]) -> Optional[float]:
        if v is not None and v < 0:
            raise ValueError("beta must be non-negative")
        return v


class RunConfig(BaseModel):
    """Every option a command can take; unknown keys are rejected."""

    command: Literal["generate", "train", "eval", "report"]
    seed: int = 0
    # generate
    count: int = 100
    out: Optional[str] = None
    arm_length: float = settings.ARM_LENGTH
    lanes_per_arm: int = settings.LANES_PER_ARM
    speed_limit: float = settings.SPEED_LIMIT
    agent_density: float = settings.AGENT_DENSITY
    corrupt_route_fraction: float = 0.0
    # train
    scenarios: Optional[str] = None
    mode: TrainingMode = TrainingMode.UNCONDITIONED
    epochs: int = settings.EPOCHS
    learning_rate: float = settings.LEARNING_RATE
    batch_size: int = settings.BATCH_SIZE
    # eval
    model: Optional[str] = None
    planner: PlannerKind = PlannerKind.GC_PGP
    loop: Literal["open", "closed"] = "open"
    num_samples: int = settings.NUM_SAMPLES
    max_nodes: int = settings.MAX_NODES
    num_modes: int = settings.NUM_MODES
    beta: Optional[float] = None
    repeat: int = 1
    jobs: Optional[int] = None
    drop_compromised: bool = False
    use_mobil: bool = True
    time_headway: float = settings.TIME_HEADWAY
    min_gap: float = settings.MIN_GAP
    max_accel: float = settings.MAX_ACCEL
    comfortable_decel: float = settings.COMFORTABLE_DECEL
    delta: float = settings.DELTA
    politeness: float = settings.POLITENESS
    accel_threshold: float = settings.ACCEL_THRESHOLD
    safe_decel: float = settings.SAFE_DECEL
    # report
    inputs: List[str] = []
    out_dir: Optional[str] = None
    # any command
    metrics_file: Optional[str] = None
    log_level: str = settings.LOG_LEVEL

    class Config:
        extra = "forbid"

    @field_validator("count", "epochs", "repeat")
    def check_counts(cls, v: int) -> int:
        if v < 0:
            raise ValueError("must be non-negative")
        return v

    @field_validator("batch_size", "num_samples", "max_nodes", "num_modes")
    def check_sizes(cls, v: int) -> int:
        if v < 1:
            raise ValueError("must be >= 1")
        return v

    @field_validator("log_level")
    def check_log_level(cls, v: str) -> str:
        level = v.upper()
        if level not in ("DEBUG", "INFO", "WARNING", "ERROR"):
            raise ValueError("log_level must be DEBUG, INFO, WARNING or ERROR")
        return level

    @model_validator(mode="after")
    def check_command_inputs(self) -> "RunConfig":
        if self.command == "generate" and (self.out is None or self.count < 1):
            raise ValueError("generate needs --out and --count >= 1")
        if self.command == "train" and (self.scenarios is None or self.out is None):
            raise ValueError("train needs --scenarios and --out")
        if self.command == "eval":
            if self.scenarios is None or self.out is None:
                raise ValueError("eval needs --scenarios and --out")
            if self.planner.needs_model and self.model is None:
                raise ValueError(f"planner {self.planner.value} needs --model")
            if self.repeat < 1:
                raise ValueError("repeat must be >= 1")
        if self.command == "report" and not self.inputs:
            raise ValueError("report needs at least one CSV")
        return self

    def intersection_config(self) -> IntersectionConfig:
        return IntersectionConfig(
            arm_length=self.arm_length,
            lanes_per_arm=self.lanes_per_arm,
            speed_limit=self.speed_limit,
            agent_density=self.agent_density,
            corrupt_route_fraction=self.corrupt_route_fraction,
        )

    def planner_config(self, seed: Optional[int] = None) -> PlannerConfig:
        return PlannerConfig(
            num_samples=self.num_samples,
            max_nodes=self.max_nodes,
            num_modes=self.num_modes,
            seed=self.seed if seed is None else seed,
            beta=self.beta,
            use_mobil=self.use_mobil,
            time_headway=self.time_headway,
            min_gap=self.min_gap,
            max_accel=self.max_accel,
            comfortable_decel=self.comfortable_decel,
            delta=self.delta,
            politeness=self.politeness,
            accel_threshold=self.accel_threshold,
            safe_decel=self.safe_decel,
        )
