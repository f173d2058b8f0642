from typing import List

from pydantic import field_validator
from pydantic_settings import BaseSettings


class Settings(BaseSettings):
    PROJECT_NAME: str = "Goal-Conditioned Lane-Graph Planner"

    # Timing
    DT: float = 0.5
    HISTORY_STEPS: int = 5
    HORIZON_STEPS: int = 16
    SIM_STEPS: int = 30

    # Lane graph
    SNIPPET_LENGTH_MAX: float = 20.0
    MAX_POINTS: int = 20
    SUCCESSOR_GAP_TOLERANCE: float = 1.0
    PROXIMAL_OVERLAP_RATIO: float = 0.5
    START_NODE_TOLERANCE: float = 0.5

    # Sampling and decoding
    NUM_SAMPLES: int = 1000
    MAX_NODES: int = 8
    NUM_MODES: int = 10
    ENUMERATION_LIMIT: int = 1_000_000
    BLEND_LENGTH: float = 5.0
    DECODER_SUBSTEPS: int = 10
    PATH_END_DECEL: float = 3.0
    FILTER_RADIUS: float = 5.0
    KMEANS_MAX_ITER: int = 100
    KMEANS_TOLERANCE: float = 1e-6

    # Scorer
    HIDDEN_UNITS: int = 16
    FEATURE_SCALES: List[float] = [1.0, 5.0, 50.0, 1.0, 1.0, 1.0, 10.0, 0.1, 1.0]
    LEARNING_RATE: float = 0.1
    EPOCHS: int = 50
    BATCH_SIZE: int = 32
    HOLDOUT_FRACTION: float = 0.2
    LABEL_RADIUS: float = 5.0

    # IDM / MOBIL
    TIME_HEADWAY: float = 1.5
    MIN_GAP: float = 2.0
    MAX_ACCEL: float = 1.5
    COMFORTABLE_DECEL: float = 2.0
    DELTA: float = 4.0
    POLITENESS: float = 0.3
    ACCEL_THRESHOLD: float = 0.2
    SAFE_DECEL: float = 3.0
    LEAD_LATERAL_LIMIT: float = 2.0
    PROXIMAL_ROUTE_PENALTY: float = 5.0

    # Intersection generator
    ARM_LENGTH: float = 150.0
    LANES_PER_ARM: int = 2
    SPEED_LIMIT: float = 10.0
    AGENT_DENSITY: float = 0.5
    LANE_WIDTH: float = 3.5
    JUNCTION_MARGIN: float = 3.0

    # Evaluation
    MISS_THRESHOLD: float = 16.0
    TPI_SWEEP_STEPS: int = 8
    REAR_FAULT_FRACTION: float = 0.25
    STATIONARY_SPEED: float = 0.1

    LOG_LEVEL: str = "INFO"

    @field_validator("FEATURE_SCALES")
    def check_feature_scales(cls, v: List[float]) -> List[float]:
        if len(v) != 9 or any(s <= 0 for s in v):
            raise ValueError("FEATURE_SCALES needs 9 positive entries")
        return v

    class Config:
        env_prefix = "GCPLAN_"
        env_file = ".env"
        case_sensitive = True
        extra = "ignore"


settings = Settings()
