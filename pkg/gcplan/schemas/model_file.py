import math
from typing import List, Literal, Optional

from pydantic import BaseModel, field_validator, model_validator

from gcplan.models.policy import TrainingMode


class ScorerWeights(BaseModel):
    w1: List[List[float]]
    b1: List[float]
    w2: List[float]
    b2: float

    class Config:
        extra = "forbid"

    @field_validator("w1")
    def check_w1(cls, v: List[List[float]]) -> List[List[float]]:
        if not v or len({len(row) for row in v}) != 1 or not v[0]:
            raise ValueError("w1 must be a non-empty rectangular matrix")
        if not all(math.isfinite(x) for row in v for x in row):
            raise ValueError("weights must be finite")
        return v

    @field_validator("b1", "w2")
    def check_vector(cls, v: List[float]) -> List[float]:
        if not all(math.isfinite(x) for x in v):
            raise ValueError("weights must be finite")
        return v

    @field_validator("b2")
    def check_b2(cls, v: float) -> float:
        if not math.isfinite(v):
            raise ValueError("weights must be finite")
        return v

    @model_validator(mode="after")
    def check_shapes(self) -> "ScorerWeights":
        hidden = len(self.w1[0])
        if len(self.b1) != hidden or len(self.w2) != hidden:
            raise ValueError(f"b1 and w2 must have {hidden} entries to match w1")
        return self


class ModelFile(BaseModel):
    format_version: Literal[1] = 1
    mode: TrainingMode
    feature_count: int
    hidden_units: int
    weights: ScorerWeights
    beta: Optional[float] = None

    class Config:
        extra = "forbid"

    @model_validator(mode="after")
    def check_consistency(self) -> "ModelFile":
        if self.feature_count != self.mode.feature_count:
            raise ValueError(f"{self.mode.value} models take {self.mode.feature_count} features")
        if len(self.weights.w1) != self.feature_count or len(self.weights.w1[0]) != self.hidden_units:
            raise ValueError("w1 shape does not match feature_count x hidden_units")
        if self.mode == TrainingMode.SOFT_MASK:
            if self.beta is None or not math.isfinite(self.beta) or self.beta < 0:
                raise ValueError("soft_mask models need a finite beta >= 0")
        elif self.beta is not None:
            raise ValueError("only soft_mask models carry beta")
        return self
