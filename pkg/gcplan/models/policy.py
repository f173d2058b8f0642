import enum
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from gcplan.models.graph import Edge

BASE_FEATURES = 8
FEATURE_NAMES = (
    "heading_alignment",
    "lateral_offset",
    "longitudinal_gap",
    "kind_successor",
    "kind_proximal",
    "kind_terminal",
    "sdv_speed",
    "target_curvature",
    "on_route",
)


class TrainingMode(str, enum.Enum):
    UNCONDITIONED = "unconditioned"
    SOFT_MASK = "soft_mask"
    HARD_MASK_AT_TRAIN = "hard_mask_at_train"
    NODE_FEATURES = "node_features"

    @property
    def feature_count(self) -> int:
        return BASE_FEATURES + 1 if self == TrainingMode.NODE_FEATURES else BASE_FEATURES


@dataclass(frozen=True, eq=False)
class ScorerParams:
    """Two affine layers (F -> H -> 1) with a ReLU in between."""

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: float

    @property
    def feature_count(self) -> int:
        return int(self.w1.shape[0])

    @property
    def hidden_units(self) -> int:
        return int(self.w1.shape[1])

    def is_finite(self) -> bool:
        return bool(
            np.all(np.isfinite(self.w1))
            and np.all(np.isfinite(self.b1))
            and np.all(np.isfinite(self.w2))
            and np.isfinite(self.b2)
        )

    def flatten(self) -> np.ndarray:
        return np.concatenate([self.w1.ravel(), self.b1.ravel(), self.w2.ravel(), [self.b2]])

    @classmethod
    def unflatten(cls, vector: np.ndarray, feature_count: int, hidden_units: int) -> "ScorerParams":
        f, h = feature_count, hidden_units
        w1 = vector[: f * h].reshape(f, h)
        b1 = vector[f * h : f * h + h]
        w2 = vector[f * h + h : f * h + 2 * h]
        b2 = float(vector[f * h + 2 * h])
        return cls(w1=w1.copy(), b1=b1.copy(), w2=w2.copy(), b2=b2)

    @classmethod
    def zeros(cls, feature_count: int = BASE_FEATURES, hidden_units: int = 16) -> "ScorerParams":
        return cls(
            w1=np.zeros((feature_count, hidden_units)),
            b1=np.zeros(hidden_units),
            w2=np.zeros(hidden_units),
            b2=0.0,
        )


@dataclass(frozen=True, eq=False)
class ScorerModel:
    mode: TrainingMode
    params: ScorerParams
    beta: Optional[float] = None

    @property
    def uses_route_feature(self) -> bool:
        return self.mode == TrainingMode.NODE_FEATURES


@dataclass(frozen=True, eq=False)
class EdgeScores:
    """Raw scores aligned with ``edges[u]`` for every node u."""

    edges: Tuple[Tuple[Edge, ...], ...]
    values: Tuple[np.ndarray, ...]


@dataclass(frozen=True, eq=False)
class EdgeDistribution:
    """Per-node categorical distribution over outgoing edges, aligned with ``edges[u]``."""

    edges: Tuple[Tuple[Edge, ...], ...]
    probs: Tuple[np.ndarray, ...]

    def __len__(self) -> int:
        return len(self.edges)

    def for_node(self, node: int) -> List[Tuple[Edge, float]]:
        return list(zip(self.edges[node], self.probs[node]))

    def probability(self, node: int, target: int) -> float:
        """Probability of moving from node to target (TERMINAL for the terminal edge)."""
        total = 0.0
        for edge, p in zip(self.edges[node], self.probs[node]):
            if edge.target == target:
                total += p
        return total

    def replace(self, probs: Sequence[np.ndarray]) -> "EdgeDistribution":
        return EdgeDistribution(edges=self.edges, probs=tuple(probs))


@dataclass(frozen=True)
class TrainingResult:
    model: ScorerModel
    train_nll: float
    holdout_nll: float
    initial_holdout_nll: float
    train_examples: int
    holdout_examples: int
    excluded_scenarios: int
