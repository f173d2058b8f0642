import enum
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

from gcplan.models.graph import RouteMask
from gcplan.models.scenario import Trajectory


@dataclass(frozen=True)
class Traversal:
    nodes: Tuple[int, ...]
    terminated: bool = False

    def __len__(self) -> int:
        return len(self.nodes)


@dataclass(frozen=True)
class SamplerConfig:
    num_samples: int = 1000
    max_nodes: int = 8
    seed: int = 0

    def __post_init__(self):
        if self.num_samples < 1:
            raise ValueError("num_samples must be >= 1")
        if self.max_nodes < 1:
            raise ValueError("max_nodes must be >= 1")


@dataclass(frozen=True)
class LatentSample:
    z: Tuple[float, float]


@dataclass(frozen=True, eq=False)
class PlanMode:
    trajectory: Trajectory
    probability: float
    rank: int
    centroid_index: int


@dataclass(frozen=True, eq=False)
class PlanSet:
    """Clustered plans, ordered by rank (rank 1 first)."""

    modes: Tuple[PlanMode, ...]

    def __len__(self) -> int:
        return len(self.modes)

    @property
    def probabilities(self) -> np.ndarray:
        return np.array([mode.probability for mode in self.modes])


class PlannerKind(str, enum.Enum):
    PGP = "pgp"
    GC_PGP = "gc_pgp"
    SOFT_MASK = "soft_mask"
    HARD_MASK_TRAINED = "hard_mask_trained"
    NODE_FEATURES = "node_features"
    FILTER_ON_ROUTE = "filter_on_route"
    IDM = "idm"
    EXPERT = "expert"

    @property
    def needs_model(self) -> bool:
        return self not in (PlannerKind.IDM, PlannerKind.EXPERT)


@dataclass(frozen=True, eq=False)
class PlanResult:
    trajectory: Trajectory
    plan_set: Optional[PlanSet] = None
    traversals: Optional[List[Traversal]] = None
    route: Optional[RouteMask] = None
    start_node: Optional[int] = None
