from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class IdmParams:
    """Intelligent Driver Model parameters.

    Args:
        v0: Desired speed (m/s).
        time_headway: Desired time gap to the lead (s).
        min_gap: Jam distance (m).
        max_accel: Maximum acceleration (m/s^2).
        comfortable_decel: Comfortable deceleration, positive (m/s^2).
        delta: Free-road acceleration exponent.
    """

    v0: float
    time_headway: float = 1.5
    min_gap: float = 2.0
    max_accel: float = 1.5
    comfortable_decel: float = 2.0
    delta: float = 4.0

    def __post_init__(self):
        values = (self.v0, self.time_headway, self.min_gap, self.max_accel, self.comfortable_decel, self.delta)
        if any(not np.isfinite(value) or value <= 0 for value in values):
            raise ValueError("IDM parameters must be finite and positive")


@dataclass(frozen=True)
class MobilParams:
    politeness: float = 0.3
    accel_threshold: float = 0.2
    safe_decel: float = 3.0

    def __post_init__(self):
        if not 0.0 <= self.politeness <= 1.0:
            raise ValueError("politeness must lie in [0, 1]")
        if self.safe_decel <= 0:
            raise ValueError("safe_decel must be positive")


@dataclass(frozen=True)
class LaneChangeSituation:
    """Gaps and speeds around the ego vehicle on its current and target lane.

    Gaps are bumper-to-bumper distances in metres; ``None`` means no vehicle.
    """

    ego_speed: float
    current_lead_gap: float | None = None
    current_lead_speed: float = 0.0
    current_follower_gap: float | None = None
    current_follower_speed: float = 0.0
    target_lead_gap: float | None = None
    target_lead_speed: float = 0.0
    target_follower_gap: float | None = None
    target_follower_speed: float = 0.0


@dataclass(frozen=True, eq=False)
class AgentPrediction:
    """Predicted positions of one agent at frames 0..H (frame 0 = now)."""

    positions: np.ndarray
    headings: np.ndarray
    speeds: np.ndarray
    length: float
    width: float

    def frame(self, index: int) -> int:
        return min(max(index, 0), len(self.positions) - 1)
