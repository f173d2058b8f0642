class GcPlanError(ValueError):
    """Base class for every error raised by gcplan."""


class GraphConstructionError(GcPlanError):
    """Raised when raw lane topology cannot be turned into a lane graph."""

    def __init__(self, lane_id: int, reason: str):
        self.lane_id = lane_id
        super().__init__(f"lane {lane_id}: {reason}")
        self.reason = reason

    def __reduce__(self):
        return (self.__class__, (self.lane_id, self.reason))


class EmptyRouteError(GcPlanError):
    """Raised when the goal node is not reachable from the start node."""

    def __init__(self, start_node: int, goal_node: int):
        self.start_node = start_node
        self.goal_node = goal_node
        super().__init__(f"goal node {goal_node} is not reachable from node {start_node}")

    def __reduce__(self):
        return (self.__class__, (self.start_node, self.goal_node))


class ScenarioValidationError(GcPlanError):
    def __init__(self, index: int | None, field: str, reason: str):
        self.index = index
        self.field = field
        where = "scenario file" if index is None else f"scenario[{index}]"
        self.reason = reason
        super().__init__(f"{where}.{field}: {reason}")

    def __reduce__(self):
        return (self.__class__, (self.index, self.field, self.reason))


class LabelingError(GcPlanError):
    """Raised when an expert trajectory cannot be projected onto the lane graph."""


class EnumerationGuardError(GcPlanError):
    pass


class HorizonMismatchError(GcPlanError):
    pass


class TrainingDataError(GcPlanError):
    """Raised when no usable training example remains."""


class ModelFileError(GcPlanError):
    pass


class PlannerConfigError(GcPlanError):
    pass
