import logging

from prometheus_client import REGISTRY, Counter, Gauge, Histogram, write_to_textfile

logger = logging.getLogger(__name__)

PLANS_TOTAL = Counter(
    "gcplan_plans_total",
    "Plans produced by planner kind and outcome",
    ["planner", "status"],
)
PLAN_LATENCY = Histogram(
    "gcplan_plan_latency_seconds",
    "Wall time of one plan() call",
    ["planner"],
    buckets=(0.005, 0.01, 0.025, 0.05, 0.1, 0.25, 0.5, 1.0, 2.5, 5.0),
)
TRAVERSALS_SAMPLED = Counter(
    "gcplan_traversals_sampled_total",
    "Lane-graph traversals drawn by the sampler",
)
ROUTE_FALLBACKS = Counter(
    "gcplan_route_fallbacks_total",
    "Plans that fell back to the unconditioned distribution because no route existed",
    ["planner"],
)
SCENARIOS_EVALUATED = Counter(
    "gcplan_scenarios_evaluated_total",
    "Scenario evaluations by loop, planner and outcome",
    ["loop", "planner", "status"],
)
EVALUATION_LATENCY = Histogram(
    "gcplan_evaluation_latency_seconds",
    "Wall time of one scenario evaluation",
    ["loop", "planner"],
)
AT_FAULT_COLLISIONS = Counter(
    "gcplan_at_fault_collisions_total",
    "Closed-loop rollouts with an at-fault collision",
    ["planner"],
)
TRAINING_STEPS = Counter(
    "gcplan_training_steps_total",
    "Gradient steps taken while training the edge scorer",
    ["mode"],
)
TRAINING_NLL = Gauge(
    "gcplan_training_nll",
    "Mean expert-edge NLL at the end of the last training run",
    ["mode", "split"],
)
LABELING_ERRORS = Counter(
    "gcplan_labeling_errors_total",
    "Scenarios whose expert trajectory could not be projected onto the lane graph",
)
SCENARIOS_GENERATED = Counter(
    "gcplan_scenarios_generated_total",
    "Synthetic scenarios generated by type",
    ["scenario_type"],
)


def write_metrics_file(path: str) -> None:
    """Write the current registry in the text exposition format."""
    write_to_textfile(path, REGISTRY)
    logger.info(f"Wrote metrics to {path}")
