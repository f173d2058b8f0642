import logging
import time
from typing import Optional

from gcplan.observability import telemetry

logger = logging.getLogger(__name__)


class PlanTracker:
    def __init__(self, planner: str, scenario_id: str, step: int = 0):
        self.planner = planner
        self.scenario_id = scenario_id
        self.step = step
        self.start_time = None
        self.fallback = False
        self.error_message = None

    def record_fallback(self):
        self.fallback = True

    def __enter__(self):
        self.start_time = time.perf_counter()
        return self

    def __exit__(self, exc_type, exc_val, exc_tb):
        try:
            if exc_type is not None:
                self.error_message = str(exc_val)

            elapsed_time = time.perf_counter() - self.start_time
            status = "error" if self.error_message else "success"
            telemetry.PLAN_LATENCY.labels(planner=self.planner).observe(elapsed_time)
            telemetry.PLANS_TOTAL.labels(planner=self.planner, status=status).inc()
            if self.fallback:
                telemetry.ROUTE_FALLBACKS.labels(planner=self.planner).inc()
            if self.error_message:
                logger.error(f"Planning failed for {self.scenario_id} at step {self.step}: {self.error_message}")
        except Exception as e:
            # Log the error but don't raise it to ensure cleanup
            logger.warning(f"Error in PlanTracker cleanup: {str(e)}")


class EvaluationTracker:
    def __init__(self, loop: str, planner: str, scenario_id: str):
        self.loop = loop
        self.planner = planner
        self.scenario_id = scenario_id
        self.start_time = None
        self.at_fault = False
        self.error_message = None

    def record_collision(self):
        self.at_fault = True

    def __enter__(self):
        self.start_time = time.perf_counter()
        return self

    def __exit__(self, exc_type, exc_val, exc_tb):
        try:
            if exc_type is not None:
                self.error_message = str(exc_val)

            elapsed_time = time.perf_counter() - self.start_time
            status = "error" if self.error_message else "success"
            telemetry.EVALUATION_LATENCY.labels(loop=self.loop, planner=self.planner).observe(elapsed_time)
            telemetry.SCENARIOS_EVALUATED.labels(loop=self.loop, planner=self.planner, status=status).inc()
            if self.at_fault:
                telemetry.AT_FAULT_COLLISIONS.labels(planner=self.planner).inc()
            logger.debug(f"{self.loop}-loop {self.planner} on {self.scenario_id}: {status} in {elapsed_time:.3f}s")
        except Exception as e:
            logger.warning(f"Error in EvaluationTracker cleanup: {str(e)}")


class TrainingTracker:
    def __init__(self, mode: str):
        self.mode = mode
        self.start_time = None
        self.steps = 0
        self.train_nll: Optional[float] = None
        self.holdout_nll: Optional[float] = None
        self.error_message = None

    def record_step(self, count: int = 1):
        self.steps += count

    def record_nll(self, train_nll: float, holdout_nll: float):
        self.train_nll = train_nll
        self.holdout_nll = holdout_nll

    def __enter__(self):
        self.start_time = time.perf_counter()
        return self

    def __exit__(self, exc_type, exc_val, exc_tb):
        try:
            if exc_type is not None:
                self.error_message = str(exc_val)

            elapsed_time = time.perf_counter() - self.start_time
            telemetry.TRAINING_STEPS.labels(mode=self.mode).inc(self.steps)
            if self.train_nll is not None:
                telemetry.TRAINING_NLL.labels(mode=self.mode, split="train").set(self.train_nll)
            if self.holdout_nll is not None:
                telemetry.TRAINING_NLL.labels(mode=self.mode, split="holdout").set(self.holdout_nll)
            logger.info(f"Training ({self.mode}) took {elapsed_time:.2f}s over {self.steps} steps")
        except Exception as e:
            logger.warning(f"Error in TrainingTracker cleanup: {str(e)}")
