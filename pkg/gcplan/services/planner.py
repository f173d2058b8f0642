import logging
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from gcplan.core.config import settings
from gcplan.core.errors import EmptyRouteError, PlannerConfigError
from gcplan.models.driver import IdmParams, MobilParams
from gcplan.models.graph import LaneGraph, RouteMask
from gcplan.models.plan import LatentSample, PlanResult, PlanSet, PlannerKind, SamplerConfig, Traversal
from gcplan.models.policy import ScorerModel, TrainingMode
from gcplan.models.scenario import AgentState, ScenarioRecord, Trajectory
from gcplan.observability.tracker import PlanTracker
from gcplan.schemas.run_config import PlannerConfig
from gcplan.services import conditioning
from gcplan.services.baselines import constant_velocity_predictions, follow_route
from gcplan.services.clustering import cluster_plans
from gcplan.services.lane_graph import compute_route_mask, rank_nodes
from gcplan.services.policy import edge_distribution
from gcplan.services.reference_path import build_reference_path
from gcplan.services.traversal import sample_traversals
from gcplan.utils.geometry import Polyline
from gcplan.utils.rng import derive_seed, latent_normals

logger = logging.getLogger(__name__)

LATENT_ACCEL_GAIN = 0.4
LATENT_SPEED_GAIN = 0.15
MIN_RATE = 0.5
MAX_ACCEL_RATE = 2.0
MAX_DECEL_RATE = 3.0

_COMPATIBLE_MODES = {
    PlannerKind.PGP: TrainingMode.UNCONDITIONED,
    PlannerKind.GC_PGP: TrainingMode.UNCONDITIONED,
    PlannerKind.FILTER_ON_ROUTE: TrainingMode.UNCONDITIONED,
    PlannerKind.SOFT_MASK: TrainingMode.SOFT_MASK,
    PlannerKind.HARD_MASK_TRAINED: TrainingMode.HARD_MASK_AT_TRAIN,
    PlannerKind.NODE_FEATURES: TrainingMode.NODE_FEATURES,
}
_CONDITIONED = {PlannerKind.GC_PGP, PlannerKind.SOFT_MASK, PlannerKind.HARD_MASK_TRAINED}


def _speed_profiles(
    lengths: np.ndarray,
    initial_speed: float,
    z: np.ndarray,
    v_route: float,
    steps: int,
    dt: float,
    substeps: int = settings.DECODER_SUBSTEPS,
    path_end_decel: float = settings.PATH_END_DECEL,
) -> np.ndarray:
    """Arc position of every sample after each of ``steps`` steps; one row per sample."""
    count = len(z)
    a_z = np.clip(LATENT_ACCEL_GAIN * z[:, 0], -MAX_DECEL_RATE, MAX_ACCEL_RATE)
    v_target = np.maximum(0.0, v_route * (1.0 + LATENT_SPEED_GAIN * z[:, 1]))
    rate = np.maximum(np.abs(a_z), MIN_RATE)
    up, down = np.minimum(rate, MAX_ACCEL_RATE), np.minimum(rate, MAX_DECEL_RATE)

    s = np.zeros(count)
    v = np.full(count, float(initial_speed))
    h = dt / substeps
    arcs = np.empty((count, steps))
    for step in range(steps):
        for _ in range(substeps):
            remaining = lengths - s
            braking = remaining <= v * v / (2.0 * path_end_decel) + 1e-9
            decel = np.where(braking & (remaining > 1e-9), v * v / (2.0 * np.maximum(remaining, 1e-9)), 0.0)
            v_free = np.where(v < v_target, np.minimum(v + up * h, v_target), np.maximum(v - down * h, v_target))
            v_brake = np.maximum(v - decel * h, 0.0)
            v_next = np.where(braking, v_brake, v_free)
            s = np.minimum(s + 0.5 * (v + v_next) * h, lengths)
            done = lengths - s <= 1e-9
            v = np.where(done, 0.0, v_next)
        arcs[:, step] = s
    return arcs


def decode_trajectories(
    graph: LaneGraph,
    traversals: Sequence[Traversal],
    sdv_state: AgentState,
    z: np.ndarray,
    v_route: float,
    steps: int = settings.HORIZON_STEPS,
    dt: float = settings.DT,
) -> List[Trajectory]:
    """
    Decode a batch of traversals, one latent pair per traversal.

    Every traversal is followed along its reference path; the latent pair
    sets the acceleration and the target speed of the profile. Paths are
    built once per distinct node sequence.
    """
    paths: Dict[Tuple[int, ...], Polyline] = {}
    for traversal in traversals:
        if traversal.nodes not in paths:
            paths[traversal.nodes] = Polyline(build_reference_path(graph, traversal.nodes, sdv_state.xy))
    z = np.asarray(z, dtype=float).reshape(-1, 2)
    lengths = np.array([paths[t.nodes].length for t in traversals])
    arcs = _speed_profiles(lengths, sdv_state.v, z, v_route, steps, dt)

    members: Dict[Tuple[int, ...], List[int]] = {}
    for i, traversal in enumerate(traversals):
        members.setdefault(traversal.nodes, []).append(i)
    waypoints = np.empty((len(traversals), steps, 2))
    for nodes, index in members.items():
        waypoints[index] = paths[nodes].point_at(arcs[index].reshape(-1)).reshape(len(index), steps, 2)
    return [Trajectory(w, dt) for w in waypoints]


def decode_trajectory(
    graph: LaneGraph,
    traversal: Traversal,
    sdv_state: AgentState,
    z: LatentSample,
    v_route: float = settings.SPEED_LIMIT,
    steps: int = settings.HORIZON_STEPS,
    dt: float = settings.DT,
) -> Trajectory:
    return decode_trajectories(graph, [traversal], sdv_state, np.array([z.z]), v_route, steps, dt)[0]


def select_plan(plans: PlanSet) -> Trajectory:
    if not len(plans):
        raise ValueError("cannot select from an empty plan set")
    return min(plans.modes, key=lambda mode: mode.rank).trajectory


def route_distance(graph: LaneGraph, route: RouteMask, point) -> float:
    return min(graph.nodes[node].polyline.project(point).distance for node in route.on_route_nodes)


def filter_on_route(
    plans: PlanSet, graph: LaneGraph, route: RouteMask, radius: float = settings.FILTER_RADIUS
) -> Trajectory:
    """Best-ranked mode ending within ``radius`` of the route, else the mode ending closest to it."""
    if not len(plans):
        raise ValueError("cannot select from an empty plan set")
    scored = [(route_distance(graph, route, mode.trajectory.final), mode.rank, mode) for mode in plans.modes]
    candidates = [entry for entry in scored if entry[0] <= radius]
    if candidates:
        return min(candidates, key=lambda entry: entry[1])[2].trajectory
    return min(scored, key=lambda entry: (entry[0], entry[1]))[2].trajectory


def _hold_position(state: AgentState, steps: int, dt: float) -> Trajectory:
    return Trajectory(np.repeat(state.xy[None, :], steps, axis=0), dt)


class BasePlanner:
    kind: PlannerKind

    def __init__(self, cfg: PlannerConfig):
        self.cfg = cfg

    def plan(self, record: ScenarioRecord, sdv_state: Optional[AgentState] = None, step: int = 0) -> Trajectory:
        return self.plan_with_details(record, sdv_state, step).trajectory

    def plan_with_details(
        self, record: ScenarioRecord, sdv_state: Optional[AgentState] = None, step: int = 0
    ) -> PlanResult:
        raise NotImplementedError

    def _start_and_route(
        self, record: ScenarioRecord, state: AgentState, step: int, route_aware: bool
    ) -> Tuple[int, Optional[RouteMask]]:
        """
        Start node and route for a planning instant.

        The labelled start node is used at step 0. Later instants take the
        closest node; a route-aware planner may instead take any node within
        the start tolerance of the closest one that still reaches the goal.
        Returns a None route when no candidate reaches the goal.
        """
        graph = record.graph
        if step == 0:
            candidates = [record.start_node]
        else:
            ranked = rank_nodes(graph, state.pose)
            best = ranked[0][0]
            candidates = [key[2] for key in ranked if key[0] <= best + settings.START_NODE_TOLERANCE]
        for node in candidates if route_aware else candidates[:1]:
            try:
                return node, compute_route_mask(graph, node, record.goal_node)
            except EmptyRouteError:
                continue
        return candidates[0], None


class GraphPlanner(BasePlanner):
    """
    Traversal-sampling planner, optionally conditioned on the route.

    When no node near the SDV reaches the goal, conditioned kinds sample the
    unconditioned distribution and filter_on_route keeps the top-ranked mode.
    Both cases log a warning and count a route fallback.
    """

    def __init__(self, model: ScorerModel, kind: PlannerKind, cfg: PlannerConfig):
        super().__init__(cfg)
        expected = _COMPATIBLE_MODES.get(kind)
        if expected is None:
            raise PlannerConfigError(f"planner {kind.value} does not sample traversals")
        if model.mode != expected:
            raise PlannerConfigError(
                f"planner {kind.value} needs a {expected.value} model, got a {model.mode.value} model"
            )
        self.model = model
        self.kind = kind

    @property
    def beta(self) -> float:
        if self.cfg.beta is not None:
            return self.cfg.beta
        return self.model.beta or 0.0

    def plan_with_details(
        self, record: ScenarioRecord, sdv_state: Optional[AgentState] = None, step: int = 0
    ) -> PlanResult:
        state = sdv_state if sdv_state is not None else record.sdv_state
        cfg = self.cfg
        with PlanTracker(self.kind.value, record.scenario_id, step) as tracker:
            start, route = self._start_and_route(record, state, step, self.kind in _CONDITIONED)
            if route is None and self.kind != PlannerKind.PGP:
                fallback = (
                    "selecting the top-ranked mode"
                    if self.kind == PlannerKind.FILTER_ON_ROUTE
                    else "planning unconditioned"
                )
                logger.warning(
                    f"No route from the SDV to goal {record.goal_node} in {record.scenario_id} at step {step}; "
                    f"{fallback}"
                )
                tracker.record_fallback()

            dist = edge_distribution(self.model, record.graph, state, route)
            if route is not None:
                if self.kind in (PlannerKind.GC_PGP, PlannerKind.HARD_MASK_TRAINED):
                    dist = conditioning.hard_mask(dist, route)
                elif self.kind == PlannerKind.SOFT_MASK:
                    dist = conditioning.soft_mask(dist, route, self.beta)

            seed = derive_seed(cfg.seed, record.scenario_id, step)
            traversals = sample_traversals(
                dist, start, SamplerConfig(num_samples=cfg.num_samples, max_nodes=cfg.max_nodes, seed=seed)
            )
            z = latent_normals(derive_seed(seed, "latent"), cfg.num_samples)
            candidates = decode_trajectories(
                record.graph, traversals, state, z, record.speed_limit, cfg.horizon_steps, cfg.dt
            )
            plan_set = cluster_plans(candidates, cfg.num_modes, seed)
            if self.kind == PlannerKind.FILTER_ON_ROUTE and route is not None:
                trajectory = filter_on_route(plan_set, record.graph, route, cfg.filter_radius)
            else:
                trajectory = select_plan(plan_set)
        return PlanResult(trajectory, plan_set, traversals, route, start)


class IdmPlanner(BasePlanner):
    """IDM route follower with optional MOBIL lane changes; agents are extrapolated at constant velocity."""

    kind = PlannerKind.IDM

    def plan_with_details(
        self, record: ScenarioRecord, sdv_state: Optional[AgentState] = None, step: int = 0
    ) -> PlanResult:
        state = sdv_state if sdv_state is not None else record.sdv_state
        cfg = self.cfg
        with PlanTracker(self.kind.value, record.scenario_id, step) as tracker:
            start, route = self._start_and_route(record, state, step, route_aware=True)
            if route is None:
                logger.warning(f"No route to goal {record.goal_node} in {record.scenario_id} at step {step}; holding")
                tracker.record_fallback()
                return PlanResult(_hold_position(state, cfg.horizon_steps, cfg.dt), start_node=start)
            agent_states = [agent.state_at(step) for agent in record.agents]
            footprints = [(agent.footprint.length, agent.footprint.width) for agent in record.agents]
            predictions = constant_velocity_predictions(agent_states, footprints, cfg.horizon_steps, cfg.dt)
            idm = IdmParams(
                v0=record.speed_limit,
                time_headway=cfg.time_headway,
                min_gap=cfg.min_gap,
                max_accel=cfg.max_accel,
                comfortable_decel=cfg.comfortable_decel,
                delta=cfg.delta,
            )
            mobil = None
            if cfg.use_mobil:
                mobil = MobilParams(
                    politeness=cfg.politeness, accel_threshold=cfg.accel_threshold, safe_decel=cfg.safe_decel
                )
            rollout = follow_route(
                record.graph,
                route,
                start,
                record.goal_node,
                state,
                idm,
                predictions=predictions,
                steps=cfg.horizon_steps,
                dt=cfg.dt,
                ego_length=record.sdv_footprint.length,
                mobil=mobil,
            )
        return PlanResult(Trajectory(rollout.positions, cfg.dt), route=route, start_node=start)


class ExpertReplayPlanner(BasePlanner):
    """Replays the logged expert from the planning instant on."""

    kind = PlannerKind.EXPERT

    def plan_with_details(
        self, record: ScenarioRecord, sdv_state: Optional[AgentState] = None, step: int = 0
    ) -> PlanResult:
        with PlanTracker(self.kind.value, record.scenario_id, step):
            path = record.expert_path
            index = np.minimum(np.arange(step + 1, step + 1 + self.cfg.horizon_steps), len(path) - 1)
            trajectory = Trajectory(path[index], self.cfg.dt)
        return PlanResult(trajectory)


def make_planner(kind: PlannerKind, model: Optional[ScorerModel], cfg: PlannerConfig) -> BasePlanner:
    if kind == PlannerKind.IDM:
        return IdmPlanner(cfg)
    if kind == PlannerKind.EXPERT:
        return ExpertReplayPlanner(cfg)
    if model is None:
        raise PlannerConfigError(f"planner {kind.value} needs a trained model")
    return GraphPlanner(model, kind, cfg)


def plan(record: ScenarioRecord, model: Optional[ScorerModel], kind: PlannerKind, cfg: PlannerConfig) -> Trajectory:
    """Plan once from the scenario's current state."""
    return make_planner(kind, model, cfg).plan(record)
