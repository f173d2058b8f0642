import math

import numpy as np
import pytest

from gcplan.core.errors import HorizonMismatchError
from gcplan.models.plan import PlannerKind, PlanResult
from gcplan.models.scenario import AgentClass, AgentState, AgentTrack, Trajectory
from gcplan.schemas.metrics import AGGREGATE_ID
from gcplan.schemas.run_config import PlannerConfig
from gcplan.services.collision import OrientedBox, at_fault_collision, boxes_overlap
from gcplan.services.evaluation import (
    ade_fde,
    aggregate_rows,
    drivable_compliance,
    evaluate_closed_loop,
    miss,
    progress,
    progress_series,
    run_closed_loop,
    run_open_loop,
    tpi,
)
from gcplan.services.planner import BasePlanner, ExpertReplayPlanner
from tests.factories import CAR, make_record, straight_expert

CFG = PlannerConfig(num_samples=10)
AREA = [
    np.array([[0.0, 0.0], [10.0, 0.0], [10.0, 10.0], [0.0, 10.0]]),
    np.array([[10.0, 0.0], [20.0, 0.0], [20.0, 10.0], [10.0, 10.0]]),
]


class HoldPlanner(BasePlanner):
    kind = PlannerKind.IDM

    def plan_with_details(self, record, sdv_state=None, step=0):
        state = sdv_state if sdv_state is not None else record.sdv_state
        return PlanResult(Trajectory(np.repeat(state.xy[None, :], 16, axis=0), 0.5))


def expert_record(graph, scenario_id="s0", agents=()):
    log = straight_expert(steps=30)
    return make_record(graph, 0, 9, log[:16], agents=agents, scenario_id=scenario_id, expert_log=log)


def test_ade_fde_identical():
    """A plan equal to the expert has no error"""
    expert = Trajectory(straight_expert(), 0.5)
    assert ade_fde(expert, expert) == (0.0, 0.0)
    assert miss(expert, expert) is False


def test_ade_fde_constant_offset():
    """A constant 1 m lateral offset gives ADE = FDE = 1"""
    expert = Trajectory(straight_expert(), 0.5)
    shifted = Trajectory(expert.waypoints + [0.0, 1.0], 0.5)
    assert ade_fde(shifted, expert) == (pytest.approx(1.0), pytest.approx(1.0))


def test_fde_of_lagging_plan():
    """A plan one waypoint behind at 10 m/s ends 5 m short"""
    expert = straight_expert()
    lagging = Trajectory(np.vstack([[0.0, 0.0], expert[:-1]]), 0.5)
    assert ade_fde(lagging, Trajectory(expert, 0.5))[1] == pytest.approx(5.0)


def test_horizon_mismatch_rejected():
    """Trajectories of different length cannot be compared"""
    with pytest.raises(HorizonMismatchError):
        ade_fde(Trajectory(straight_expert(steps=12), 0.5), Trajectory(straight_expert(), 0.5))
    with pytest.raises(HorizonMismatchError):
        ade_fde(Trajectory(straight_expert(), 0.25), Trajectory(straight_expert(), 0.5))


def test_miss_threshold_is_strict():
    """An endpoint exactly 16 m off is not a miss; anything beyond is"""
    expert = straight_expert()
    at_limit = expert.copy()
    at_limit[-1, 1] = 16.0
    beyond = expert.copy()
    beyond[-1, 1] = 16.01
    assert miss(Trajectory(at_limit, 0.5), Trajectory(expert, 0.5)) is False
    assert miss(Trajectory(beyond, 0.5), Trajectory(expert, 0.5)) is True


def test_tpi_same_path_is_zero():
    """Replanning along the same constant-speed path moves no endpoint"""
    earlier = Trajectory(straight_expert(), 0.5)
    later = Trajectory(straight_expert(start=(5.0, 0.0)), 0.5)
    assert tpi(earlier, later) == pytest.approx(0.0)
    still = Trajectory(np.zeros((16, 2)), 0.5)
    assert tpi(still, still) == 0.0


def test_tpi_measures_time_aligned_endpoints():
    """Instability compares the earlier plan's last point with the later plan's second-to-last"""
    earlier = Trajectory(straight_expert(), 0.5)
    turned = straight_expert(start=(5.0, 0.0))
    turned[-2] = [80.0, 12.4]
    assert tpi(earlier, Trajectory(turned, 0.5)) == pytest.approx(12.4)


def test_progress_examples():
    """Progress is the covered fraction of the expert path"""
    path = np.array([[0.0, 0.0], [100.0, 0.0]])
    assert progress(path, path) == 1.0
    assert progress(np.zeros((5, 2)), path) == 0.0
    assert progress(np.linspace((0.0, 0.0), (50.0, 0.0), 6), path) == pytest.approx(0.5)


def test_progress_never_decreases():
    """Moving backwards does not undo progress"""
    path = np.array([[0.0, 0.0], [100.0, 0.0]])
    positions = np.array([[10.0, 0.0], [40.0, 0.0], [20.0, 0.0], [30.0, 0.0]])
    series = progress_series(positions, path)
    assert np.all(np.diff(series) >= 0.0)
    assert series[-1] == pytest.approx(0.4)


def test_compliance_counts_frames():
    """Frames with any corner off the drivable area count against compliance"""
    inside = [OrientedBox(10.0, 5.0, 0.0, 4.5, 2.0)] * 27
    outside = [OrientedBox(19.0, 5.0, 0.0, 4.5, 2.0)] * 3
    assert drivable_compliance(inside, AREA) == 1.0
    assert drivable_compliance(inside + outside, AREA) == pytest.approx(0.9)


def test_compliance_boundary_counts_inside():
    """A box straddling two polygons or touching the boundary is compliant"""
    straddling = OrientedBox(10.0, 5.0, 0.0, 4.5, 2.0)
    touching = OrientedBox(2.25, 1.0, 0.0, 4.5, 2.0)
    assert drivable_compliance([straddling, touching], AREA) == 1.0


def test_overlap_is_symmetric():
    """Overlap does not depend on argument order"""
    a = OrientedBox(0.0, 0.0, 0.3, 4.5, 2.0)
    b = OrientedBox(2.0, 0.5, -1.0, 4.5, 2.0)
    c = OrientedBox(10.0, 0.0, 0.0, 4.5, 2.0)
    assert boxes_overlap(a, b) == boxes_overlap(b, a) is True
    assert boxes_overlap(a, c) == boxes_overlap(c, a) is False


def test_rear_end_into_stationary_agent_is_at_fault():
    """Hitting a stationary agent is always the SDV's fault"""
    sdv = OrientedBox(0.0, 0.0, 0.0, 4.5, 2.0)
    assert at_fault_collision(sdv, OrientedBox(4.0, 0.0, 0.0, 4.5, 2.0), agent_speed=0.0)


def test_hit_from_behind_is_not_at_fault():
    """A moving agent striking the rear quarter is not the SDV's fault"""
    sdv = OrientedBox(0.0, 0.0, 0.0, 4.5, 2.0)
    assert not at_fault_collision(sdv, OrientedBox(-4.0, 0.0, 0.0, 4.5, 2.0), agent_speed=5.0)


def test_side_contact_is_at_fault():
    """Contact at the middle of the SDV's side counts as at-fault"""
    sdv = OrientedBox(0.0, 0.0, 0.0, 4.5, 2.0)
    assert at_fault_collision(sdv, OrientedBox(0.0, 1.9, math.pi / 2, 4.5, 2.0), agent_speed=5.0)


def test_closed_loop_expert_replay_scores_one(long_chain_graph):
    """Replaying the expert through an empty scene scores perfectly"""
    metrics = evaluate_closed_loop(expert_record(long_chain_graph), ExpertReplayPlanner(CFG))
    assert metrics.progress == pytest.approx(1.0)
    assert metrics.drivable_compliance == 1.0
    assert metrics.collision_free is True
    assert metrics.score == pytest.approx(1.0)
    assert metrics.tpi_mean == pytest.approx(0.0)


def test_closed_loop_stationary_planner_scores_half(long_chain_graph):
    """A planner that never moves keeps compliance but makes no progress"""
    metrics = evaluate_closed_loop(expert_record(long_chain_graph), HoldPlanner(CFG))
    assert metrics.progress == 0.0
    assert metrics.collision_free is True
    assert metrics.score == pytest.approx(0.5)


def test_closed_loop_collision_zeroes_score(long_chain_graph):
    """Driving into a parked car gates the score to zero"""
    parked = AgentState(x=50.0, y=0.0, v=0.0, heading=0.0)
    agent = AgentTrack(
        agent_id="parked",
        class_indicator=AgentClass.VEHICLE,
        history=(parked,),
        future_playback=(parked,) * 30,
        footprint=CAR,
    )
    metrics = evaluate_closed_loop(expert_record(long_chain_graph, agents=[agent]), ExpertReplayPlanner(CFG))
    assert metrics.collision_free is False
    assert metrics.score == 0.0


def test_open_loop_expert_replay(long_chain_graph):
    """The expert replay has no error, no miss and no instability"""
    report = run_open_loop([expert_record(long_chain_graph)], ExpertReplayPlanner(CFG))
    (row,) = report.rows
    assert (row.ade, row.fde, row.miss) == (0.0, 0.0, 0.0)
    assert row.tpi_mean == pytest.approx(0.0)
    assert row.score == 1.0
    assert report.aggregate.scenario_id == AGGREGATE_ID
    for field in ("ade", "fde", "miss", "tpi_mean", "score"):
        assert getattr(report.aggregate, field) == pytest.approx(getattr(row, field))


def test_closed_loop_report_sorted_by_scenario(long_chain_graph):
    """Rows come back in scenario-id order with a mean aggregate"""
    records = [expert_record(long_chain_graph, "b"), expert_record(long_chain_graph, "a")]
    report = run_closed_loop(records, HoldPlanner(CFG))
    assert [row.scenario_id for row in report.rows] == ["a", "b"]
    assert report.aggregate.score == pytest.approx(0.5)
    assert report.aggregate.collision_free == 1.0
    assert report.aggregate.ade is None


def test_aggregate_rate_of_misses(long_chain_graph):
    """The aggregate miss value is the miss rate"""
    report = run_open_loop([expert_record(long_chain_graph, "x")], ExpertReplayPlanner(CFG))
    row = report.rows[0]
    missed = row.model_copy(update={"scenario_id": "y", "miss": 1.0, "score": 0.0})
    aggregate = aggregate_rows([row, missed], "expert")
    assert aggregate.miss == pytest.approx(0.5)
    assert aggregate.score == pytest.approx(0.5)
