import json

import numpy as np
import pytest

from gcplan.core.errors import LabelingError, ScenarioValidationError
from gcplan.models.plan import Traversal
from gcplan.services.scenario import (
    check_route_consistency,
    dumps_scenarios,
    expert_state,
    expert_traversal,
    filter_compromised,
    load_scenarios,
    parse_scenarios,
    save_scenarios,
)
from gcplan.utils.geometry import Polyline
from tests.factories import make_record, straight_expert


def minimal_scenario(**overrides):
    scenario = {
        "scenario_id": "minimal",
        "scenario_type": "traverse",
        "map": {
            "lanes": [{"id": 0, "points": [[0.0, 0.0, 0.0], [30.0, 0.0, 0.0], [60.0, 0.0, 0.0]]}],
            "drivable_area": [[[-5.0, -5.0], [65.0, -5.0], [65.0, 5.0], [-5.0, 5.0]]],
        },
        "sdv": {
            "history": [[-10.0 + 2.5 * i, 0.0, 5.0, 0.0, 0.0, 0.0] for i in range(5)],
            "footprint": [4.5, 2.0],
        },
        "route": {"start_node": 0, "goal_node": 2},
        "expert_future": [[2.5 * k, 0.0] for k in range(1, 17)],
    }
    scenario.update(overrides)
    return {"format_version": 1, "scenarios": [scenario]}


def test_minimal_file_loads():
    """A one-scenario file without agents yields one record"""
    (record,) = parse_scenarios(minimal_scenario())
    assert record.scenario_id == "minimal"
    assert record.graph.num_nodes == 3
    assert record.agents == ()
    assert record.speed_limit == 10.0
    assert record.sdv_state.x == 0.0


def test_unknown_goal_node_names_field():
    """A goal outside the graph is reported with the record index and field"""
    with pytest.raises(ScenarioValidationError) as exc:
        parse_scenarios(minimal_scenario(route={"start_node": 0, "goal_node": 999}))
    assert exc.value.index == 0
    assert exc.value.field == "route.goal_node"
    assert "goal_node" in str(exc.value)


def test_schema_violation_names_path():
    """Missing fields are reported with their path"""
    data = minimal_scenario()
    del data["scenarios"][0]["sdv"]["footprint"]
    with pytest.raises(ScenarioValidationError) as exc:
        parse_scenarios(data)
    assert exc.value.field == "sdv.footprint"


def test_wrong_history_length_rejected():
    """The SDV history must hold exactly five states"""
    data = minimal_scenario(sdv={"history": [[0.0, 0.0, 5.0, 0.0, 0.0, 0.0]], "footprint": [4.5, 2.0]})
    with pytest.raises(ScenarioValidationError) as exc:
        parse_scenarios(data)
    assert exc.value.field == "sdv.history"


def test_negative_speed_rejected():
    """States with negative speed are invalid"""
    history = [[0.0, 0.0, -1.0, 0.0, 0.0, 0.0]] * 5
    with pytest.raises(ScenarioValidationError) as exc:
        parse_scenarios(minimal_scenario(sdv={"history": history, "footprint": [4.5, 2.0]}))
    assert exc.value.field.startswith("sdv.history")


def test_dangling_successor_rejected():
    """Topology errors surface as validation errors on the map"""
    lanes = [{"id": 0, "points": [[0.0, 0.0, 0.0], [60.0, 0.0, 0.0]], "successors": [4]}]
    data = minimal_scenario(map={"lanes": lanes, "drivable_area": [[[0, 0], [1, 0], [1, 1]]]})
    with pytest.raises(ScenarioValidationError) as exc:
        parse_scenarios(data)
    assert exc.value.field == "map.lanes"


def test_duplicate_scenario_ids_rejected():
    """Scenario ids are unique within a file"""
    data = minimal_scenario()
    data["scenarios"].append(data["scenarios"][0])
    with pytest.raises(ScenarioValidationError) as exc:
        parse_scenarios(data)
    assert exc.value.index == 1


def test_bad_format_version_rejected():
    """Only format version 1 is understood"""
    data = minimal_scenario()
    data["format_version"] = 2
    with pytest.raises(ScenarioValidationError):
        parse_scenarios(data)


def test_save_and_load(tmp_path, fork_graph):
    """Saved records load back with the same content and serialize to the same text"""
    expert = straight_expert(8.0)
    record = make_record(fork_graph, 0, 3, expert, speed=8.0, expert_log=np.vstack([expert, expert[-1:] + 4.0]))
    path = tmp_path / "scenarios.json"
    save_scenarios(path, [record])
    (loaded,) = load_scenarios(path)
    assert loaded.scenario_id == record.scenario_id
    assert loaded.goal_node == 3
    np.testing.assert_array_equal(loaded.expert_future.waypoints, expert)
    assert len(loaded.expert_log) == 17
    assert dumps_scenarios([loaded]) == path.read_text(encoding="utf-8")
    json.loads(path.read_text(encoding="utf-8"))


def test_invalid_json_rejected(tmp_path):
    """A file that is not JSON is a validation error"""
    path = tmp_path / "broken.json"
    path.write_text("{not json", encoding="utf-8")
    with pytest.raises(ScenarioValidationError):
        load_scenarios(path)


def test_expert_traversal_follows_chain(chain_graph):
    """An expert driving the whole chain visits every node"""
    record = make_record(chain_graph, 0, 2, straight_expert(6.0), speed=6.0)
    assert expert_traversal(record) == Traversal((0, 1, 2), True)


def test_expert_traversal_stopping_in_start_node(chain_graph):
    """An expert that stays inside the start node labels only that node"""
    record = make_record(chain_graph, 0, 2, np.tile([[5.0, 0.0]], (16, 1)), speed=0.0)
    assert expert_traversal(record) == Traversal((0,), True)


def test_expert_traversal_takes_closer_branch(fork_graph):
    """At a fork the label follows the branch the expert actually drives"""
    path = Polyline([(0.0, 0.0), (40.0, 0.0), (60.0, 20.0)])
    record = make_record(fork_graph, 0, 5, path.point_at(np.arange(1, 17) * 4.0), speed=8.0)
    assert expert_traversal(record).nodes == (0, 1, 4, 5)


def test_expert_far_from_graph_raises(chain_graph):
    """Waypoints more than 5 m from the graph cannot be labelled"""
    expert = straight_expert(3.0)
    expert[8:, 1] = 12.0
    with pytest.raises(LabelingError):
        expert_traversal(make_record(chain_graph, 0, 2, expert))


def test_route_consistency_and_filtering(fork_graph):
    """Scenarios whose expert leaves the labelled route are compromised"""
    straight = make_record(fork_graph, 0, 3, straight_expert(8.0), speed=8.0, scenario_id="ok")
    corrupted = make_record(fork_graph, 0, 5, straight_expert(8.0), speed=8.0, scenario_id="bad")
    assert check_route_consistency(straight) is True
    assert check_route_consistency(corrupted) is False
    assert [r.scenario_id for r in filter_compromised([straight, corrupted])] == ["ok"]


def test_expert_state_reconstruction(long_chain_graph):
    """Replan states come from expert displacements"""
    record = make_record(long_chain_graph, 0, 9, straight_expert())
    assert expert_state(record, 0) is record.sdv_state
    state = expert_state(record, 3)
    assert (state.x, state.y) == (15.0, 0.0)
    assert state.v == pytest.approx(10.0)
    assert state.heading == pytest.approx(0.0)
