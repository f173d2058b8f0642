import numpy as np
import pytest

from gcplan.cli import EXIT_FAILURE, EXIT_OK, EXIT_USAGE, UsageError, build_parser, main, resolve_config
from gcplan.models.plan import PlannerKind
from gcplan.services.reporting import read_metrics_csv
from gcplan.services.scenario import save_scenarios
from tests.factories import make_record, straight_expert


@pytest.fixture
def scenario_file(tmp_path, long_chain_graph):
    log = straight_expert(steps=30)
    records = [
        make_record(long_chain_graph, 0, 9, log[:16], scenario_id=f"chain-{i}", expert_log=log) for i in range(2)
    ]
    path = tmp_path / "scenarios.json"
    save_scenarios(path, records)
    return path


def eval_args(*extra):
    return build_parser().parse_args(["eval", "--scenarios", "s.json", "--out", "m.csv", *extra])


def test_flags_override_environment_and_yaml(tmp_path):
    """Flags win over GCPLAN_* variables, which win over the config file"""
    config = tmp_path / "run.yaml"
    config.write_text("seed: 3\nnum_samples: 7\nmax-nodes: 11\nplanner: expert\n", encoding="utf-8")
    args = eval_args("--config", str(config), "--num-samples", "9")
    resolved = resolve_config(args, environ={"GCPLAN_SEED": "5", "GCPLAN_NUM_SAMPLES": "8"})
    assert resolved.num_samples == 9
    assert resolved.seed == 5
    assert resolved.max_nodes == 11
    assert resolved.planner == PlannerKind.EXPERT
    assert resolved.num_modes == 10


def test_unknown_config_key(tmp_path):
    """Unknown keys in the config file are usage errors"""
    config = tmp_path / "run.yaml"
    config.write_text("num_samples: 7\nbogus: 1\n", encoding="utf-8")
    with pytest.raises(UsageError) as exc:
        resolve_config(eval_args("--config", str(config), "--planner", "idm"), environ={})
    assert "bogus" in str(exc.value)
    assert main(["eval", "--scenarios", "s.json", "--out", "m.csv", "--config", str(config)]) == EXIT_USAGE


def test_unknown_planner_exits_with_usage():
    """Invalid choices are rejected by the argument parser"""
    with pytest.raises(SystemExit) as exc:
        main(["eval", "--scenarios", "s.json", "--out", "m.csv", "--planner", "magic"])
    assert exc.value.code == EXIT_USAGE


def test_graph_planner_needs_model():
    """Learned planners cannot run without a model file"""
    with pytest.raises(UsageError):
        resolve_config(eval_args("--planner", "gc_pgp"), environ={})
    assert main(["eval", "--scenarios", "s.json", "--out", "m.csv", "--planner", "pgp"]) == EXIT_USAGE


def test_invalid_option_value():
    """Values failing validation are usage errors"""
    with pytest.raises(UsageError):
        resolve_config(eval_args("--planner", "idm", "--num-samples", "0"), environ={})


def test_missing_scenario_file(tmp_path):
    """Unreadable inputs make the command fail"""
    out = tmp_path / "m.csv"
    argv = ["eval", "--scenarios", str(tmp_path / "absent.json"), "--out", str(out), "--planner", "idm"]
    assert main(argv) == EXIT_FAILURE
    assert not out.exists()


def test_report_missing_input(tmp_path):
    """A missing metrics file fails the report"""
    assert main(["report", str(tmp_path / "absent.csv")]) == EXIT_FAILURE


def test_eval_and_report(tmp_path, scenario_file, capsys):
    """Expert replay evaluates cleanly and appears in the comparison table"""
    out = tmp_path / "expert.csv"
    metrics = tmp_path / "metrics.prom"
    argv = ["eval", "--scenarios", str(scenario_file), "--out", str(out), "--planner", "expert", "--jobs", "1"]
    assert main(argv + ["--metrics-file", str(metrics)]) == EXIT_OK
    rows = read_metrics_csv(out)
    assert [row.scenario_id for row in rows] == ["chain-0", "chain-1", "__aggregate__"]
    assert rows[-1].ade == 0.0
    assert metrics.exists()

    closed = tmp_path / "idm.csv"
    argv = ["eval", "--scenarios", str(scenario_file), "--out", str(closed), "--planner", "idm", "--loop", "closed"]
    assert main(argv + ["--jobs", "1", "--repeat", "2"]) == EXIT_OK
    assert read_metrics_csv(closed)[-1].scenario_id == "__std__"

    table_file = tmp_path / "table.txt"
    assert main(["report", str(out), str(closed), "--out", str(table_file), "--out-dir", str(tmp_path / "plots")]) == 0
    printed = capsys.readouterr().out
    assert printed == table_file.read_text(encoding="utf-8")
    assert "expert" in printed and "idm" in printed
    assert (tmp_path / "plots" / "plot_score.csv").exists()


def test_train_writes_model(tmp_path, scenario_file):
    """Training on a scenario file produces a loadable model"""
    from gcplan.services.model_store import load_model

    out = tmp_path / "model.json"
    argv = ["train", "--scenarios", str(scenario_file), "--out", str(out), "--epochs", "2", "--mode", "soft_mask"]
    assert main(argv) == EXIT_OK
    model = load_model(out)
    assert model.beta is not None
    assert np.all(np.isfinite(model.params.flatten()))


def test_empty_scenario_file_fails(tmp_path):
    """A scenario file without scenarios fails the evaluation instead of raising"""
    path = tmp_path / "empty.json"
    path.write_text('{"format_version": 1, "scenarios": []}\n', encoding="utf-8")
    out = tmp_path / "m.csv"
    argv = ["eval", "--scenarios", str(path), "--out", str(out), "--planner", "idm", "--jobs", "1"]
    assert main(argv) == EXIT_FAILURE
    assert not out.exists()


def test_eval_output_is_reproducible(tmp_path, scenario_file):
    """Repeated runs and different worker counts write byte-identical metrics"""
    model = tmp_path / "model.json"
    assert main(["train", "--scenarios", str(scenario_file), "--out", str(model), "--epochs", "2"]) == EXIT_OK
    for planner, loop in (("gc_pgp", "open"), ("idm", "closed")):
        outputs = []
        for name, jobs in (("a", "1"), ("b", "1"), ("c", "2")):
            out = tmp_path / f"{planner}-{name}.csv"
            argv = ["eval", "--scenarios", str(scenario_file), "--out", str(out), "--planner", planner]
            argv += ["--model", str(model), "--loop", loop, "--num-samples", "40", "--jobs", jobs]
            assert main(argv) == EXIT_OK
            outputs.append(out.read_bytes())
        assert outputs[0] == outputs[1] == outputs[2]
