"""Command-line entry point: generate | train | eval | report."""
import argparse
import logging
import os
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional

import yaml
from pydantic import ValidationError

from gcplan.core.config import settings
from gcplan.core.errors import GcPlanError
from gcplan.models.plan import PlannerKind
from gcplan.models.policy import TrainingMode
from gcplan.observability.telemetry import write_metrics_file
from gcplan.schemas.run_config import RunConfig
from gcplan.services.evaluation import run_closed_loop, run_open_loop
from gcplan.services.intersection_generator import generate_intersections
from gcplan.services.model_store import load_model, save_model
from gcplan.services.planner import make_planner
from gcplan.services.policy import train_scorer
from gcplan.services.reporting import comparison_table, write_metrics_csv, write_plot_data
from gcplan.services.scenario import filter_compromised, load_scenarios, save_scenarios

logger = logging.getLogger(__name__)

ENV_PREFIX = "GCPLAN_"
EXIT_OK, EXIT_FAILURE, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="YAML file with option values")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--jobs", type=int, help="worker processes (default: available cores)")
    parser.add_argument("--metrics-file", help="write prometheus metrics here when the command ends")
    parser.add_argument("--log-level", choices=["DEBUG", "INFO", "WARNING", "ERROR"])


def _add_driver_flags(parser: argparse.ArgumentParser) -> None:
    for flag in (
        "time-headway",
        "min-gap",
        "max-accel",
        "comfortable-decel",
        "delta",
        "politeness",
        "accel-threshold",
        "safe-decel",
    ):
        parser.add_argument(f"--{flag}", type=float)
    parser.add_argument("--no-mobil", dest="use_mobil", action="store_const", const=False)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gcplan", description="Goal-conditioned lane-graph planning toolkit")
    commands = parser.add_subparsers(dest="command", required=True)

    generate = commands.add_parser("generate", help="generate synthetic intersection scenarios")
    _add_common(generate)
    generate.add_argument("--count", type=int)
    generate.add_argument("--out", help="scenario file to write")
    generate.add_argument("--arm-length", type=float)
    generate.add_argument("--lanes-per-arm", type=int)
    generate.add_argument("--speed-limit", type=float)
    generate.add_argument("--agent-density", type=float)
    generate.add_argument("--corrupt-route-fraction", type=float)

    train = commands.add_parser("train", help="train an edge scorer")
    _add_common(train)
    train.add_argument("--scenarios")
    train.add_argument("--mode", choices=[m.value for m in TrainingMode])
    train.add_argument("--epochs", type=int)
    train.add_argument("--learning-rate", "--lr", dest="learning_rate", type=float)
    train.add_argument("--batch-size", type=int)
    train.add_argument("--out", help="model file to write")

    evaluate = commands.add_parser("eval", help="evaluate a planner")
    _add_common(evaluate)
    evaluate.add_argument("--scenarios")
    evaluate.add_argument("--model")
    evaluate.add_argument("--planner", choices=[k.value for k in PlannerKind])
    evaluate.add_argument("--loop", choices=["open", "closed"])
    evaluate.add_argument("--num-samples", "-K", dest="num_samples", type=int)
    evaluate.add_argument("--max-nodes", "-T", dest="max_nodes", type=int)
    evaluate.add_argument("--num-modes", type=int)
    evaluate.add_argument("--beta", type=float)
    evaluate.add_argument("--repeat", type=int)
    evaluate.add_argument("--drop-compromised", action="store_const", const=True)
    evaluate.add_argument("--out", help="metrics CSV to write")
    _add_driver_flags(evaluate)

    report = commands.add_parser("report", help="compare metric CSVs")
    _add_common(report)
    report.add_argument("inputs", nargs="+", help="metric CSV files")
    report.add_argument("--out", help="also write the table to this file")
    report.add_argument("--out-dir", help="directory for plot-data files")
    return parser


def _yaml_values(path: str) -> Dict[str, Any]:
    try:
        with open(path, encoding="utf-8") as handle:
            data = yaml.safe_load(handle) or {}
    except OSError as e:
        raise UsageError(f"cannot read config file {path}: {e}")
    except yaml.YAMLError as e:
        raise UsageError(f"config file {path} is not valid YAML: {e}")
    if not isinstance(data, dict):
        raise UsageError(f"config file {path} must hold a mapping")
    data = {str(key).replace("-", "_"): value for key, value in data.items()}
    unknown = sorted(set(data) - set(RunConfig.model_fields))
    if unknown:
        raise UsageError(f"unknown keys in config file {path}: {', '.join(unknown)}")
    return data


def _env_values(environ) -> Dict[str, Any]:
    values = {}
    for name in RunConfig.model_fields:
        if name == "command":
            continue
        raw = environ.get(f"{ENV_PREFIX}{name.upper()}")
        if raw is not None:
            try:
                values[name] = yaml.safe_load(raw)
            except yaml.YAMLError:
                values[name] = raw
    return values


def resolve_config(args: argparse.Namespace, environ=None) -> RunConfig:
    """
    Merge option sources: flags over GCPLAN_* environment variables over the
    YAML config file over built-in defaults.

    Raises:
        UsageError: On unknown config keys or values that fail validation
    """
    environ = os.environ if environ is None else environ
    values: Dict[str, Any] = {}
    if args.config:
        values.update(_yaml_values(args.config))
    values.update(_env_values(environ))
    flags = {k: v for k, v in vars(args).items() if v is not None and k != "config"}
    values.update(flags)
    values["command"] = args.command
    try:
        return RunConfig.model_validate(values)
    except ValidationError as e:
        problems = "; ".join(
            f"{'.'.join(str(p) for p in error['loc']) or 'options'}: {error['msg']}" for error in e.errors()
        )
        raise UsageError(problems)


def _jobs(config: RunConfig) -> int:
    return max(1, config.jobs if config.jobs is not None else (os.cpu_count() or 1))


def cmd_generate(config: RunConfig) -> None:
    records = generate_intersections(config.seed, config.count, config.intersection_config(), _jobs(config))
    save_scenarios(config.out, records)


def cmd_train(config: RunConfig) -> None:
    records = load_scenarios(config.scenarios)
    result = train_scorer(
        records,
        epochs=config.epochs,
        learning_rate=config.learning_rate,
        seed=config.seed,
        mode=config.mode,
        batch_size=config.batch_size,
    )
    save_model(config.out, result.model)


def cmd_eval(config: RunConfig) -> None:
    records = load_scenarios(config.scenarios)
    if config.drop_compromised:
        records = filter_compromised(records)
    model = load_model(config.model) if config.planner.needs_model else None
    runner = run_open_loop if config.loop == "open" else run_closed_loop
    reports = []
    for r in range(config.repeat):
        planner = make_planner(config.planner, model, config.planner_config(config.seed + r))
        reports.append(runner(records, planner, jobs=_jobs(config)))
    write_metrics_csv(config.out, reports)


def cmd_report(config: RunConfig) -> None:
    for path in config.inputs:
        if not Path(path).is_file():
            raise FileNotFoundError(f"metrics file not found: {path}")
    table = comparison_table(config.inputs)
    sys.stdout.write(table)
    if config.out:
        Path(config.out).write_text(table, encoding="utf-8")
    if config.out_dir:
        write_plot_data(config.inputs, config.out_dir)


COMMANDS = {
    "generate": cmd_generate,
    "train": cmd_train,
    "eval": cmd_eval,
    "report": cmd_report,
}


def main(argv: Optional[List[str]] = None) -> int:
    """Run one command; returns the process exit code (argparse exits 2 itself on bad flags)."""
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config = resolve_config(args)
    except UsageError as e:
        sys.stderr.write(f"{parser.prog} {args.command}: error: {e}\n")
        return EXIT_USAGE

    logging.getLogger().setLevel(config.log_level)
    logger.info(f"Running {config.command} with seed {config.seed}")
    try:
        COMMANDS[config.command](config)
    except (GcPlanError, ValueError, OSError) as e:
        logger.error(f"{config.command} failed: {e}")
        return EXIT_FAILURE
    finally:
        if config.metrics_file:
            try:
                write_metrics_file(config.metrics_file)
            except OSError as e:
                logger.warning(f"Could not write metrics file {config.metrics_file}: {e}")
    return EXIT_OK


if __name__ == "__main__":
    logging.basicConfig(level=settings.LOG_LEVEL, format="%(asctime)s - %(name)s - %(levelname)s - %(message)s")
    sys.exit(main())
