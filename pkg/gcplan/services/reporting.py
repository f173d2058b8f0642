import csv
import io
import logging
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from gcplan.core.errors import GcPlanError
from gcplan.schemas.metrics import (
    AGGREGATE_ID,
    CSV_FIELDS,
    MEAN_ID,
    STD_ID,
    EvaluationReport,
    MetricRow,
)

logger = logging.getLogger(__name__)

METRIC_FIELDS = CSV_FIELDS[3:]
_INDICATORS = ("miss", "collision_free")


def _format(row: MetricRow, field: str) -> str:
    value = getattr(row, field)
    if value is None:
        return ""
    if isinstance(value, str):
        return value
    if field in _INDICATORS and not row.is_summary:
        return str(int(round(value)))
    return f"{value:.6f}"


def summary_rows(reports: Sequence[EvaluationReport], planner: str) -> List[MetricRow]:
    """Population mean and standard deviation of the per-repeat aggregates."""
    mean, std = {}, {}
    for field in METRIC_FIELDS:
        values = [getattr(r.aggregate, field) for r in reports if getattr(r.aggregate, field) is not None]
        mean[field] = float(np.mean(values)) if values else None
        std[field] = float(np.std(values)) if values else None
    return [
        MetricRow(scenario_id=MEAN_ID, scenario_type="all", planner=planner, **mean),
        MetricRow(scenario_id=STD_ID, scenario_type="all", planner=planner, **std),
    ]


def report_rows(reports: Sequence[EvaluationReport]) -> List[MetricRow]:
    """
    Rows for the metrics CSV.

    A single run emits its scenario rows and the aggregate row. Repeats tag
    each scenario row with ``@r<k>`` and end with mean and std rows.
    """
    if not reports:
        raise ValueError("no evaluation report to write")
    if len(reports) == 1:
        return list(reports[0].rows) + [reports[0].aggregate]
    rows = []
    for k, report in enumerate(reports):
        rows.extend(row.model_copy(update={"scenario_id": f"{row.scenario_id}@r{k}"}) for row in report.rows)
    return rows + summary_rows(reports, reports[0].planner)


def dumps_metrics_csv(rows: Sequence[MetricRow]) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(CSV_FIELDS)
    for row in rows:
        writer.writerow([_format(row, field) for field in CSV_FIELDS])
    return buffer.getvalue()


def write_metrics_csv(path, reports: Sequence[EvaluationReport]) -> None:
    rows = report_rows(reports)
    Path(path).write_text(dumps_metrics_csv(rows), encoding="utf-8")
    logger.info(f"Wrote {len(rows)} metric rows to {path}")


def read_metrics_csv(path) -> List[MetricRow]:
    with open(path, newline="", encoding="utf-8") as handle:
        reader = csv.DictReader(handle)
        if tuple(reader.fieldnames or ()) != CSV_FIELDS:
            raise GcPlanError(f"{path}: unexpected CSV header {reader.fieldnames}")
        rows = []
        for line, raw in enumerate(reader, start=2):
            try:
                values = {field: (float(raw[field]) if raw[field] != "" else None) for field in METRIC_FIELDS}
            except ValueError as e:
                raise GcPlanError(f"{path}:{line}: {e}")
            rows.append(
                MetricRow(
                    scenario_id=raw["scenario_id"],
                    scenario_type=raw["scenario_type"],
                    planner=raw["planner"],
                    **values,
                )
            )
    return rows


def _planner_summaries(rows: Sequence[MetricRow]) -> Dict[str, Dict[str, MetricRow]]:
    """Mean (or aggregate) and optional std row per planner."""
    summaries: Dict[str, Dict[str, MetricRow]] = {}
    for row in rows:
        if row.scenario_id in (AGGREGATE_ID, MEAN_ID):
            summaries.setdefault(row.planner, {})["mean"] = row
        elif row.scenario_id == STD_ID:
            summaries.setdefault(row.planner, {})["std"] = row
    return summaries


def comparison_table(paths: Sequence) -> str:
    """
    Side-by-side comparison of the summary rows found in metric CSVs.

    Planners are ordered by descending score, ties by name. Raises OSError
    naming the path of any file that cannot be read.
    """
    summaries: Dict[str, Dict[str, MetricRow]] = {}
    for path in paths:
        for planner, entry in _planner_summaries(read_metrics_csv(path)).items():
            if planner in summaries:
                logger.warning(f"Planner {planner} appears in several files; keeping the one from {path}")
            summaries[planner] = entry
    if not summaries:
        raise GcPlanError("no aggregate rows found in the given files")

    def score(planner: str) -> float:
        value = summaries[planner]["mean"].score
        return -value if value is not None else float("inf")

    planners = sorted(summaries, key=lambda p: (score(p), p))
    header = ["metric"] + planners
    table = [header]
    for field in METRIC_FIELDS:
        cells = [field]
        for planner in planners:
            mean = getattr(summaries[planner]["mean"], field)
            std_row: Optional[MetricRow] = summaries[planner].get("std")
            std = getattr(std_row, field) if std_row is not None else None
            if mean is None:
                cells.append("-")
            elif std is None:
                cells.append(f"{mean:.4f}")
            else:
                cells.append(f"{mean:.4f} ± {std:.4f}")
        table.append(cells)
    widths = [max(len(row[i]) for row in table) for i in range(len(header))]
    lines = ["  ".join(cell.ljust(width) for cell, width in zip(row, widths)).rstrip() for row in table]
    lines.insert(1, "  ".join("-" * width for width in widths))
    return "\n".join(lines) + "\n"


def write_plot_data(paths: Sequence, out_dir) -> List[Path]:
    """One CSV per metric holding every per-scenario value (planner, scenario_id, value)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = [row for path in paths for row in read_metrics_csv(path) if not row.is_summary]
    written = []
    for field in METRIC_FIELDS:
        series = sorted(
            (row.planner, row.scenario_id, getattr(row, field)) for row in rows if getattr(row, field) is not None
        )
        if not series:
            continue
        target = out / f"plot_{field}.csv"
        buffer = io.StringIO()
        writer = csv.writer(buffer, lineterminator="\n")
        writer.writerow(("planner", "scenario_id", field))
        for planner, scenario_id, value in series:
            writer.writerow((planner, scenario_id, f"{value:.6f}"))
        target.write_text(buffer.getvalue(), encoding="utf-8")
        written.append(target)
    logger.info(f"Wrote {len(written)} plot-data files to {out}")
    return written
