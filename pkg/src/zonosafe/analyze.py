"""Offline aggregation of run outputs (trace CSVs + report JSONs)."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from .certificates import HEAD_NAMES, HeadReport
from .modelio import load_model
from .simlab import (
    _HEAD_PREFIX,
    aggregate,
    load_trace,
    render_text,
    write_passage_csv,
    write_probe_csv,
    write_spread_csv,
)


@dataclass(frozen=True)
class _CsvStep:
    t: float
    heads: dict
    encode_ms: float
    certqp_ms: float


@dataclass(frozen=True)
class _CsvRun:
    scenario: str
    mode: str
    verdict: str
    body: str | None
    axis: str | None


def _steps_from_rows(rows) -> list[_CsvStep]:
    steps = []
    for row in rows:
        heads = {}
        for name in HEAD_NAMES:
            p = _HEAD_PREFIX[name]
            heads[name] = HeadReport(
                h_point=row[f"{p}_point"],
                h_set=row[f"{p}_set"],
                spread=row[f"{p}_spread"],
                safe_point=bool(row[f"{p}_safe_point"]),
                safe_set=bool(row[f"{p}_safe_set"]),
                blind_spot=bool(row[f"{p}_blind"]),
            )
        steps.append(_CsvStep(t=row["t"], heads=heads,
                              encode_ms=row["encode_ms"], certqp_ms=row["certqp_ms"]))
    return steps


def load_runs(trace_dir: Path):
    """Pair up report_*.json and trace_*.csv files in a run directory."""
    trace_dir = Path(trace_dir)
    reports = sorted(trace_dir.glob("report_*.json"))
    if not reports:
        raise FileNotFoundError(f"no report_*.json files in {trace_dir}")
    runs = []
    for report_path in reports:
        with open(report_path, "r", encoding="utf-8") as fh:
            obj = json.load(fh)
        trace_path = trace_dir / report_path.name.replace("report_", "trace_").replace(
            ".json", ".csv")
        if not trace_path.exists():
            raise FileNotFoundError(f"missing trace for {report_path.name}")
        rep = _CsvRun(scenario=obj["scenario"], mode=obj["mode"],
                      verdict=obj["verdict"], body=obj.get("body"),
                      axis=obj.get("axis"))
        runs.append((rep, _steps_from_rows(load_trace(trace_path))))
    return runs


def analyze_directory(trace_dir, model_path=None, timing: bool = False) -> int:
    trace_dir = Path(trace_dir)
    runs = load_runs(trace_dir)
    agg = aggregate(runs)
    probe_r = None
    if model_path is not None:
        meta = load_model(model_path).meta
        probe_r = {name: float(v) for name, v in meta.get("raw_probe_r", {}).items()}

    write_passage_csv(agg, trace_dir / "table_passage.csv")
    write_spread_csv(agg, trace_dir / "table_spread.csv")
    if probe_r:
        write_probe_csv(probe_r, trace_dir / "table_probe.csv")
    text = render_text(agg, probe_r=probe_r, timing=timing)
    with open(trace_dir / "analysis_summary.txt", "w", encoding="utf-8") as fh:
        fh.write(text)
    print(text)
    return 0
