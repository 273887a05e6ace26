"""Reading the public metrics-CSV schema."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

METRICS_COLUMNS = ["seed", "learner_step", "split", "episodes", "success_rate", "wall_clock_s"]


class SchemaError(ValueError):
    pass


@dataclass(frozen=True)
class MetricsRow:
    condition: str
    seed: int
    learner_step: int
    split: str
    success_rate: float


def condition_of(config_path: Path) -> str:
    cfg = json.loads(config_path.read_text(encoding="utf-8"))
    return f"{cfg['agent']}@{cfg['level_name']}"


def read_metrics_csv(path: Path, condition: str) -> list[MetricsRow]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != METRICS_COLUMNS:
            expected = set(METRICS_COLUMNS)
            got = set(reader.fieldnames or [])
            bad = sorted(expected.symmetric_difference(got)) or reader.fieldnames
            raise SchemaError(f"{path}: unexpected metrics schema, offending columns: {bad}")
        return [
            MetricsRow(
                condition=condition,
                seed=int(row["seed"]),
                learner_step=int(row["learner_step"]),
                split=row["split"],
                success_rate=float(row["success_rate"]),
            )
            for row in reader
        ]


def load_runs(root: Path) -> list[MetricsRow]:
    """All metrics rows under a directory of run dirs (config.json siblings)."""
    rows: list[MetricsRow] = []
    for metrics in sorted(root.glob("**/metrics.csv")):
        config = metrics.parent / "config.json"
        if not config.exists():
            continue
        rows.extend(read_metrics_csv(metrics, condition_of(config)))
    if not rows:
        raise SchemaError(f"no run directories with metrics.csv + config.json under {root}")
    return rows


def splits_present(rows: list[MetricsRow]) -> list[str]:
    order = {"zipf_2": 0, "uniform": 1, "rare": 2}
    return sorted({r.split for r in rows}, key=lambda s: order.get(s, 99))
