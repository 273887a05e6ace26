"""Summary table: window median of the median seed, +/- MAD across seeds.

The statistics and their formatting replicate the trainer's ``aggregate``
command cell for cell, so the two tools can never disagree about a number.
"""

from __future__ import annotations

from collections import defaultdict
from pathlib import Path

import numpy as np

from zipf_report.io import MetricsRow, splits_present

TABLE_SPLITS = ["uniform", "rare"]  # columns; the zipf split is train-distribution


class MissingSeedsError(ValueError):
    pass


def window_stats(rows: list[MetricsRow], window: tuple[int, int]):
    """(condition, split) -> (median, mad, n_seeds); requires >= 3 seeds."""
    lo, hi = window
    grouped: dict[tuple[str, str], dict[int, list[float]]] = defaultdict(lambda: defaultdict(list))
    for r in rows:
        if lo <= r.learner_step <= hi:
            grouped[(r.condition, r.split)][r.seed].append(r.success_rate)
    stats = {}
    for key, by_seed in sorted(grouped.items()):
        if len(by_seed) < 3:
            raise MissingSeedsError(
                f"{key[0]} / {key[1]}: {len(by_seed)} seeds in window, need >= 3"
            )
        per_seed = np.array([float(np.median(v)) for _, v in sorted(by_seed.items())])
        med = float(np.median(per_seed))
        mad = float(np.median(np.abs(per_seed - med)))
        stats[key] = (med, mad, len(by_seed))
    return stats


def format_cell(median: float, mad: float) -> str:
    return f"{median:.3f} ± {mad:.3f}"


def summary_table(rows: list[MetricsRow], window: tuple[int, int]):
    """Returns (markdown, csv_text, warning) for the uniform/rare columns."""
    stats = window_stats(rows, window)
    conditions = sorted({c for c, _ in stats})
    header = "| condition | " + " | ".join(TABLE_SPLITS) + " |"
    rule = "|" + "---|" * (len(TABLE_SPLITS) + 1)
    md = [header, rule]
    csv_lines = ["condition," + ",".join(TABLE_SPLITS)]
    missing = False
    for condition in conditions:
        md_cells, csv_cells = [], []
        for split in TABLE_SPLITS:
            if (condition, split) in stats:
                med, mad, _ = stats[(condition, split)]
                md_cells.append(format_cell(med, mad))
                csv_cells.append(format_cell(med, mad))
            else:
                missing = True
                md_cells.append("absent")
                csv_cells.append("absent")
        md.append(f"| {condition} | " + " | ".join(md_cells) + " |")
        csv_lines.append(f"{condition}," + ",".join(csv_cells))
    return "\n".join(md) + "\n", "\n".join(csv_lines) + "\n", missing


def write_summary(rows: list[MetricsRow], window: tuple[int, int], out_dir: Path) -> bool:
    out_dir.mkdir(parents=True, exist_ok=True)
    md, csv_text, missing = summary_table(rows, window)
    (out_dir / "summary.md").write_text(md, encoding="utf-8")
    (out_dir / "summary.csv").write_text(csv_text, encoding="utf-8")
    return missing
