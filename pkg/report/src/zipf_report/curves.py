"""Learning-curve figures: one PNG per evaluation split.

Each figure shows one line per condition (median across seeds at every
logged learner step) with a shaded min-max band. The plotted points are
also exported as a CSV next to each figure so tests and downstream tools
can verify exactly what was drawn.
"""

from __future__ import annotations

from collections import defaultdict
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from zipf_report.io import MetricsRow, splits_present


def curve_data(rows: list[MetricsRow], split: str):
    """condition -> (steps, median, lo, hi) with the median over seeds."""
    by_condition: dict[str, dict[int, list[float]]] = defaultdict(lambda: defaultdict(list))
    for r in rows:
        if r.split == split:
            by_condition[r.condition][r.learner_step].append(r.success_rate)
    out = {}
    for condition, by_step in sorted(by_condition.items()):
        steps = np.array(sorted(by_step))
        med = np.array([float(np.median(by_step[s])) for s in steps])
        lo = np.array([min(by_step[s]) for s in steps])
        hi = np.array([max(by_step[s]) for s in steps])
        out[condition] = (steps, med, lo, hi)
    return out


def plot_curves(rows: list[MetricsRow], out_dir: Path) -> list[Path]:
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for split in splits_present(rows):
        data = curve_data(rows, split)
        fig, ax = plt.subplots(figsize=(6, 4))
        export_lines = ["condition,learner_step,median,min,max"]
        for condition, (steps, med, lo, hi) in data.items():
            ax.plot(steps, med, label=condition)
            ax.fill_between(steps, lo, hi, alpha=0.2)
            for s, m, a, b in zip(steps, med, lo, hi):
                export_lines.append(f"{condition},{s},{m:.6f},{a:.6f},{b:.6f}")
        ax.set_xlabel("learner updates")
        ax.set_ylabel("success rate")
        ax.set_ylim(-0.02, 1.02)
        ax.set_title(f"split: {split}")
        ax.legend(fontsize=8)
        fig.tight_layout()
        png = out_dir / f"curves_{split}.png"
        fig.savefig(png, dpi=120)
        plt.close(fig)
        (out_dir / f"curves_{split}.csv").write_text("\n".join(export_lines) + "\n",
                                                     encoding="utf-8")
        written.append(png)
    return written
