"""Measurement methodology: split evaluation and seed/window aggregation.

An evaluation runs a fixed number of fresh episodes on one split with the
agent acting greedily, using a random stream independent of training.
Aggregation follows the replica protocol: per seed, take the median of the
checkpoints whose learner step falls in a window, then report the median and
the median absolute deviation across seeds.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass

import numpy as np

from zipfgrid.errors import InvalidArgumentError
from zipfgrid.gridworld import ZipfGridworld

SPLITS = ("zipf_2", "uniform", "rare")

METRICS_COLUMNS = ["seed", "learner_step", "split", "episodes", "success_rate", "wall_clock_s"]


@dataclass(frozen=True)
class EvalReport:
    split: str
    episodes: int
    success_rate: float
    learner_step: int
    seed: int
    wall_clock_s: float = 0.0


@dataclass(frozen=True)
class AggregateResult:
    condition: str
    per_seed_medians: dict[int, float]
    median: float
    mad: float


def evaluate(
    agent,
    env: ZipfGridworld,
    episodes: int,
    rng: np.random.Generator,
    learner_step: int = 0,
    seed: int = 0,
    split: str | None = None,
    memoize: bool = True,
) -> EvalReport:
    """Mean binary reward of the greedy policy over fresh episodes.

    The agent only needs a ``greedy_action(obs)`` method and is never
    mutated. Because observations are a pure function of (map, goal, cell)
    and parameters are frozen during evaluation, repeated states reuse the
    first computed action (``memoize``); results are identical either way.
    """
    if episodes < 1:
        raise InvalidArgumentError("episodes must be >= 1")
    start = time.perf_counter()
    successes = 0
    memo: dict[tuple, int] = {}
    for _ in range(episodes):
        obs = env.reset(rng)
        done = False
        while not done:
            if memoize:
                s = env.state
                key = (s.map.map_id, s.goal_rank, s.agent_cell)
                action = memo.get(key)
                if action is None:
                    action = agent.greedy_action(obs)
                    memo[key] = action
            else:
                action = agent.greedy_action(obs)
            obs, reward, done = env.step(action)
        successes += reward
    return EvalReport(
        split=split or env.sampling.mode,
        episodes=episodes,
        success_rate=successes / episodes,
        learner_step=learner_step,
        seed=seed,
        wall_clock_s=time.perf_counter() - start,
    )


def aggregate(
    series_by_seed: dict[int, list[tuple[int, float]]],
    window: tuple[int, int],
    condition: str = "",
) -> AggregateResult:
    """Window median per seed, then cross-seed median and MAD."""
    if len(series_by_seed) < 3:
        raise InvalidArgumentError(
            f"aggregation needs >= 3 seeds, got {len(series_by_seed)}"
        )
    lo, hi = window
    per_seed: dict[int, float] = {}
    for seed, series in sorted(series_by_seed.items()):
        inside = [v for step, v in series if lo <= step <= hi]
        if not inside:
            raise InvalidArgumentError(
                f"seed {seed}: no checkpoints inside window [{lo}, {hi}]"
            )
        per_seed[seed] = float(np.median(inside))
    values = np.array(list(per_seed.values()))
    med = float(np.median(values))
    mad = float(np.median(np.abs(values - med)))
    return AggregateResult(condition=condition, per_seed_medians=per_seed, median=med, mad=mad)


def format_cell(median: float, mad: float) -> str:
    """Canonical "median +/- MAD" cell shared with the report tooling."""
    return f"{median:.3f} ± {mad:.3f}"


# ---- metrics CSV schema --------------------------------------------------------


def metrics_header() -> str:
    return ",".join(METRICS_COLUMNS)


def format_metrics_row(report: EvalReport) -> str:
    return (
        f"{report.seed},{report.learner_step},{report.split},"
        f"{report.episodes},{report.success_rate:.6f},{report.wall_clock_s:.3f}"
    )


def read_metrics(path) -> list[dict]:
    """Parse a metrics CSV, validating the schema; rows become typed dicts."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != METRICS_COLUMNS:
            missing = set(METRICS_COLUMNS) - set(reader.fieldnames or [])
            raise InvalidArgumentError(
                f"{path}: bad metrics header, missing/extra columns {sorted(missing)}: "
                f"{reader.fieldnames}"
            )
        rows = []
        for raw in reader:
            rows.append(
                {
                    "seed": int(raw["seed"]),
                    "learner_step": int(raw["learner_step"]),
                    "split": raw["split"],
                    "episodes": int(raw["episodes"]),
                    "success_rate": float(raw["success_rate"]),
                    "wall_clock_s": float(raw["wall_clock_s"]),
                }
            )
        return rows
