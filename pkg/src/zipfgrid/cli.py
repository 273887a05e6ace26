"""Command line interface.

Subcommands:
  train         run one training job from a JSON config
  eval          evaluate a checkpoint on a level split
  aggregate     window-median / MAD table over a directory of runs
  env-inspect   dump a map as ascii art, PNG, or a JSON manifest
  sample-check  empirical-vs-analytic check of the power-law sampler

Exit codes: 0 success, 2 configuration/usage error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np
from scipy import stats

from zipfgrid.config import (
    PAPER_WINDOW,
    ExperimentConfig,
    load_config,
)
from zipfgrid.errors import ConfigError, InvalidArgumentError, NumericalError
from zipfgrid.evaluation import aggregate, evaluate, format_cell, format_metrics_row, metrics_header, read_metrics
from zipfgrid.gridworld import MapRenderer, generate_world, map_manifest, map_to_ascii
from zipfgrid.nets import load_checkpoint
from zipfgrid.seeding import stream
from zipfgrid.training import build_agent, build_world_and_envs, run_training
from zipfgrid.zipf import build_zipf, sample_many

log = logging.getLogger("zipfgrid")


def _out_root() -> Path:
    return Path(os.environ.get("ZIPFGRID_OUT_ROOT", "."))


def _cmd_train(args) -> int:
    config = load_config(args.config)
    if args.seed is not None:
        config.seed = args.seed
    if args.updates is not None:
        config.total_updates = args.updates
    if args.threads is not None:
        config.threads = args.threads
    out_dir = Path(args.out) if args.out else _out_root() / config.out_dir
    run_training(config, out_dir)
    print(out_dir)
    return 0


def _load_run_config(args) -> ExperimentConfig:
    if args.config:
        return load_config(args.config)
    ckpt = Path(args.checkpoint)
    for candidate in (ckpt.parent / "config.json", ckpt.parent.parent / "config.json"):
        if candidate.exists():
            return load_config(candidate)
    raise ConfigError(
        f"no config.json found next to {ckpt}; pass --config explicitly"
    )


def _cmd_eval(args) -> int:
    config = _load_run_config(args)
    agent = build_agent(config)
    step = load_checkpoint(args.checkpoint, agent.net)
    _, _, eval_envs = build_world_and_envs(config)
    if args.split not in eval_envs:
        raise ConfigError(f"--split must be one of {sorted(eval_envs)}, got {args.split}")
    rng = stream(args.seed, "eval", max(step, 0), sorted(eval_envs).index(args.split))
    report = evaluate(
        agent, eval_envs[args.split], args.episodes, rng,
        learner_step=max(step, 0), seed=args.seed, split=args.split,
    )
    print(metrics_header())
    print(format_metrics_row(report))
    return 0


def _parse_window(text: str) -> tuple[int, int]:
    try:
        lo, hi = text.split(":")
        return int(lo), int(hi)
    except ValueError:
        raise ConfigError(f"--window expects lo:hi, got {text!r}") from None


def _collect_runs(root: Path):
    """(condition, split) -> {seed: [(step, value), ...]} over run directories."""
    grouped: dict[tuple[str, str], dict[int, list[tuple[int, float]]]] = {}
    for metrics in sorted(root.glob("**/metrics.csv")):
        config_path = metrics.parent / "config.json"
        if not config_path.exists():
            continue
        config = load_config(config_path)
        for row in read_metrics(metrics):
            series = grouped.setdefault(
                (config.condition, row["split"]), {}
            ).setdefault(row["seed"], [])
            series.append((row["learner_step"], row["success_rate"]))
    return grouped


def aggregate_table(root: Path, window: tuple[int, int]) -> list[str]:
    """Canonical delimited aggregation table (also consumed by the reporter)."""
    grouped = _collect_runs(root)
    if not grouped:
        raise ConfigError(f"no runs with metrics.csv + config.json under {root}")
    lines = ["condition,split,seeds,median,mad,cell"]
    for (condition, split), by_seed in sorted(grouped.items()):
        result = aggregate(by_seed, window, condition=condition)
        lines.append(
            f"{condition},{split},{len(by_seed)},{result.median:.6f},{result.mad:.6f},"
            f"{format_cell(result.median, result.mad)}"
        )
    return lines


def _cmd_aggregate(args) -> int:
    window = _parse_window(args.window)
    print(
        f"# window [{window[0]}, {window[1]}] "
        f"(paper-scale reference {list(PAPER_WINDOW)})",
        file=sys.stderr,
    )
    for line in aggregate_table(Path(args.runs), window):
        print(line)
    return 0


def _cmd_env_inspect(args) -> int:
    maps = generate_world(args.world_seed, args.num_maps, args.num_objects)
    if not 0 <= args.map_id < len(maps):
        raise ConfigError(f"--map-id must be in [0, {len(maps)}), got {args.map_id}")
    grid_map = maps[args.map_id]
    if args.out == "ascii":
        print(map_to_ascii(grid_map))
    elif args.out == "json":
        print(json.dumps(map_manifest(grid_map), indent=2))
    else:
        from PIL import Image

        path = args.path or f"map{args.map_id}.png"
        img = MapRenderer(grid_map).full_image()
        Image.fromarray(img).save(path)
        print(path)
    return 0


def _cmd_sample_check(args) -> int:
    dist = build_zipf(args.items, args.alpha)
    rng = stream(args.seed, "eval", args.items)
    ranks = sample_many(dist, args.n, rng)
    counts = np.bincount(ranks, minlength=args.items + 1)[1:]
    empirical = counts / args.n
    print("rank,analytic,empirical,abs_err")
    for r in range(args.items):
        print(f"{r + 1},{dist.pmf[r]:.6f},{empirical[r]:.6f},{abs(empirical[r] - dist.pmf[r]):.6f}")
    chi2, pvalue = stats.chisquare(counts, dist.pmf * args.n)
    worst = float(np.max(np.abs(empirical - dist.pmf)))
    verdict = pvalue > 0.001 and worst <= 0.003
    print(f"chi2={chi2:.3f} pvalue={pvalue:.5f} max_abs_err={worst:.5f} "
          f"verdict={'PASS' if verdict else 'FAIL'}")
    if not verdict:
        raise NumericalError("sampler statistics outside tolerance")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="zipfgrid",
        description="Zipf's Gridworld benchmark: train, evaluate, and inspect.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="run one training job")
    p.add_argument("--config", required=True, help="path to a JSON experiment config")
    p.add_argument("--seed", type=int, help="override config seed")
    p.add_argument("--updates", type=int, help="override total learner updates")
    p.add_argument("--threads", type=int, help="override thread count")
    p.add_argument("--out", help="output directory (default: config out_dir under "
                                 "$ZIPFGRID_OUT_ROOT)")
    p.set_defaults(fn=_cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on one split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", required=True, help="uniform | rare | zipf_2")
    p.add_argument("--episodes", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config", help="explicit config path (default: next to checkpoint)")
    p.set_defaults(fn=_cmd_eval)

    p = sub.add_parser("aggregate", help="median/MAD table over runs")
    p.add_argument("--runs", required=True, help="directory containing run subdirs")
    p.add_argument("--window", required=True, help="learner-step window, lo:hi")
    p.set_defaults(fn=_cmd_aggregate)

    p = sub.add_parser("env-inspect", help="dump one map")
    p.add_argument("--map-id", type=int, required=True)
    p.add_argument("--out", choices=("png", "ascii", "json"), default="ascii")
    p.add_argument("--path", help="output file for --out png")
    p.add_argument("--world-seed", type=int, default=2022)
    p.add_argument("--num-maps", type=int, default=20)
    p.add_argument("--num-objects", type=int, default=20)
    p.set_defaults(fn=_cmd_env_inspect)

    p = sub.add_parser("sample-check", help="validate sampler statistics")
    p.add_argument("--n", type=int, default=1_000_000)
    p.add_argument("--alpha", type=float, default=2.0)
    p.add_argument("--items", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=_cmd_sample_check)
    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(
        level=logging.INFO, format="%(asctime)s %(name)s %(message)s", stream=sys.stderr
    )
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, InvalidArgumentError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
