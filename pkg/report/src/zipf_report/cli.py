"""zipf-report: figures and tables from training metrics CSVs.

Exit codes: 0 success, 1 warning (missing split cells), 2 bad inputs.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from zipf_report.curves import plot_curves
from zipf_report.io import SchemaError, load_runs
from zipf_report.table import MissingSeedsError, write_summary


def _parse_window(text: str) -> tuple[int, int]:
    try:
        lo, hi = text.split(":")
        return int(lo), int(hi)
    except ValueError:
        raise SchemaError(f"--window expects lo:hi, got {text!r}") from None


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="zipf-report")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("curves", help="one learning-curve PNG per split")
    p.add_argument("--in", dest="in_dir", required=True)
    p.add_argument("--out", dest="out_dir", required=True)

    p = sub.add_parser("table", help="median ± MAD summary table")
    p.add_argument("--in", dest="in_dir", required=True)
    p.add_argument("--out", dest="out_dir", required=True)
    p.add_argument("--window", required=True, help="learner-step window, lo:hi")

    args = parser.parse_args(argv)
    try:
        rows = load_runs(Path(args.in_dir))
        if args.command == "curves":
            written = plot_curves(rows, Path(args.out_dir))
            for path in written:
                print(path)
            return 0
        missing = write_summary(rows, _parse_window(args.window), Path(args.out_dir))
        print(Path(args.out_dir) / "summary.md")
        if missing:
            print("warning: some condition/split cells were absent", file=sys.stderr)
            return 1
        return 0
    except (SchemaError, MissingSeedsError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
