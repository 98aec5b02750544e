"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import export, trainer
from .checkpoint import CheckpointError
from .config import ConfigError, TrainConfig, load_config
from .plot import KINDS, PlotSpec, render_plot
from .ppo import NonFiniteLossError

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="spread-ippo", description="Independent PPO on a cooperative coverage world.")
    p.add_argument("-q", "--quiet", action="store_true", help="only log warnings")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    t = sub.add_parser("train", help="train agents for every configured seed")
    t.add_argument("--config", type=Path, help="TrainConfig JSON (defaults when omitted)")
    t.add_argument("--seed", type=int, action="append", help="train only this seed (repeatable)")
    t.add_argument("--out", type=Path, help="run directory (overrides output_dir)")
    t.add_argument("--workers", type=int, default=1, help="parallel seed workers")

    e = sub.add_parser("eval", help="evaluate a checkpoint without learning")
    e.add_argument("--checkpoint", type=Path, required=True)
    e.add_argument("--episodes", type=int, default=100)
    e.add_argument("--mode", choices=("greedy", "sample"), default="greedy")
    e.add_argument("--delta", type=float, default=0.10)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--out", type=Path, help="report path (default: eval.json beside the checkpoint)")
    e.add_argument("--trajectories", type=Path, help="trajectory dump path")

    m = sub.add_parser("metrics", help="export a run log as a per-episode CSV")
    m.add_argument("--log", type=Path, required=True)
    m.add_argument("--out", type=Path, required=True)

    pl = sub.add_parser("plot", help="render an SVG from a CSV")
    pl.add_argument("--input", type=Path, required=True)
    pl.add_argument("--kind", choices=KINDS, required=True)
    pl.add_argument("--out", type=Path, required=True)
    pl.add_argument("--window", type=int)
    pl.add_argument("--column", action="append", help="column(s) to draw; defaults depend on kind")
    pl.add_argument("--x", default=None, help="x column (line/band)")
    pl.add_argument("--title", default="")
    pl.add_argument("--xlabel", default=None)
    pl.add_argument("--ylabel", default=None)

    c = sub.add_parser("compare-seeds", help="aggregate seed runs into CSVs and figures")
    c.add_argument("--runs", type=Path, required=True)
    c.add_argument("--out", type=Path, required=True)
    c.add_argument("--resolution", type=int, default=50)
    return p


def _cmd_train(args) -> int:
    config = load_config(args.config) if args.config else TrainConfig()
    out = args.out or Path(config.output_dir)
    dirs = trainer.train(config, seeds=args.seed, out_dir=out, workers=args.workers)
    for d in dirs:
        report = json.loads((d / "eval.json").read_text())
        print(f"{d}: success_rate={report['success_rate']:.1f}% mean_reward={report['mean_reward']:.2f}")
    return EXIT_OK


def _cmd_eval(args) -> int:
    if args.episodes < 1:
        raise UsageError("--episodes must be >= 1")
    traj = args.trajectories or args.checkpoint.with_name("trajectories.jsonl")
    report = trainer.evaluate(
        args.checkpoint, None, args.episodes, args.mode, args.seed, args.delta, trajectories_path=traj
    )
    out = args.out or args.checkpoint.with_name("eval.json")
    out.write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")
    print(f"success_rate={report.success_rate:.1f}% mean_reward={report.mean_reward:.2f} -> {out}")
    return EXIT_OK


def _cmd_metrics(args) -> int:
    out = export.export_metrics(args.log, args.out)
    print(out)
    return EXIT_OK


def _cmd_plot(args) -> int:
    if args.kind == "heatmap":
        data = {"counts": export.read_matrix_csv(args.input)}
        cols = []
    else:
        table = export.read_csv(args.input)
        if args.kind == "line":
            cols = args.column or ["team_reward"]
        elif args.kind == "band":
            cols = args.column or ["mean", "std"]
        else:
            cols = args.column or [c for c in list(table)[1:3]]
        missing = [c for c in cols if c not in table]
        if missing:
            raise UsageError(f"column(s) not in {args.input}: {', '.join(missing)}")
        data = {c: table[c] for c in cols}
        xname = args.x or next(iter(table))
        if args.kind == "bar":
            data["labels"] = table[xname]
        elif xname in table and xname not in cols:
            data["x"] = table[xname]
    spec = PlotSpec(
        kind=args.kind,
        columns=cols,
        window=args.window,
        xlabel=args.xlabel if args.xlabel is not None else (args.x or ("x" if args.kind == "heatmap" else "episode")),
        ylabel=args.ylabel if args.ylabel is not None else ("y" if args.kind == "heatmap" else ", ".join(cols[:1])),
        title=args.title,
        output=args.out,
    )
    print(render_plot(spec, data))
    return EXIT_OK


def _cmd_compare(args) -> int:
    summary = export.compare_seeds(args.runs, args.out, resolution=args.resolution)
    print(json.dumps(summary, indent=2, sort_keys=True))
    return EXIT_OK


_COMMANDS = {
    "train": _cmd_train,
    "eval": _cmd_eval,
    "metrics": _cmd_metrics,
    "plot": _cmd_plot,
    "compare-seeds": _cmd_compare,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not args.command:
            raise UsageError(parser.format_help())
        logging.basicConfig(
            level=logging.WARNING if args.quiet else logging.INFO,
            format="%(message)s",
        )
        return _COMMANDS[args.command](args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except (ConfigError, CheckpointError, export.LogFormatError, NonFiniteLossError,
            OSError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
