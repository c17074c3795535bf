"""Command-line front end.

Subcommands: train, evaluate, bench, validate-config, dump-goals, report.
Exit codes: 0 on success, 1 on runtime errors, 2 on configuration errors.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import replace

from .config import SCHEDULERS, ConfigError, ScenarioConfig, format_config, load_config

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_CONFIG = 2


def _add_config_arg(parser, required: bool = False):
    parser.add_argument("--config", required=required, default=None,
                        help="scenario configuration file (defaults apply if omitted)")


def _add_overrides(parser):
    parser.add_argument("--seed", type=int, default=None, help="override sim.seed")
    parser.add_argument("--output-dir", default=None, help="override sim.output_dir")
    parser.add_argument("--scheduler", choices=SCHEDULERS, default=None,
                        help="override sim.scheduler")


def _load(args) -> ScenarioConfig:
    cfg = load_config(args.config) if args.config else ScenarioConfig()
    updates = {}
    if getattr(args, "seed", None) is not None:
        updates["seed"] = args.seed
    if getattr(args, "output_dir", None) is not None:
        updates["output_dir"] = args.output_dir
    if getattr(args, "scheduler", None) is not None:
        updates["scheduler"] = args.scheduler
    if updates:
        cfg = replace(cfg, **updates)
    cfg.validate()
    return cfg


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="axsched",
        description="Uplink OFDMA + MU-MIMO scheduling sandbox: train, evaluate "
                    "and benchmark schedulers on a 20 MHz 802.11ax-style link.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="run episodes with the configured scheduler")
    _add_config_arg(p)
    _add_overrides(p)
    p.add_argument("--metrics-name", default="metrics.csv", help="metrics file name")

    p = sub.add_parser("evaluate", help="greedy evaluation of a trained checkpoint")
    _add_config_arg(p)
    _add_overrides(p)
    p.add_argument("--checkpoint", default=None,
                   help="checkpoint path (default: <output_dir>/<checkpoint_name>)")
    p.add_argument("--replications", type=int, default=None, help="override sim.replications")

    p = sub.add_parser("bench", help="decision-latency benchmark over a K grid")
    _add_config_arg(p)
    _add_overrides(p)
    p.add_argument("--k-grid", default="5,10,20", help="comma-separated station counts")
    p.add_argument("--samples", type=int, default=20, help="measured steps per point")
    p.add_argument("--warmup", type=int, default=3, help="discarded warm-up steps")

    p = sub.add_parser("validate-config", help="parse, validate and echo a configuration")
    _add_config_arg(p, required=True)

    p = sub.add_parser("dump-goals", help="print the RU layout and goal table")
    p.add_argument("--bandwidth", type=int, default=20, help="bandwidth preset in MHz")
    p.add_argument("--output", default="-", help="output file, '-' for stdout")

    p = sub.add_parser("report", help="render figures and a summary from metrics CSVs")
    p.add_argument("metrics", nargs="+", help="one or more metrics CSV files")
    p.add_argument("--output-dir", default=None,
                   help="figure directory (default: alongside the first CSV)")
    p.add_argument("--labels", default=None, help="comma-separated curve labels")
    p.add_argument("--rolling", type=int, default=25, help="rolling-mean window")
    return parser


def _cmd_train(args) -> int:
    from . import sim

    cfg = _load(args)
    path = sim.run(cfg, metrics_name=args.metrics_name)
    print(f"wrote {path}")
    if cfg.scheduler == "dhqn":
        print(f"checkpoint: {os.path.join(cfg.output_dir, cfg.checkpoint_name)}")
    return EXIT_OK


def _cmd_evaluate(args) -> int:
    from . import sim

    cfg = _load(args)
    if args.replications is not None:
        cfg = replace(cfg, replications=args.replications)
        cfg.validate()
    result = sim.evaluate(cfg, checkpoint_path=args.checkpoint)
    print(f"wrote {result.csv_path}")
    if result.degenerate_ci:
        print(f"mean throughput: {result.mean_throughput_mbps:.3f} Mbit/s "
              "(single replication: confidence interval degenerate)")
    else:
        print(f"mean throughput: {result.mean_throughput_mbps:.3f} Mbit/s "
              f"(95% CI {result.ci_low_mbps:.3f} .. {result.ci_high_mbps:.3f}, "
              f"{len(result.replication_means)} replications)")
    return EXIT_OK


def _cmd_bench(args) -> int:
    from . import sim

    cfg = _load(args)
    try:
        k_grid = [int(v) for v in args.k_grid.split(",") if v.strip()]
    except ValueError as exc:
        raise ConfigError(f"bad --k-grid: {exc}") from exc
    if not k_grid:
        raise ConfigError("--k-grid must list at least one station count")
    rows = sim.bench_scaling(cfg, k_grid, samples=args.samples, warmup=args.warmup)
    for row in rows:
        print(f"K={row['k_stas']:>3} {row['scheduler']:<14} "
              f"median {row['median_step_ms']:8.3f} ms over {row['samples']} steps")
    print(f"wrote {os.path.join(cfg.output_dir, 'bench.csv')}")
    return EXIT_OK


def _cmd_validate_config(args) -> int:
    cfg = _load(args)
    sys.stdout.write(format_config(cfg))
    return EXIT_OK


def _cmd_dump_goals(args) -> int:
    from .ru import enumerate_goals, format_goal_table, format_layout, make_layout

    layout = make_layout(args.bandwidth)
    text = format_layout(layout) + format_goal_table(enumerate_goals(layout), layout)
    if args.output == "-":
        sys.stdout.write(text)
    else:
        with open(args.output, "w", encoding="utf-8") as fh:
            fh.write(text)
        print(f"wrote {args.output}")
    return EXIT_OK


def _cmd_report(args) -> int:
    from .report import render_report

    out_dir = args.output_dir or os.path.dirname(os.path.abspath(args.metrics[0]))
    labels = args.labels.split(",") if args.labels else None
    written = render_report(args.metrics, out_dir, labels=labels, rolling=args.rolling)
    for path in written:
        print(f"wrote {path}")
    return EXIT_OK


_COMMANDS = {
    "train": _cmd_train,
    "evaluate": _cmd_evaluate,
    "bench": _cmd_bench,
    "validate-config": _cmd_validate_config,
    "dump-goals": _cmd_dump_goals,
    "report": _cmd_report,
}


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # runtime failures map to exit code 1
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
