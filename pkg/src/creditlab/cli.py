"""``lab`` command line: run an experiment, write its metrics, or re-emit CSV."""
from __future__ import annotations

import argparse
import logging
import sys

from .experiments import config as config_mod
from .experiments.offline import loss_diag, rmse_curve, run_offline, time_bench
from .experiments.online import run_online
from .experiments.results import emit_metrics, load_result, write_csv

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2

# command -> (default kind, accepted kinds, runner)
COMMANDS = {
    "online": ("online_gridworld", ("online_gridworld", "cartpole"), run_online),
    "offline": ("offline_gridworld", ("offline_gridworld",), run_offline),
    "rmse": ("rmse_curve", ("rmse_curve",), rmse_curve),
    "bench": ("time_bench", ("time_bench",), time_bench),
    "loss-diag": ("loss_diag", ("loss_diag",), loss_diag),
}

log = logging.getLogger("creditlab")


def build_parser():
    parser = argparse.ArgumentParser(prog="lab", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, help=f"run the {name} experiment")
        p.add_argument("--config", help="flat YAML config file (dotted keys)")
        seeds = p.add_mutually_exclusive_group()
        seeds.add_argument("--seed", type=int, help="run a single seed")
        seeds.add_argument("--seeds", help="comma-separated seed list")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--fast", action="store_true", help="divide training budgets by 10")
    p = sub.add_parser("plot-data", help="re-emit metrics.csv from a stored run")
    p.add_argument("run_dir")
    return parser


def resolve_config(args):
    default_kind, kinds, _ = COMMANDS[args.command]
    if args.config:
        cfg = config_mod.load_config(args.config, out_dir=args.out, fast=args.fast)
    else:
        cfg = config_mod.RunConfig(default_kind, out_dir=args.out, fast=args.fast)
    if cfg.kind not in kinds:
        raise config_mod.ConfigError(
            f"'lab {args.command}' cannot run experiment kind {cfg.kind!r}")
    seeds = None
    if args.seed is not None:
        seeds = [args.seed]
    elif args.seeds:
        try:
            seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
        except ValueError as exc:
            raise config_mod.ConfigError(f"bad --seeds value {args.seeds!r}") from exc
    if seeds is not None:
        cfg = cfg.replace(seeds=seeds)
    return cfg


def main(argv=None):
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    args = build_parser().parse_args(argv)
    if args.command == "plot-data":
        try:
            result = load_result(args.run_dir)
            write_csv(result.series, f"{args.run_dir}/metrics.csv")
        except (OSError, ValueError, KeyError) as exc:
            log.error("cannot re-emit metrics: %s", exc)
            return EXIT_RUNTIME
        return EXIT_OK
    try:
        cfg = resolve_config(args)
    except config_mod.ConfigError as exc:
        log.error("config error: %s", exc)
        return EXIT_CONFIG
    runner = COMMANDS[args.command][2]
    log.info("running %s (config %s) seeds=%s", cfg.kind, cfg.hash()[:12], cfg.seeds)
    try:
        result = runner(cfg)
        paths = emit_metrics(result, args.out)
    except Exception as exc:  # noqa: BLE001 - surfaced as a runtime exit code
        log.error("run failed: %s: %s", type(exc).__name__, exc)
        return EXIT_RUNTIME
    for p in paths:
        log.info("wrote %s", p)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
