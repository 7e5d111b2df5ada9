"""Command line entry point.

Subcommands:
    attack       run an attack grid from a config, write results.csv
    sweep-alpha  step-size ablation grid, write results.csv + alpha_pivot.csv
    report       aggregate result CSVs into summary.csv (median, IQR, n)
    dump         render one saved adversarial run as PPM images
    gen-data     write synthetic scenes to disk
    fit          fit a toy model and save a checkpoint

Exit codes: 0 success, 2 configuration or format problem (nothing partial is
written), 3 runtime failure during an otherwise valid run.
"""

from __future__ import annotations

import argparse
import sys

from .bench import (cmd_attack, cmd_dump, cmd_fit, cmd_gen_data, cmd_report,
                    cmd_sweep_alpha, load_config)
from .errors import ConfigError, FormatError, PixattackError


def _add_config_args(sub: argparse.ArgumentParser, needs_config: bool = True) -> None:
    sub.add_argument("--config", required=needs_config, help="path to a run config file")
    sub.add_argument("--out", help="output directory (overrides the config)")
    sub.add_argument("--seed", type=int, help="single attack seed (overrides the config)")
    sub.add_argument("--workers", type=int, help="thread count (overrides the config)")
    sub.add_argument("--epsilon", type=float, help="single epsilon (overrides the config)")
    sub.add_argument("--alpha", type=float, help="single step size (overrides the config)")
    sub.add_argument("--iters", help="comma separated iteration counts (overrides the config)")
    sub.add_argument("--methods", help="comma separated methods (overrides the config)")
    sub.add_argument("--no-random-init", action="store_true",
                     help="start attacks from the clean input")
    sub.add_argument("--no-input-clamp", action="store_true",
                     help="skip clamping adversarial inputs to [0, 1]")
    sub.add_argument("--cossim-grad", action="store_true",
                     help="backpropagate through the similarity weights")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pixattack",
                                     description="adversarial attacks on pixel-wise toy models")
    subs = parser.add_subparsers(dest="command", required=True)

    attack = subs.add_parser("attack", help="run an attack grid")
    _add_config_args(attack)
    attack.add_argument("--save-adv", action="store_true",
                        help="save adversarial inputs for later dumping")

    sweep = subs.add_parser("sweep-alpha", help="step-size ablation")
    _add_config_args(sweep)

    report = subs.add_parser("report", help="aggregate result CSVs")
    report.add_argument("csvs", nargs="+", help="results.csv files to aggregate")
    report.add_argument("--out", required=True, help="output directory")
    report.add_argument("--plots", action="store_true", help="also write line plot PPMs")

    dump = subs.add_parser("dump", help="render one saved run as images")
    _add_config_args(dump)
    dump.add_argument("--run-id", required=True, help="id of a run saved with --save-adv")

    gen = subs.add_parser("gen-data", help="write synthetic scenes to disk")
    _add_config_args(gen)

    fit = subs.add_parser("fit", help="fit a model and save a checkpoint")
    _add_config_args(fit)
    return parser


def _overrides(args: argparse.Namespace) -> dict:
    over: dict = {}
    if args.out is not None:
        over["out"] = args.out
    if args.seed is not None:
        over["seeds"] = (args.seed,)
    if args.workers is not None:
        over["workers"] = args.workers
    if args.epsilon is not None:
        over["epsilons"] = (args.epsilon,)
    if args.alpha is not None:
        over["alphas"] = (args.alpha,)
    if args.iters is not None:
        try:
            over["iters"] = tuple(int(s.strip()) for s in str(args.iters).split(",") if s.strip())
        except ValueError as exc:
            raise ConfigError(f"--iters: {exc}") from exc
    if args.methods is not None:
        over["methods"] = tuple(s.strip() for s in args.methods.split(",") if s.strip())
    if args.no_random_init:
        over["random_init"] = False
    if args.no_input_clamp:
        over["input_clamp"] = False
    if args.cossim_grad:
        over["cossim_grad"] = True
    if getattr(args, "save_adv", False):
        over["save_adv"] = True
    return over


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "report":
            path = cmd_report(args.csvs, args.out, plots=args.plots)
            print(path)
            return 0
        cfg = load_config(args.config, _overrides(args))
        if args.command == "attack":
            print(cmd_attack(cfg))
        elif args.command == "sweep-alpha":
            for path in cmd_sweep_alpha(cfg):
                print(path)
        elif args.command == "dump":
            print(cmd_dump(cfg, args.run_id))
        elif args.command == "gen-data":
            for path in cmd_gen_data(cfg):
                print(path)
        elif args.command == "fit":
            print(cmd_fit(cfg))
        return 0
    except (ConfigError, FormatError) as exc:
        print(f"pixattack: {exc}", file=sys.stderr)
        return 2
    except PixattackError as exc:
        print(f"pixattack: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
