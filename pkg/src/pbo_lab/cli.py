"""Command line entry points.

    pbo-lab run <config> [--seed N] [--out DIR] [--preset quick|paper]
    pbo-lab figure <name> --results DIR [--out DIR]
    pbo-lab verify [--seed N]

Exit codes: 0 success, 2 configuration/validation failure, 3 divergence
during a run, 7 is reserved for soft stochastic-criterion failures in the
test suite.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace

from .config import ConfigError, apply_preset, parse_config_file, render_config
from .operators import DivergenceError

EXIT_CONFIG = 2
EXIT_DIVERGENCE = 3


def _cmd_run(args) -> int:
    from .runner import run_experiment

    try:
        cfg = parse_config_file(args.config)
        if args.seed is not None:
            cfg = replace(cfg, seeds=(args.seed,))
        cfg = apply_preset(cfg, args.preset)
    except (ConfigError, OSError) as err:
        print(f"configuration error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        run_dir = run_experiment(cfg, args.out)
    except ConfigError as err:
        print(f"configuration error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except ValueError as err:
        print(f"validation error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except DivergenceError as err:
        print(f"divergence: {err}", file=sys.stderr)
        return EXIT_DIVERGENCE
    print(run_dir)
    return 0


def _cmd_figure(args) -> int:
    from .figures import make_figure

    try:
        paths = make_figure(args.name, args.results, args.out or args.results)
    except ConfigError as err:
        print(f"figure error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as err:
        print(f"figure error: missing input {err}", file=sys.stderr)
        return EXIT_CONFIG
    for p in paths:
        print(p)
    return 0


def _cmd_verify(args) -> int:
    from .verify import main as verify_main

    return verify_main(args.seed)


def _cmd_show_config(args) -> int:
    try:
        cfg = parse_config_file(args.config)
        cfg = apply_preset(cfg, args.preset)
    except (ConfigError, OSError) as err:
        print(f"configuration error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    print(render_config(cfg), end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pbo-lab",
        description="Parameter-space Bellman operator experiments",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="execute a configured experiment")
    run.add_argument("config", help="path to the experiment config file")
    run.add_argument("--seed", type=int, default=None, help="run a single seed")
    run.add_argument("--out", default="results", help="artifacts directory")
    run.add_argument("--preset", choices=("paper", "quick"), default="paper")
    run.set_defaults(fn=_cmd_run)

    fig = sub.add_parser("figure", help="emit plot data for a standard figure")
    fig.add_argument("name", help="fig4 | fig6 | fig7 | fig8")
    fig.add_argument("--results", required=True, help="directory holding finished runs")
    fig.add_argument("--out", default=None, help="output directory (default: results)")
    fig.set_defaults(fn=_cmd_figure)

    ver = sub.add_parser("verify", help="run the oracle and property checks")
    ver.add_argument("--seed", type=int, default=0)
    ver.set_defaults(fn=_cmd_verify)

    show = sub.add_parser("show-config", help="print a config with all defaults resolved")
    show.add_argument("config")
    show.add_argument("--preset", choices=("paper", "quick"), default="paper")
    show.set_defaults(fn=_cmd_show_config)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
