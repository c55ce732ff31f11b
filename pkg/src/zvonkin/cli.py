"""Command-line entry point: ``zvonkin run <config>`` and ``zvonkin list-scenarios``."""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .pipeline import EXIT_CONFIG, STAGES, run_scenario
from .scenarios import BUILTIN, ConfigError, list_scenarios, loads_config


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="zvonkin", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log stage progress")
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run a scenario configuration")
    run.add_argument("config", help="INI file, or the id of a built-in scenario")
    run.add_argument("--seed", type=int, default=None, help="override the master seed")
    run.add_argument("--out", default=None, help="output directory (default runs/<scenario>)")
    run.add_argument("--stage", choices=STAGES + ("all",), default="all",
                     help="run stages up to and including this one")
    run.add_argument("--exhaustive-norms", action="store_true",
                     help="use all node pairs for Hoelder seminorms")
    run.add_argument("--cache-dir", default=None, help="directory for cached PDE solves")
    sub.add_parser("list-scenarios", help="print the built-in scenarios")
    return parser


def load_scenario(source: str):
    if source in BUILTIN:
        return BUILTIN[source].validate()
    path = Path(source)
    if not path.exists():
        raise ConfigError(f"no such configuration file or built-in scenario: {source}")
    return loads_config(path.read_text())


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "list-scenarios":
        sys.stdout.write(list_scenarios())
        return 0
    try:
        scenario = load_scenario(args.config)
        if args.seed is not None:
            scenario = replace(scenario, seed=args.seed).validate()
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = Path(args.out) if args.out else Path("runs") / scenario.name
    result = run_scenario(scenario, out, args.stage, args.exhaustive_norms, args.cache_dir)
    stream = sys.stdout if result.exit_code == 0 else sys.stderr
    print(f"{scenario.name}: {result.message} (exit {result.exit_code}, output {out})", file=stream)
    return result.exit_code


if __name__ == "__main__":
    sys.exit(main())
