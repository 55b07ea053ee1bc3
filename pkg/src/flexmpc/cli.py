"""Command-line entry point: ``flexmpc run|compare|verify|probe|presets``.

Exit codes: 0 success, 1 runtime abort, 2 configuration or usage error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys

from flexmpc.config import PRESETS, ConfigError, emit, load_config, preset
from flexmpc.errors import ContractError, RunAborted
from flexmpc.experiments import CompareError, compare, run_experiment

EXIT_OK, EXIT_ABORT, EXIT_CONFIG = 0, 1, 2


def _on_off(text: str) -> bool:
    if text not in ("on", "off"):
        raise argparse.ArgumentTypeError("expected 'on' or 'off'")
    return text == "on"


def _common(p: argparse.ArgumentParser, default_preset: str | None) -> None:
    src = p.add_mutually_exclusive_group()
    src.add_argument("--config", metavar="PATH", help="JSON experiment configuration")
    src.add_argument("--preset", metavar="NAME", default=None, help=f"built-in preset (default: {default_preset})")
    p.add_argument("--out", metavar="DIR", help="output directory (overrides the config)")
    p.add_argument("--seed", type=int, metavar="N", help="random seed (overrides the config)")
    p.add_argument("--svg", type=_on_off, metavar="on|off", help="write SVG plots")
    p.set_defaults(default_preset=default_preset)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="flexmpc", description="Flexible-step MPC experiments")
    parser.add_argument("-v", "--verbose", action="store_true", help="log solver progress")
    sub = parser.add_subparsers(dest="command", required=True)
    _common(sub.add_parser("run", help="run a scenario"), "problem3")
    _common(sub.add_parser("verify", help="sample-based g-dclf verification"), "gdclf-verify")
    _common(sub.add_parser("probe", help="Brockett residual probe"), "brockett-probe")
    c = sub.add_parser("compare", help="compare total costs of trace directories")
    c.add_argument("traces", nargs="+", metavar="TRACE_DIR")
    c.add_argument("--out", metavar="DIR", default="comparison")
    c.add_argument("--svg", type=_on_off, default=True, metavar="on|off")
    pr = sub.add_parser("presets", help="list presets or print one as JSON")
    pr.add_argument("name", nargs="?", help="preset to print")
    return parser


def _load(args):
    if args.config:
        return load_config(args.config)
    return preset(args.preset or args.default_preset)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if args.command == "presets":
            if args.name:
                print(emit(preset(args.name)), end="")
            else:
                print("\n".join(PRESETS))
            return EXIT_OK
        if args.command == "compare":
            res = compare(args.traces, args.out, svg_on=args.svg)
            for row in res["end_states"]:
                print(f"{row['trace']}: steps={row['steps']} total_cost={row['final_total_cost']:.6g} "
                      f"|x_end|_inf={row['final_state_inf_norm']:.3g}")
            return EXIT_OK
        cfg = _load(args)
        forced = {"verify": "gdclf-verify", "probe": "brockett-probe"}.get(args.command)
        if forced:
            cfg = dataclasses.replace(cfg, scenario=forced)
        summary = run_experiment(cfg, out=args.out, svg_on=args.svg, seed=args.seed)
        print(json.dumps(summary, indent=2, sort_keys=True))
        return EXIT_OK
    except (ConfigError, CompareError, ContractError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except RunAborted as exc:
        print(f"run aborted: {exc} (partial artifacts written)", file=sys.stderr)
        return EXIT_ABORT


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
