"""``cbfadapt`` command line: simulate, generate-data, train, adapt-run, validate-param."""

from __future__ import annotations

import argparse
import logging
import sys

from . import harness
from .errors import CbfAdaptError, ModelFormatError


def _floats(text: str) -> list:
    return [float(v) for v in text.split(",") if v.strip()]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cbfadapt", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("simulate", "generate-data", "train", "adapt-run", "validate-param"):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="scenario TOML file")
        p.add_argument("--seed", type=int, default=None, help="override [scenario].seed")
        p.add_argument("--out", default=None, help="override [output].dir")
        p.add_argument("-v", "--verbose", action="store_true")
        if name == "adapt-run":
            p.add_argument("--oracle", action="store_true", help="score candidates by rollout instead of the ensemble")
        if name == "validate-param":
            p.add_argument("--state", type=_floats, default=None, help="comma-separated state, default [scenario].x0")
            p.add_argument("--params", type=_floats, default=None, help="comma-separated gains, default [barrier].params")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = harness.load_config(args.config, args.seed, args.out)
        if args.command == "simulate":
            return harness.run_simulate(cfg)
        if args.command == "generate-data":
            return harness.run_generate_data(cfg)
        if args.command == "train":
            return harness.run_train(cfg)
        if args.command == "adapt-run":
            return harness.run_adapt(cfg, oracle=args.oracle)
        return harness.run_validate_param(cfg, args.state, args.params)
    except harness.ConfigError as exc:
        print(f"config-error: {exc}", file=sys.stderr)
        return harness.EXIT_CONFIG
    except harness.MissingInputError as exc:
        print(f"missing-input: {exc}", file=sys.stderr)
        return harness.EXIT_CONFIG
    except ModelFormatError as exc:
        print(f"model-format-error: {exc}", file=sys.stderr)
        return harness.EXIT_CONFIG
    except CbfAdaptError as exc:
        print(f"runtime-error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return harness.EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
