"""Command-line entry point.

    contacthj <stage> --config PATH [--out DIR] [--threads K] [--seed U64]

Stages: audit, ergodic, sweep, solve, adjoint, mather, select, and ``run`` for
all of them in order. Exit codes: 0 success, 1 stage failure or FAIL verdict,
2 configuration error, 3 missing prerequisite artifact, 4 unwritable output.
"""

from __future__ import annotations

import argparse
import logging
import sys

from .config import load_config
from .errors import ConfigError, PrerequisiteError
from .pipeline import STAGES, Pipeline, StageFailure, check_writable

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_PREREQ, EXIT_OUTPUT = 0, 1, 2, 3, 4

def _u64(text: str) -> int:
    value = int(text, 0)
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return value


def _positive(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError("threads must be >= 1")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="contacthj",
                                     description="Vanishing-discount experiments for contact "
                                                 "Hamilton-Jacobi equations on the torus.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="stage", required=True)
    for name in STAGES + ("run",):
        p = sub.add_parser(name, help=f"run the {name} stage" if name != "run" else "run all stages")
        p.add_argument("--config", required=True, help="TOML experiment document")
        p.add_argument("--out", default=None, help="output directory (default: config 'output')")
        p.add_argument("--threads", type=_positive, default=1,
                       help="worker threads for independent solves")
        p.add_argument("--seed", type=_u64, default=None, help="override the config seed")
    return parser


def _report(stage: str, result, pipe: Pipeline) -> int:
    if stage == "audit":
        for item in result.items:
            print(f"{item.name}: {'PASS' if item.passed else 'FAIL'}")
        return EXIT_OK if result.passed else EXIT_FAIL
    if stage == "ergodic":
        print(f"{result.c:.6f}")
    elif stage == "select":
        for key, verdict in result.verdicts.items():
            print(f"{key}: {verdict}")
        return EXIT_OK if all(v == "PASS" for v in result.verdicts.values()) else EXIT_FAIL
    else:
        print(f"{stage}: wrote {pipe.out}")
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.seed is not None:
        cfg.seed = args.seed
    try:
        pipe = Pipeline(cfg, args.out, args.threads, args.seed)
        check_writable(pipe.out)
    except OSError as exc:
        print(f"output directory not writable: {exc}", file=sys.stderr)
        return EXIT_OUTPUT
    stages = STAGES if args.stage == "run" else (args.stage,)
    code = EXIT_OK
    for stage in stages:
        try:
            result = pipe.run_stage(stage)
        except PrerequisiteError as exc:
            print(f"{stage}: {exc}", file=sys.stderr)
            return EXIT_PREREQ
        except StageFailure as exc:
            print(f"stage {exc.stage} failed: {exc.cause}", file=sys.stderr)
            return EXIT_FAIL
        code = max(code, _report(stage, result, pipe))
    return code


if __name__ == "__main__":
    sys.exit(main())
