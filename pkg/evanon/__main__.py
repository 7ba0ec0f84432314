"""
Event Anonymization - Command Line Interface

This module provides the `evanon` command line. Every subcommand in the
command registry gets its own parser sharing the common options:
`--config FILE`, repeatable `--set key=value` and a handful of dedicated
flags. Can be run as: python -m evanon <command> [options]

Exit codes: 0 ok, 1 usage error, 2 data error, 3 numerical failure.

Functions:
- build_parser() - Argument parser with one subparser per registered command
- main() - Main entry point for command line execution
"""

from __future__ import annotations

import argparse
import logging
import sys
from typing import Any, Dict, List, Optional, Sequence

from . import handlers  # noqa: F401  (registers the command handlers)
from .command_registry import COMMAND_REGISTRY, validate_registry
from .commands import ALL_COMMANDS
from .config import log_level, resolve_run_config
from .errors import EvanonError, exit_code_for
from .report import format_summary

logger = logging.getLogger(__name__)

# Dedicated flags: (flag, RunConfig key, argparse options)
_FLAGS: List[tuple] = [
    ("--corpus", "corpus", {"help": "Corpus directory"}),
    ("--checkpoints", "checkpoints", {"help": "Checkpoint directory"}),
    ("--reports", "reports", {"help": "Report directory"}),
    ("--seed", "seed", {"type": int, "help": "Seed (fallback: EVANON_SEED)"}),
    ("--in", "events_in", {"help": "Input event file"}),
    ("--out", "events_out", {"help": "Output event file"}),
    ("--method", "method", {"choices": ["scramble", "discard"], "help": "Encryption baseline"}),
    ("--ratio", "ratio", {"type": float, "help": "Fraction of events encrypted"}),
    ("--epochs", "epochs", {"type": int, "help": "Joint-training epochs"}),
    ("--alpha", "alpha", {"type": float, "help": "Weight of L_struct"}),
    ("--beta", "beta", {"type": float, "help": "Weight of L_rec"}),
    ("--gamma", "gamma", {"type": float, "help": "Weight of L_reid"}),
    ("--contrast-threshold", "contrast_threshold", {"type": float, "help": "Simulator contrast threshold C"}),
    ("--split", "split", {"choices": ["train", "test"], "help": "Corpus split used by render"}),
    ("--window-index", "window_index", {"type": int, "help": "Window rendered by render"}),
]


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # type: ignore[override]
        self.print_usage(sys.stderr)
        print(f"evanon: usage error: {message}", file=sys.stderr)
        raise SystemExit(1)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="evanon",
        description="Learnable anonymization of event-camera voxel grids for person re-identification",
    )
    subparsers = parser.add_subparsers(dest="command", metavar="command", parser_class=_Parser)
    subparsers.required = True
    for name in sorted(COMMAND_REGISTRY):
        registration = COMMAND_REGISTRY[name]
        sub = subparsers.add_parser(name, help=registration.description, description=registration.description)
        sub.add_argument("--config", default=None, help="`key = value` configuration file")
        sub.add_argument(
            "--set",
            dest="overrides",
            action="append",
            default=[],
            metavar="KEY=VALUE",
            help="Override one configuration key (repeatable)",
        )
        for flag, key, options in _FLAGS:
            sub.add_argument(flag, dest=key, default=None, **options)
        if name == "encrypt-baseline":
            sub.add_argument("--decrypt", action="store_const", const=True, default=None, help="Invert scrambling")
    return parser


def _flags(args: argparse.Namespace) -> Dict[str, Any]:
    return {key: getattr(args, key, None) for _, key, _ in _FLAGS} | {"decrypt": getattr(args, "decrypt", None)}


def main(argv: Optional[Sequence[str]] = None) -> int:
    logging.basicConfig(
        level=getattr(logging, log_level(), logging.INFO),
        stream=sys.stderr,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    validate_registry(ALL_COMMANDS)
    args = build_parser().parse_args(argv)

    try:
        config = resolve_run_config(args.command, args.config, args.overrides, _flags(args))
    except EvanonError as e:
        print(f"evanon {args.command}: {e}", file=sys.stderr)
        return exit_code_for(e)

    result = handlers.run_command(config)
    if "error" in result:
        message = " ".join(str(result["error"]).split())
        print(f"evanon {args.command}: {result['type']}: {message}", file=sys.stderr)
        return int(result["exit_code"])

    print(format_summary(result["values"]))
    print(f"report: {result['report']}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
