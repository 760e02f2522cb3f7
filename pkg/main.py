"""Command-line entry point: ``sca-seg <command> [options]``."""

from __future__ import annotations

import argparse
import sys
from typing import List, Optional

from app.commands import (
    ablate_command,
    eval_command,
    gen_command,
    gradcheck_command,
    masks_command,
    sweep_command,
    train_command,
)
from app.errors import ScaError
from app.log import configure_logging

COMMANDS = (
    gen_command,
    train_command,
    eval_command,
    ablate_command,
    gradcheck_command,
    masks_command,
    sweep_command,
)


def _error_line(category: str, exc: object) -> str:
    message = " ".join(str(exc).split())
    return f"ERROR {category}: {message}"


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # type: ignore[override]
        print(_error_line("usage", message), file=sys.stderr)
        raise SystemExit(1)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="sca-seg",
        description="Selective context aggregation for segmentation at desk scale.",
    )
    parser.add_argument("--log-level", help="DEBUG, INFO, WARNING or ERROR")
    subparsers = parser.add_subparsers(dest="command", required=True)
    for command in COMMANDS:
        command.register(subparsers)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.log_level:
        configure_logging(args.log_level.upper())
    else:
        configure_logging()
    try:
        return args.handler(args)
    except ScaError as exc:
        print(_error_line(exc.category, exc), file=sys.stderr)
    except OSError as exc:
        print(_error_line("io", exc), file=sys.stderr)
    return 1


if __name__ == "__main__":
    sys.exit(main())
