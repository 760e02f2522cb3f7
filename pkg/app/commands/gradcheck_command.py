from __future__ import annotations

import argparse
import math

from app.config import GRADCHECK_TOLERANCE
from app.errors import GradcheckFailure, UsageError
from app.gradcheck import GROUPS, run_gradcheck


def grid_for(neurons: int) -> tuple[int, int]:
    """Most nearly square ``height x width`` with ``height * width == neurons``."""
    height = max(d for d in range(1, math.isqrt(neurons) + 1) if neurons % d == 0)
    return height, neurons // height


def cmd_gradcheck(args: argparse.Namespace) -> int:
    if args.neurons < 1 or args.channels < 1 or args.seeds < 1:
        raise UsageError("--neurons, --channels and --seeds must be positive")
    height, width = grid_for(args.neurons)
    results = run_gradcheck(
        seed=args.seed,
        seeds=args.seeds,
        height=height,
        width=width,
        in_channels=args.channels,
        out_channels=args.channels,
        network=not args.skip_network,
        tolerance=args.tolerance,
        perturb=args.perturb,
    )
    print("group,max_relative_error,status")
    for result in results:
        print(f"{result.group},{result.max_relative_error:.3e},{'pass' if result.passed else 'fail'}")

    failed = [result.group for result in results if not result.passed]
    if failed:
        raise GradcheckFailure(f"{', '.join(failed)} above tolerance {args.tolerance:g}")
    print(f"# all groups below {args.tolerance:g} over {args.seeds} seeds")
    return 0


def register(subparsers: argparse._SubParsersAction) -> None:
    parser = subparsers.add_parser("gradcheck", help="compare analytic gradients with finite differences")
    parser.add_argument("--seed", type=int, default=0, help="first seed")
    parser.add_argument("--seeds", type=int, default=20, help="number of consecutive seeds")
    parser.add_argument("--neurons", type=int, default=16, help="n, laid out as a near-square grid")
    parser.add_argument("--channels", type=int, default=8, help="N = M")
    parser.add_argument("--tolerance", type=float, default=GRADCHECK_TOLERANCE)
    parser.add_argument("--skip-network", action="store_true", help="only the operator and predictor groups")
    parser.add_argument("--perturb", choices=GROUPS, help=argparse.SUPPRESS)
    parser.set_defaults(handler=cmd_gradcheck)
