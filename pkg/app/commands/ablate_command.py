from __future__ import annotations

import argparse
from pathlib import Path

from app.ablation import ablate, ablation_lines, seeds_for, write_lines
from app.commands.common import add_common_flags, echo_run_config, load_run_config, save_run_config
from app.dataset import load_dataset
from app.errors import ConfigError


def cmd_ablate(args: argparse.Namespace) -> int:
    if args.repeats < 1:
        raise ConfigError(f"--repeats must be at least 1, got {args.repeats}")
    cfg = load_run_config(args)
    echo_run_config(cfg)
    dataset = load_dataset(args.data)
    rows = ablate(cfg, dataset, args.repeats)

    seeds = ",".join(str(seed) for seed in seeds_for(cfg, args.repeats))
    print(f"# seeds {seeds} shared by all modes; data {args.data}")
    lines = ablation_lines(rows)
    for line in lines:
        print(line)
    if args.out:
        write_lines(lines, args.out)
        save_run_config(cfg, Path(args.out).parent)
    return 0


def register(subparsers: argparse._SubParsersAction) -> None:
    parser = subparsers.add_parser("ablate", help="compare sca, baseline_no and baseline_ave on shared data and seeds")
    add_common_flags(parser, mode=False)
    parser.add_argument("--data", required=True, help="dataset directory")
    parser.add_argument("--repeats", type=int, default=1, help="average over seeds seed..seed+R-1")
    parser.add_argument("--out", help="CSV path for the table")
    parser.set_defaults(handler=cmd_ablate)
