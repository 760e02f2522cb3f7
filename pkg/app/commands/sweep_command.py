from __future__ import annotations

import argparse
from pathlib import Path

from app.ablation import sweep, sweep_lines, write_lines
from app.commands.common import (
    add_common_flags,
    echo_run_config,
    load_run_config,
    parse_int_list,
    save_run_config,
)
from app.dataset import load_dataset


def cmd_sweep(args: argparse.Namespace) -> int:
    layers = parse_int_list(args.cdp_layers, "--cdp-layers")
    features = parse_int_list(args.cdp_features, "--cdp-features")
    cfg = load_run_config(args)
    echo_run_config(cfg)
    dataset = load_dataset(args.data)
    lines = sweep_lines(sweep(cfg, dataset, layers, features))
    for line in lines:
        print(line)
    if args.out:
        write_lines(lines, args.out)
        save_run_config(cfg, Path(args.out).parent)
    return 0


def register(subparsers: argparse._SubParsersAction) -> None:
    parser = subparsers.add_parser("sweep", help="vary the dependency predictor's depth and width")
    add_common_flags(parser, mode=False)
    parser.add_argument("--data", required=True, help="dataset directory")
    parser.add_argument("--cdp-layers", default="1,2,3,4", help="K_l values, comma-separated")
    parser.add_argument("--cdp-features", default="8,16,32", help="K_f values, comma-separated")
    parser.add_argument("--out", help="CSV path for the table")
    parser.set_defaults(handler=cmd_sweep)
