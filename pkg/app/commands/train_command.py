from __future__ import annotations

import argparse
from pathlib import Path

from app.commands.common import add_common_flags, echo_run_config, load_run_config, save_run_config
from app.dataset import load_dataset
from app.errors import ConfigError
from app.log import get_logger
from app.segnet import build_network, parameter_count, save_checkpoint
from app.training import train, write_history_csv

logger = get_logger("train")


def cmd_train(args: argparse.Namespace) -> int:
    cfg = load_run_config(args)
    echo_run_config(cfg)
    dataset = load_dataset(args.data)
    if dataset.num_classes != cfg.num_classes:
        raise ConfigError(f"num_classes={cfg.num_classes} but the dataset declares {dataset.num_classes} classes")

    net = build_network(cfg.network(), cfg.seed)
    logger.info("mode %s, %d parameters, %d training samples", cfg.mode, parameter_count(net), len(dataset.train))
    net, history = train(net, dataset.train, cfg.training())

    checkpoint = save_checkpoint(net, args.out)
    history_path = Path(args.history) if args.history else checkpoint.with_suffix(".csv")
    write_history_csv(history, history_path)
    save_run_config(cfg, checkpoint.parent)
    logger.info("wrote %s and %s", checkpoint, history_path)
    return 0


def register(subparsers: argparse._SubParsersAction) -> None:
    parser = subparsers.add_parser("train", help="train a network and write an SCA1 checkpoint")
    add_common_flags(parser)
    parser.add_argument("--data", required=True, help="dataset directory")
    parser.add_argument("--out", required=True, help="checkpoint path")
    parser.add_argument("--history", help="history CSV path (default: checkpoint path with .csv)")
    parser.set_defaults(handler=cmd_train)
