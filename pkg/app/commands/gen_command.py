from __future__ import annotations

import argparse

from app.commands.common import add_common_flags, echo_run_config, load_run_config
from app.dataset import class_frequencies, save_dataset
from app.log import get_logger
from app.synthetic import generate

logger = get_logger("gen")


def cmd_gen(args: argparse.Namespace) -> int:
    cfg = load_run_config(args, seed_key="data_seed")
    echo_run_config(cfg)
    synth = cfg.synthesis()
    dataset = generate(synth)
    manifest = save_dataset(dataset, args.out)
    for split, samples in dataset.splits.items():
        freqs = class_frequencies(samples, dataset.num_classes)
        logger.info(
            "%s: %d samples, class frequencies %s",
            split,
            len(samples),
            " ".join(f"{freq:.4f}" for freq in freqs),
        )
    logger.info("wrote %s", manifest)
    return 0


def register(subparsers: argparse._SubParsersAction) -> None:
    parser = subparsers.add_parser("gen", help="generate the synthetic ambiguous-texture dataset")
    add_common_flags(parser, mode=False)
    parser.add_argument("--out", required=True, help="output dataset directory")
    parser.set_defaults(handler=cmd_gen)
