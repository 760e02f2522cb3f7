from __future__ import annotations

import argparse

from app.config import DEFAULT_THREADS
from app.dataset import load_dataset
from app.errors import DataError
from app.log import get_logger
from app.schemas import Metrics
from app.segnet import load_checkpoint
from app.training import evaluate, write_metrics_csv

logger = get_logger("eval")


def log_metrics(metrics: Metrics) -> None:
    logger.info("ppa %.6f caa %.6f miou %.6f", metrics.ppa, metrics.caa, metrics.miou)
    for k, (accuracy, iou) in enumerate(zip(metrics.class_accuracy, metrics.class_iou)):
        shown_acc = "n/a" if accuracy is None else f"{accuracy:.4f}"
        shown_iou = "n/a" if iou is None else f"{iou:.4f}"
        logger.info("class %d accuracy %s iou %s", k, shown_acc, shown_iou)


def cmd_eval(args: argparse.Namespace) -> int:
    net = load_checkpoint(args.checkpoint)
    dataset = load_dataset(args.data)
    samples = dataset.splits.get(args.split)
    if not samples:
        raise DataError(f"dataset {args.data} has no {args.split!r} samples")
    if dataset.num_classes != net.config.num_classes:
        raise DataError(
            f"checkpoint predicts {net.config.num_classes} classes, dataset declares {dataset.num_classes}"
        )

    metrics = evaluate(net, samples, args.threads or DEFAULT_THREADS)
    log_metrics(metrics)
    if args.out:
        write_metrics_csv(metrics, args.out, label=net.config.mode)
        logger.info("wrote %s", args.out)
    return 0


def register(subparsers: argparse._SubParsersAction) -> None:
    parser = subparsers.add_parser("eval", help="evaluate a checkpoint on a dataset split")
    parser.add_argument("--checkpoint", required=True)
    parser.add_argument("--data", required=True, help="dataset directory")
    parser.add_argument("--split", default="test")
    parser.add_argument("--threads", type=int)
    parser.add_argument("--out", help="metrics CSV path")
    parser.set_defaults(handler=cmd_eval)
