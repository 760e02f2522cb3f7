from __future__ import annotations

import argparse
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from app.commands.common import parse_int_list
from app.dataset import load_sample
from app.errors import UsageError
from app.log import get_logger
from app.netpbm import write_pgm
from app.segnet import dependency_mask, grid_neurons, load_checkpoint, region_dependency_mask

logger = get_logger("masks")


def mask_to_gray(mask: np.ndarray) -> np.ndarray:
    """``round(255 * mask)`` as an ``(h, w)`` uint8 image."""
    return np.clip(np.rint(255.0 * mask[:, :, 0]), 0, 255).astype(np.uint8)


def region_neurons(region: Sequence[int], grid_shape: tuple[int, int]) -> List[int]:
    """Neuron indices inside the half-open box ``top,left,bottom,right`` of the neuron grid."""
    if len(region) != 4:
        raise UsageError(f"--region expects top,left,bottom,right, got {len(region)} values")
    top, left, bottom, right = region
    height, width = grid_shape
    if not (0 <= top < bottom <= height and 0 <= left < right <= width):
        raise UsageError(f"region {tuple(region)} is empty or outside the {height}x{width} neuron grid")
    return [row * width + col for row in range(top, bottom) for col in range(left, right)]


def cmd_masks(args: argparse.Namespace) -> int:
    net = load_checkpoint(args.checkpoint)
    image = load_sample(args.image).image
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    neurons: Optional[List[int]]
    if args.neurons == "grid":
        neurons = grid_neurons(net.config.neurons)
    elif args.neurons:
        neurons = parse_int_list(args.neurons, "--neurons")
    else:
        neurons = None
    if neurons is None and args.region is None:
        raise UsageError("give --neurons (a list or 'grid') and/or --region")

    for neuron in neurons or []:
        path = out / f"mask_{neuron}.pgm"
        write_pgm(path, mask_to_gray(dependency_mask(net, image, neuron)))
        logger.info("wrote %s", path)
    if args.region is not None:
        indices = region_neurons(parse_int_list(args.region, "--region"), net.config.grid_shape)
        path = out / "region.pgm"
        write_pgm(path, mask_to_gray(region_dependency_mask(net, image, indices)))
        logger.info("wrote %s (%d neurons)", path, len(indices))
    return 0


def register(subparsers: argparse._SubParsersAction) -> None:
    parser = subparsers.add_parser("masks", help="export dependency masks as PGM files")
    parser.add_argument("--checkpoint", required=True, help="checkpoint of an sca-mode network")
    parser.add_argument("--image", required=True, help="PPM image sized like the network input")
    parser.add_argument("--neurons", help="comma-separated neuron indices, or 'grid'")
    parser.add_argument("--region", help="top,left,bottom,right on the neuron grid (half-open)")
    parser.add_argument("--out", required=True, help="output directory")
    parser.set_defaults(handler=cmd_masks)
