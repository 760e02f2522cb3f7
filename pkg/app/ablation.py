"""Mode comparison and predictor hyper-parameter sweeps on shared data and seeds."""

from __future__ import annotations

import csv
from pathlib import Path
from typing import Iterable, List, Sequence, Tuple, Union

import numpy as np

from app.dataset import Dataset
from app.errors import DataError
from app.log import get_logger
from app.schemas import MODES, AblationRow, Metrics, RunConfig, SweepRow
from app.segnet import build_network
from app.training import evaluate, train

logger = get_logger("ablate")


def run_once(cfg: RunConfig, dataset: Dataset, seed: int) -> Metrics:
    """Train from scratch with ``seed`` and evaluate on the test split."""
    if not dataset.test:
        raise DataError("the dataset has no test split to evaluate on")
    cfg = cfg.model_copy(update={"seed": seed})
    net = build_network(cfg.network(), seed)
    net, _ = train(net, dataset.train, cfg.training())
    return evaluate(net, dataset.test, cfg.threads)


def mean_scores(results: Sequence[Metrics]) -> Tuple[float, float, float]:
    return (
        float(np.mean([m.ppa for m in results])),
        float(np.mean([m.caa for m in results])),
        float(np.mean([m.miou for m in results])),
    )


def seeds_for(cfg: RunConfig, repeats: int) -> List[int]:
    return [cfg.seed + r for r in range(repeats)]


def ablate(cfg: RunConfig, dataset: Dataset, repeats: int = 1) -> List[AblationRow]:
    """One row per mode; every mode sees the same data and the same seeds."""
    rows = []
    for mode in MODES:
        results = []
        for seed in seeds_for(cfg, repeats):
            logger.info("mode %s seed %d", mode, seed)
            results.append(run_once(cfg.model_copy(update={"mode": mode}), dataset, seed))
        ppa, caa, miou = mean_scores(results)
        rows.append(AblationRow(mode=mode, ppa=ppa, caa=caa, miou=miou))
        logger.info("mode %s ppa %.4f caa %.4f miou %.4f", mode, ppa, caa, miou)
    return rows


def sweep(
    cfg: RunConfig,
    dataset: Dataset,
    cdp_layers: Iterable[int],
    cdp_features: Iterable[int],
) -> List[SweepRow]:
    """Vary K_l with K_f fixed, then K_f with K_l fixed, always in sca mode."""
    rows = []
    base = cfg.model_copy(update={"mode": "sca"})
    for knob, values in (("cdp_layers", cdp_layers), ("cdp_features", cdp_features)):
        for value in values:
            metrics = run_once(base.model_copy(update={knob: value}), dataset, cfg.seed)
            rows.append(SweepRow(knob=knob, value=value, ppa=metrics.ppa, caa=metrics.caa, miou=metrics.miou))
            logger.info("%s=%d ppa %.4f caa %.4f miou %.4f", knob, value, metrics.ppa, metrics.caa, metrics.miou)
    return rows


def format_rows(header: Sequence[str], rows: Iterable[Sequence[object]]) -> List[str]:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(f"{v:.6f}" if isinstance(v, float) else str(v) for v in row))
    return lines


def ablation_lines(rows: Sequence[AblationRow]) -> List[str]:
    return format_rows(["mode", "ppa", "caa", "miou"], ((r.mode, r.ppa, r.caa, r.miou) for r in rows))


def sweep_lines(rows: Sequence[SweepRow]) -> List[str]:
    return format_rows(
        ["knob", "value", "ppa", "caa", "miou"], ((r.knob, r.value, r.ppa, r.caa, r.miou) for r in rows)
    )


def write_lines(lines: Sequence[str], path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        for line in lines:
            writer.writerow(line.split(","))
    return path
