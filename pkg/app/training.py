"""Training loop and evaluation metrics."""

from __future__ import annotations

import csv
import math
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from app.config import FREQUENT_MASS, IGNORE_LABEL, MAX_CLASS_WEIGHT
from app.dataset import Sample, check_labels, class_frequencies
from app.errors import DataError, DivergenceError, ShapeError, UsageError
from app.log import get_logger
from app.parallel import ordered_map
from app.schemas import EpochRecord, Metrics, TrainConfig
from app.segnet import Network, Params, backward, forward, parameter_groups, predict_labels
from app.tensor import OptimizerState, sgd_momentum_step, weighted_cross_entropy

logger = get_logger("train")

# log10 of an exact power of ten can land a hair above the integer
_CEIL_SLACK = 1e-9


def class_weights(freqs: Sequence[float], max_weight: float = MAX_CLASS_WEIGHT) -> np.ndarray:
    """``w_i = 2^ceil(log10(eta / f_i))`` clamped to ``[1, max_weight]``.

    ``eta`` is the frequency of the last class needed, in descending frequency
    order, to cover 85% of the pixels. Absent classes get ``max_weight``.
    """
    freqs = np.asarray(freqs, dtype=np.float64)
    if freqs.ndim != 1 or freqs.size == 0:
        raise DataError("class frequencies must be a non-empty vector")
    if np.any(freqs < 0) or not np.any(freqs > 0):
        raise DataError("class frequencies must be nonnegative with at least one positive entry")

    order = np.argsort(-freqs, kind="stable")
    cumulative = np.cumsum(freqs[order]) / freqs.sum()
    boundary = int(np.argmax(cumulative >= FREQUENT_MASS - 1e-12))
    eta = freqs[order[boundary]]

    weights = np.full(freqs.shape, max_weight)
    present = freqs > 0
    exponents = np.ceil(np.log10(eta / freqs[present]) - _CEIL_SLACK)
    weights[present] = np.clip(2.0**exponents, 1.0, max_weight)
    return weights


def poly_lr(base: float, iteration: int, max_iteration: int, power: float = 0.9) -> float:
    if max_iteration <= 0:
        raise UsageError(f"max_iteration must be positive, got {max_iteration}")
    if not 0 <= iteration <= max_iteration:
        raise UsageError(f"iteration {iteration} outside [0, {max_iteration}]")
    return base * (1.0 - iteration / max_iteration) ** power


def hflip(image: np.ndarray, labels: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Mirror columns: ``c -> W - 1 - c`` in both arrays."""
    return image[:, ::-1].copy(), labels[:, ::-1].copy()


def train_validation_split(samples: Sequence[Sample], seed: int) -> Tuple[List[Sample], List[Sample]]:
    """Seeded 90/10 split. A single sample validates on itself."""
    samples = list(samples)
    if len(samples) < 2:
        return samples, samples
    order = np.random.default_rng([seed, 9010]).permutation(len(samples))
    n_val = max(1, int(round(0.1 * len(samples))))
    val = [samples[i] for i in sorted(order[:n_val])]
    train = [samples[i] for i in sorted(order[n_val:])]
    return train, val


# -- metrics ----------------------------------------------------------------


def confusion_matrix(predictions: np.ndarray, labels: np.ndarray, num_classes: int) -> np.ndarray:
    if predictions.shape != labels.shape:
        raise ShapeError(f"predictions {predictions.shape} and labels {labels.shape} differ in shape")
    valid = labels != IGNORE_LABEL
    truth = labels[valid].astype(np.int64)
    guess = predictions[valid].astype(np.int64)
    for name, values in (("label", truth), ("prediction", guess)):
        if values.size and (values.min() < 0 or values.max() >= num_classes):
            raise DataError(f"{name} out of range for {num_classes} classes")
    return np.bincount(num_classes * truth + guess, minlength=num_classes * num_classes).reshape(
        num_classes, num_classes
    )


def metrics_from_confusion(confusion: np.ndarray) -> Metrics:
    confusion = np.asarray(confusion, dtype=np.int64)
    total = confusion.sum()
    hits = np.diag(confusion)
    truth = confusion.sum(axis=1)
    predicted = confusion.sum(axis=0)
    union = truth + predicted - hits

    accuracy = [float(h / t) if t > 0 else None for h, t in zip(hits, truth)]
    iou = [float(h / u) if u > 0 else None for h, u in zip(hits, union)]
    present_acc = [value for value in accuracy if value is not None]
    present_iou = [value for value in iou if value is not None]
    return Metrics(
        ppa=float(hits.sum() / total) if total else 0.0,
        caa=float(np.mean(present_acc)) if present_acc else 0.0,
        miou=float(np.mean(present_iou)) if present_iou else 0.0,
        class_accuracy=accuracy,
        class_iou=iou,
        confusion=confusion.tolist(),
    )


def evaluate(net: Network, samples: Sequence[Sample], threads: int = 1) -> Metrics:
    if not samples:
        raise DataError("cannot evaluate on an empty dataset")
    k = net.config.num_classes

    def sample_confusion(sample: Sample) -> np.ndarray:
        logits, _, _ = forward(net, sample.image)
        return confusion_matrix(predict_labels(logits), sample.labels, k)

    confusion = np.zeros((k, k), dtype=np.int64)
    for part in ordered_map(sample_confusion, samples, threads):
        confusion += part
    return metrics_from_confusion(confusion)


# -- training ---------------------------------------------------------------


def _sample_step(net: Network, weights: np.ndarray, image: np.ndarray, labels: np.ndarray) -> Tuple[float, Params]:
    logits, cache, _ = forward(net, image)
    loss, dlogits = weighted_cross_entropy(logits, labels, weights)
    return loss, backward(net, cache, dlogits)


def batch_gradient(
    net: Network,
    batch: Sequence[Tuple[np.ndarray, np.ndarray]],
    weights: np.ndarray,
    threads: int = 1,
) -> Tuple[float, Params]:
    """Mean loss and mean gradient over a batch, summed in batch order."""
    results = ordered_map(lambda item: _sample_step(net, weights, *item), batch, threads)
    total_loss = 0.0
    total: Params = {name: np.zeros_like(value) for name, value in net.params.items()}
    for loss, grads in results:
        total_loss += loss
        for name in total:
            total[name] += grads[name]
    scale = 1.0 / len(batch)
    return total_loss * scale, {name: value * scale for name, value in total.items()}


def train(
    net: Network, samples: Sequence[Sample], cfg: TrainConfig
) -> Tuple[Network, List[EpochRecord]]:
    """Momentum SGD with the poly schedule and two base rates.

    Encoder parameters use ``base_lr_encoder``; SCA, predictor and decoder
    parameters use ``base_lr_sca_and_decoder``. Each epoch draws a fresh
    order and a per-sample flip decision from the seed.
    """
    if not samples:
        raise DataError("cannot train on an empty dataset")
    expected = (net.config.image_height, net.config.image_width, net.config.in_channels)
    if samples[0].image.shape != expected:
        raise ShapeError(f"dataset images are {samples[0].image.shape}, network expects {expected}")

    k = net.config.num_classes
    for index, sample in enumerate(samples):
        check_labels(sample.labels, k, f"training sample {index}")
    train_set, val_set = train_validation_split(samples, cfg.seed)
    if cfg.reweight:
        weights = class_weights(class_frequencies(train_set, k))
    else:
        weights = np.ones(k)
    logger.info("class weights %s", ", ".join(f"{w:g}" for w in weights))

    base_rates = {"encoder": cfg.base_lr_encoder, "sca_and_decoder": cfg.base_lr_sca_and_decoder}
    groups = parameter_groups(net)
    batches_per_epoch = math.ceil(len(train_set) / cfg.batch_size)
    max_iteration = cfg.epochs * batches_per_epoch
    rng = np.random.default_rng([cfg.seed, 1])
    state = OptimizerState.zeros_like(net.params, cfg.momentum)
    history: List[EpochRecord] = []

    iteration = 0
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(len(train_set))
        flips = rng.random(len(train_set)) < 0.5
        epoch_loss = 0.0
        for start in range(0, len(train_set), cfg.batch_size):
            batch = []
            for index in order[start : start + cfg.batch_size]:
                sample = train_set[index]
                if flips[index]:
                    batch.append(hflip(sample.image, sample.labels))
                else:
                    batch.append((sample.image, sample.labels))

            try:
                loss, grads = batch_gradient(net, batch, weights, cfg.threads)
            except DataError as exc:
                # labels are checked above, so a data error here comes from the parameters
                raise DivergenceError(f"{exc} at iteration {iteration} (epoch {epoch})") from exc
            if not math.isfinite(loss):
                raise DivergenceError(f"loss became {loss} at iteration {iteration} (epoch {epoch})")
            rates: Dict[str, float] = {
                name: poly_lr(base_rates[group], iteration, max_iteration, cfg.poly_power)
                for name, group in groups.items()
            }
            new_params, state = sgd_momentum_step(net.params, grads, state, rates)
            blown = [name for name, value in new_params.items() if not np.all(np.isfinite(value))]
            if blown:
                raise DivergenceError(
                    f"non-finite parameters ({', '.join(blown)}) after iteration {iteration} (epoch {epoch})"
                )
            net = net.with_params(new_params)
            epoch_loss += loss
            iteration += 1

        try:
            metrics = evaluate(net, val_set, cfg.threads)
        except DataError as exc:
            raise DivergenceError(f"{exc} at iteration {iteration} (epoch {epoch} validation)") from exc
        record = EpochRecord(epoch=epoch, mean_loss=epoch_loss / batches_per_epoch, metrics=metrics)
        history.append(record)
        logger.info(
            "epoch %d/%d loss %.6f ppa %.4f caa %.4f miou %.4f",
            epoch,
            cfg.epochs,
            record.mean_loss,
            metrics.ppa,
            metrics.caa,
            metrics.miou,
        )
    return net, history


def format_history(history: Sequence[EpochRecord]) -> List[List[str]]:
    return [
        [
            str(record.epoch),
            f"{record.mean_loss:.6f}",
            f"{record.metrics.ppa:.6f}",
            f"{record.metrics.caa:.6f}",
            f"{record.metrics.miou:.6f}",
        ]
        for record in history
    ]


def write_history_csv(history: Sequence[EpochRecord], path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(["epoch", "mean_loss", "ppa", "caa", "miou"])
        writer.writerows(format_history(history))
    return path


def write_metrics_csv(metrics: Metrics, path: Union[str, Path], label: Optional[str] = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        header = ["ppa", "caa", "miou"]
        row = [f"{metrics.ppa:.6f}", f"{metrics.caa:.6f}", f"{metrics.miou:.6f}"]
        if label is not None:
            header.insert(0, "name")
            row.insert(0, label)
        writer.writerow(header)
        writer.writerow(row)
    return path
