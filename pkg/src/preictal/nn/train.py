"""Mini-batch training with seeded shuffling and early stopping on validation loss."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from ..dataset import LabeledWindow
from .losses import FocalLossConfig, focal_loss_batch, inverse_frequency_alpha
from .model import SensorModel, _all_arrays, _forward, backward_batch, parameters
from .optim import AdamState, TrainConfig, adam_step
from .ops import softmax

EVAL_CHUNK = 256


@dataclass
class TrainReport:
    epochs: list[int] = field(default_factory=list)
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    val_accuracy: list[float] = field(default_factory=list)
    best_epoch: int = 0


def stack_windows(windows: list[LabeledWindow]) -> tuple[np.ndarray, np.ndarray]:
    xs = np.stack([w.data for w in windows])
    ys = np.array([int(w.label) for w in windows])
    return xs, ys


def evaluate(
    model: SensorModel, xs: np.ndarray, ys: np.ndarray, loss_cfg: FocalLossConfig
) -> tuple[float, float]:
    """(mean focal loss, accuracy) in inference mode, chunked to bound memory."""
    prev_mode = model.mode
    model.mode = "inference"
    losses = []
    correct = 0
    for i in range(0, len(xs), EVAL_CHUNK):
        logits, _ = _forward(model, xs[i:i + EVAL_CHUNK], keep_cache=False)
        probs = softmax(logits)
        losses.append(focal_loss_batch(probs, ys[i:i + EVAL_CHUNK], loss_cfg))
        correct += int((probs.argmax(axis=1) == ys[i:i + EVAL_CHUNK]).sum())
    model.mode = prev_mode
    return float(np.concatenate(losses).mean()), correct / len(xs)


def train(
    model: SensorModel,
    train_windows: list[LabeledWindow],
    val_windows: list[LabeledWindow],
    loss_cfg: Optional[FocalLossConfig] = None,
    train_cfg: Optional[TrainConfig] = None,
) -> tuple[SensorModel, TrainReport]:
    """Train in place; returns the model restored to its best-validation state.

    When `loss_cfg` is omitted, alpha weights are set to the inverse class
    frequency of the training windows (normalized to max 1).  Early stopping
    keeps the snapshot with the lowest validation focal loss and gives up
    after `patience` epochs without improvement.
    """
    if not train_windows or not val_windows:
        raise ValueError("train and validation window sets must be non-empty")
    train_cfg = train_cfg or TrainConfig()
    expected = (model.in_channels, model.window_samples)
    for w in (*train_windows, *val_windows):
        if w.data.shape != expected:
            raise ValueError(
                f"window shape {w.data.shape} does not match the {model.sensor.value} "
                f"model input {expected}; is the data from the right sensor?"
            )
    xs, ys = stack_windows(train_windows)
    xv, yv = stack_windows(val_windows)
    if loss_cfg is None:
        loss_cfg = FocalLossConfig(alpha=inverse_frequency_alpha(ys))

    rng = np.random.default_rng(train_cfg.seed)
    params = [arr for _, arr in parameters(model)]
    names = [name for name, _ in parameters(model)]
    state = AdamState.for_params(params)
    report = TrainReport()
    best_val = np.inf
    best_snapshot = None
    bad_epochs = 0

    model.mode = "train"
    for epoch in range(1, train_cfg.max_epochs + 1):
        order = rng.permutation(len(xs))
        batch_losses = []
        batch_sizes = []
        for i in range(0, len(order), train_cfg.batch_size):
            idx = order[i:i + train_cfg.batch_size]
            loss, grads = backward_batch(model, xs[idx], ys[idx], loss_cfg)
            adam_step(params, [grads[n] for n in names], state, train_cfg)
            batch_losses.append(loss)
            batch_sizes.append(len(idx))
        train_loss = float(np.average(batch_losses, weights=batch_sizes))
        val_loss, val_acc = evaluate(model, xv, yv, loss_cfg)
        report.epochs.append(epoch)
        report.train_loss.append(train_loss)
        report.val_loss.append(val_loss)
        report.val_accuracy.append(val_acc)
        if val_loss < best_val:
            best_val = val_loss
            best_snapshot = [a.copy() for a in _all_arrays(model)]
            report.best_epoch = epoch
            bad_epochs = 0
        else:
            bad_epochs += 1
            if bad_epochs >= train_cfg.patience:
                break

    if best_snapshot is not None:
        for arr, saved in zip(_all_arrays(model), best_snapshot):
            arr[...] = saved
    model.mode = "inference"
    return model, report


def write_train_report(report: TrainReport, path: Path | str) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "train_loss", "val_loss", "val_accuracy"])
        for row in zip(report.epochs, report.train_loss, report.val_loss,
                       report.val_accuracy):
            writer.writerow(row)
