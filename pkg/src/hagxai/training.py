"""Training loop for the eight learnable saliency parameters.

Plain Adam on minibatches with an exponential learning-rate decay,
optional early stopping on the validation loss (best parameters are
restored), and deterministic five-fold cross-validation.  Everything is
reproducible bit-for-bit from the config seed: the shuffle stream is
seeded, gradients accumulate in sample order with float64 arithmetic,
and fold assignment is a pure function of (seed, fold count).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError
from .hag import HagParams, default_normalization, hag_loss_and_grad, _forward_engine, unify_branches
from .metrics import pcc

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass(frozen=True)
class TrainConfig:
    """Optimization recipe; defaults follow the detection setup."""

    task: str = "detection"
    batch_size: int = 30
    max_epochs: int = 120
    lr_init: float = 0.05
    lr_final: float = 0.005
    lr_decay_epochs: int = 120
    early_stop_patience: int | None = 30
    folds: int = 5
    seed: int = 0

    @classmethod
    def for_task(cls, task: str, **overrides) -> "TrainConfig":
        """Task defaults: detection = batch 30 / 120 epochs / patience 30;
        classification = batch 144 / 200 epochs / no early stopping."""
        if task == "detection":
            base = dict(task=task, batch_size=30, max_epochs=120, early_stop_patience=30)
        elif task == "classification":
            base = dict(task=task, batch_size=144, max_epochs=200, early_stop_patience=None)
        else:
            raise ValueError(f"unknown task {task!r}")
        base.update(overrides)
        return cls(**base)


def lr_schedule(config: TrainConfig, epoch: int) -> float:
    """Exponential decay from lr_init to lr_final over lr_decay_epochs.

    ``lr(0) == lr_init`` and ``lr(lr_decay_epochs) == lr_final`` exactly;
    the rate is held at lr_final afterwards.
    """
    frac = min(epoch, config.lr_decay_epochs) / config.lr_decay_epochs
    return config.lr_init * (config.lr_final / config.lr_init) ** frac


@dataclass
class AdamState:
    """First/second moment estimates for the 8-parameter vector."""

    first_moment: np.ndarray = field(default_factory=lambda: np.zeros(8))
    second_moment: np.ndarray = field(default_factory=lambda: np.zeros(8))
    step_count: int = 0
    beta1: float = ADAM_BETA1
    beta2: float = ADAM_BETA2
    eps: float = ADAM_EPS


def adam_step(params: HagParams, grads, state: AdamState, lr: float) -> tuple[HagParams, AdamState]:
    """One bias-corrected Adam update; returns new params and state."""
    g = np.asarray(grads, dtype=np.float64)
    t = state.step_count + 1
    m = state.beta1 * state.first_moment + (1 - state.beta1) * g
    v = state.beta2 * state.second_moment + (1 - state.beta2) * g * g
    m_hat = m / (1 - state.beta1**t)
    v_hat = v / (1 - state.beta2**t)
    update = lr * m_hat / (np.sqrt(v_hat) + state.eps)
    new_params = params.with_vector(params.to_vector() - update)
    new_state = AdamState(first_moment=m, second_moment=v, step_count=t, beta1=state.beta1, beta2=state.beta2, eps=state.eps)
    return new_params, new_state


@dataclass
class TrainRecord:
    """Per-fold training trace and outcome."""

    fold_index: int
    epochs: list = field(default_factory=list)  # dicts: epoch, train_loss, val_loss, params
    final_params: HagParams | None = None
    val_loss: float = math.nan
    val_pcc: float = math.nan
    stopped_epoch: int = -1
    val_indices: list = field(default_factory=list)
    test_loss: float | None = None
    test_pcc: float | None = None
    degenerate_samples: int = 0


def _target_array(target) -> np.ndarray:
    return np.asarray(getattr(target, "map", target), dtype=np.float64)


def _prepare(dataset, task):
    """Unify branches, materialize targets, and reject degenerate data."""
    if not dataset:
        raise DataError("training dataset is empty")
    prepared = []
    n_constant = 0
    for bundle, target in dataset:
        arr = _target_array(target)
        if arr.max() == arr.min():
            n_constant += 1
        prepared.append((unify_branches(bundle), arr))
    if n_constant == len(prepared):
        raise DataError("all targets are constant maps; the correlation objective is undefined")
    return prepared


def evaluate(samples, params: HagParams, task: str) -> tuple[float, float]:
    """Mean loss and mean correlation of the forward pass against targets.

    Samples whose saliency or target is constant contribute their loss
    (with the correlation term substituted) but are skipped in the mean
    correlation.
    """
    normalization = default_normalization(task)
    losses, pccs = [], []
    for bundle, target in samples:
        saliency, _ = _forward_engine(bundle, params, task, normalization, out_hw=target.shape)
        from .hag import _loss_parts

        loss, _, flagged = _loss_parts(saliency, target)
        losses.append(loss)
        if not flagged:
            pccs.append(pcc(saliency, target))
    mean_pcc = float(np.mean(pccs)) if pccs else math.nan
    return float(np.mean(losses)), mean_pcc


def train(dataset, config: TrainConfig, val_indices=None, fold_index: int = 0) -> tuple[HagParams, TrainRecord]:
    """Minibatched Adam training with the exponential LR schedule.

    ``dataset`` is a list of (bundle, target) pairs; targets may be
    attention maps or arrays and set the resolution of the forward pass.
    Without explicit ``val_indices`` a deterministic 1/folds share is
    held out (a single-sample dataset trains and validates on itself).
    With early stopping configured, training halts once the validation
    loss has not improved for ``early_stop_patience`` consecutive epochs
    and the best-validation parameters are restored.
    """
    samples = _prepare(dataset, config.task)
    n = len(samples)
    rng = np.random.default_rng([config.seed, fold_index])

    if val_indices is None:
        order = rng.permutation(n)
        n_val = max(1, n // config.folds) if n > 1 else 0
        val_indices = sorted(int(i) for i in order[:n_val])
    val_set = [samples[i] for i in val_indices]
    train_indices = [i for i in range(n) if i not in set(val_indices)]
    if not train_indices:
        train_indices = list(range(n))
    train_set = [samples[i] for i in train_indices]

    params = HagParams.init(config.task)
    state = AdamState()
    normalization = default_normalization(config.task)

    record = TrainRecord(fold_index=fold_index, val_indices=list(val_indices))
    best_loss = math.inf
    best_params = params
    non_improving = 0
    stopped_epoch = config.max_epochs - 1

    for epoch in range(config.max_epochs):
        lr = lr_schedule(config, epoch)
        epoch_order = rng.permutation(len(train_set))
        batch_losses = []
        for start in range(0, len(epoch_order), config.batch_size):
            batch = epoch_order[start : start + config.batch_size]
            grad_sum = np.zeros(8)
            loss_sum = 0.0
            for idx in batch:
                bundle, target = train_set[idx]
                loss, grad, flagged = hag_loss_and_grad(bundle, params, target, config.task, normalization)
                grad_sum += grad
                loss_sum += loss
                record.degenerate_samples += int(flagged)
            params, state = adam_step(params, grad_sum / len(batch), state, lr)
            batch_losses.append(loss_sum / len(batch))

        train_loss = float(np.mean(batch_losses))
        if val_set:
            val_loss, _ = evaluate(val_set, params, config.task)
        else:
            val_loss = math.nan
        record.epochs.append(
            {"epoch": epoch, "train_loss": train_loss, "val_loss": val_loss, "params": params.to_vector().tolist()}
        )

        if val_set and config.early_stop_patience is not None:
            if val_loss < best_loss:
                best_loss = val_loss
                best_params = params
                non_improving = 0
            else:
                non_improving += 1
                if non_improving >= config.early_stop_patience:
                    stopped_epoch = epoch
                    break
        elif val_set and val_loss < best_loss:
            best_loss = val_loss
            best_params = params
        stopped_epoch = epoch

    final_params = best_params if (val_set and config.early_stop_patience is not None) else params
    record.final_params = final_params
    record.stopped_epoch = stopped_epoch
    if val_set:
        record.val_loss, record.val_pcc = evaluate(val_set, final_params, config.task)
    return final_params, record


def fold_assignments(n: int, folds: int, seed: int) -> list[list[int]]:
    """Deterministic disjoint fold index lists covering range(n)."""
    if folds < 2:
        raise DataError("cross-validation needs at least 2 folds")
    if n < folds:
        raise DataError(f"dataset of {n} samples cannot be split into {folds} folds")
    order = np.random.default_rng(seed).permutation(n)
    return [sorted(int(i) for i in chunk) for chunk in np.array_split(order, folds)]


def cross_validate(dataset, config: TrainConfig, test_dataset=None) -> list[TrainRecord]:
    """Train once per fold; each fold validates on its held-out share.

    When a separate ``test_dataset`` is supplied, every fold's parameters
    are also evaluated on it.  Fold assignment, shuffling, and evaluation
    are deterministic functions of the config seed.
    """
    samples_for_split = list(dataset)
    folds = fold_assignments(len(samples_for_split), config.folds, config.seed)
    test_samples = _prepare(test_dataset, config.task) if test_dataset else None
    records = []
    for fold_index, val_idx in enumerate(folds):
        params, record = train(dataset, config, val_indices=val_idx, fold_index=fold_index)
        if test_samples is not None:
            record.test_loss, record.test_pcc = evaluate(test_samples, params, config.task)
        records.append(record)
    return records


def summarize_folds(records) -> dict:
    """Mean validation (and test, when present) numbers over folds."""
    summary = {
        "folds": len(records),
        "mean_val_loss": float(np.mean([r.val_loss for r in records])),
        "mean_val_pcc": float(np.mean([r.val_pcc for r in records])),
    }
    if records and records[0].test_loss is not None:
        summary["mean_test_loss"] = float(np.mean([r.test_loss for r in records]))
        summary["mean_test_pcc"] = float(np.mean([r.test_pcc for r in records]))
    return summary


def write_history_csv(record: TrainRecord, path) -> Path:
    """Persist one fold's (epoch, train_loss, val_loss) history."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "train_loss", "val_loss"])
        for row in record.epochs:
            writer.writerow([row["epoch"], repr(row["train_loss"]), repr(row["val_loss"])])
    return path
