"""Mini-batch training with Adam, gradient clipping and early stopping."""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .autograd import Parameter, Tape
from .checkpoint import Checkpoint
from .config import TrainConfig
from .data import Batch, ConfigError, Dataset, make_batches
from .metrics import accuracy, safe_auc
from .model import Forward, SparseKT

log = logging.getLogger(__name__)

LOG_FIELDS = ("epoch", "train_loss", "valid_auc", "valid_acc", "seconds")


class NumericError(ArithmeticError):
    """Training produced a non-finite quantity."""


def adam_step(param, grad, m, v, lr: float, t: int, beta1=0.9, beta2=0.999, eps=1e-8, name: str = "?"):
    """One bias-corrected Adam update; returns ``(param, m, v)``."""
    if t < 1:
        raise ValueError("Adam step counter starts at 1")
    if not np.all(np.isfinite(grad)):
        raise NumericError(f"non-finite gradient in {name} at step {t}")
    m = beta1 * m + (1.0 - beta1) * grad
    v = beta2 * v + (1.0 - beta2) * grad * grad
    m_hat = m / (1.0 - beta1**t)
    v_hat = v / (1.0 - beta2**t)
    return param - lr * m_hat / (np.sqrt(v_hat) + eps), m, v


class Adam:
    def __init__(self, params: list[Parameter], lr: float, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = {p.name: np.zeros_like(p.data) for p in params}
        self.v = {p.name: np.zeros_like(p.data) for p in params}

    def step(self) -> None:
        self.t += 1
        for p in self.params:
            grad = p.grad if p.grad is not None else np.zeros_like(p.data)
            p.data, self.m[p.name], self.v[p.name] = adam_step(
                p.data, grad, self.m[p.name], self.v[p.name], self.lr, self.t,
                self.beta1, self.beta2, self.eps, name=p.name,
            )

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()

    def moments(self) -> dict[str, dict[str, np.ndarray]]:
        return {"adam.m": {k: a.copy() for k, a in self.m.items()}, "adam.v": {k: a.copy() for k, a in self.v.items()}}


def clip_grad_norm(params: list[Parameter], max_norm: float) -> float:
    """Rescale gradients in place to a global L2 norm of at most ``max_norm``."""
    total = float(np.sqrt(sum(float(np.sum(p.grad**2)) for p in params if p.grad is not None)))
    if total > max_norm:
        scale = max_norm / total
        for p in params:
            if p.grad is not None:
                p.grad = p.grad * scale
    return total


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    valid_auc: float | None
    valid_acc: float | None
    seconds: float

    def row(self) -> list:
        return [self.epoch, repr(self.train_loss), _fmt(self.valid_auc), _fmt(self.valid_acc), f"{self.seconds:.3f}"]


def _fmt(x: float | None) -> str:
    return "" if x is None else repr(x)


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    model: SparseKT
    log: list[EpochRecord]
    steps: int
    clip_events: int
    stopped_early: bool
    final_state: dict[str, np.ndarray] = field(repr=False, default_factory=dict)


@dataclass
class Evaluation:
    auc: float | None
    accuracy: float
    loss: float
    predictions: list[np.ndarray]
    labels: list[np.ndarray]
    student_ids: list[str]


def write_log(records: list[EpochRecord], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(LOG_FIELDS)
        writer.writerows(r.row() for r in records)


def evaluate(model: SparseKT | Checkpoint, dataset: Dataset, batch_size: int = 128) -> Evaluation:
    """AUC, accuracy and mean BCE over every position with history."""
    if isinstance(model, Checkpoint):
        model = model.build_model()
    preds, labels, sids = [], [], []
    loss_sum = 0.0
    for batch in make_batches(dataset, batch_size, max_len=model.config.max_len):
        fwd = model.forward(batch)
        probs = fwd.probs.data
        targets = batch.target_mask
        if fwd.loss is not None:
            loss_sum += fwd.loss.item() * targets.sum()
        for row in range(len(batch.student_ids)):
            mask = targets[row]
            preds.append(probs[row][mask])
            labels.append(batch.responses[row][mask])
            sids.append(batch.student_ids[row])
    flat_p = np.concatenate(preds) if preds else np.zeros(0)
    flat_y = np.concatenate(labels) if labels else np.zeros(0)
    if flat_p.size == 0:
        raise ConfigError("dataset has no positions to evaluate")
    return Evaluation(
        auc=safe_auc(flat_p, flat_y),
        accuracy=accuracy(flat_p, flat_y),
        loss=loss_sum / flat_p.size,
        predictions=preds,
        labels=labels,
        student_ids=sids,
    )


BatchHook = Callable[[Batch, Forward], None]


def train(
    dataset: Dataset,
    config: TrainConfig,
    valid: Dataset | None = None,
    hook: BatchHook | None = None,
) -> TrainResult:
    """Fit a model on ``dataset``, keeping the best-validation-AUC weights.

    ``valid`` defaults to ``dataset`` itself.  Everything random (init,
    batch order, dropout) draws from one generator seeded by
    ``config.seed``, so identical inputs give identical logs.
    """
    if dataset.num_predictions == 0:
        raise ConfigError("training data has no positions with history")
    valid = dataset if valid is None else valid
    rng = np.random.default_rng(config.seed)
    model = SparseKT(config, dataset.meta, rng)
    params = model.parameters()
    opt = Adam(params, config.lr, config.beta1, config.beta2, config.adam_eps)

    records: list[EpochRecord] = []
    best: Checkpoint | None = None
    best_auc = -np.inf
    since_best = 0
    clip_events = 0
    stopped_early = False
    for epoch in range(1, config.max_epochs + 1):
        started = time.perf_counter()
        loss_sum, count = 0.0, 0
        for batch in make_batches(dataset, config.batch_size, config.max_len, rng=rng):
            targets = int(batch.target_mask.sum())
            if targets == 0:
                continue
            with Tape() as tape:
                fwd = model.forward(batch, rng=rng if config.dropout > 0 else None)
            tape.backward(fwd.loss)
            norm = clip_grad_norm(params, config.clip_norm)
            if norm > config.clip_norm:
                clip_events += 1
                log.info("step %d: gradient norm %.3f clipped to %.1f", opt.t + 1, norm, config.clip_norm)
            if not np.isfinite(fwd.loss.item()):
                raise NumericError(f"non-finite loss at step {opt.t + 1}")
            opt.step()
            opt.zero_grad()
            loss_sum += fwd.loss.item() * targets
            count += targets
            if hook is not None:
                hook(batch, fwd)
            if config.max_steps and opt.t >= config.max_steps:
                break
        ev = evaluate(model, valid)
        rec = EpochRecord(epoch, loss_sum / count, ev.auc, ev.accuracy, time.perf_counter() - started)
        records.append(rec)
        log.info("epoch %d loss %.4f valid auc %s acc %.4f", epoch, rec.train_loss, rec.valid_auc, rec.valid_acc)

        score = -np.inf if ev.auc is None else ev.auc
        if best is None or score > best_auc:
            best_auc = score
            since_best = 0
            best = Checkpoint(
                config=config, meta=dataset.meta, params=model.state(), moments=opt.moments(),
                step=opt.t, epoch=epoch, valid_auc=ev.auc, rng_state=rng.bit_generator.state,
            )
        else:
            since_best += 1
        if config.max_steps and opt.t >= config.max_steps:
            break
        if since_best >= config.patience:
            stopped_early = epoch < config.max_epochs
            break

    final_state = model.state()
    model.load_state(best.params)
    if clip_events:
        log.warning("gradient clipping triggered %d times", clip_events)
    return TrainResult(best, model, records, opt.t, clip_events, stopped_early, final_state)
