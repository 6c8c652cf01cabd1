"""KC-to-KC attention relations and the sensitivity sweep over ``k``."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .config import TrainConfig
from .data import Batch, Dataset, make_batches
from .model import Forward, SparseKT
from .training import evaluate, train

log = logging.getLogger(__name__)

DEFAULT_GRIDS = {
    "soft": [round(0.1 * i, 1) for i in range(1, 11)],
    "topk": list(range(1, 11)),
}


def min_max_normalize(matrix: np.ndarray) -> np.ndarray:
    """Map to ``[0, 1]``; a constant matrix maps to all zeros."""
    matrix = np.asarray(matrix, dtype=float)
    lo, hi = matrix.min(), matrix.max()
    if hi == lo:
        return np.zeros_like(matrix)
    return (matrix - lo) / (hi - lo)


@dataclass
class KcRelationMatrix:
    """Attention mass from pre-interaction KC (row, key) to post-interaction KC (column, query)."""

    raw: np.ndarray
    frequency: np.ndarray
    labels: list[int]
    queries: int = 0
    info: dict = field(default_factory=dict)

    @property
    def normalized(self) -> np.ndarray:
        return min_max_normalize(self.raw)

    @property
    def total_mass(self) -> float:
        return float(self.raw.sum())

    def top(self, m: int = 6) -> "KcRelationMatrix":
        """Restrict to the ``m`` most frequent KCs (ties broken by index)."""
        order = np.argsort(-self.frequency, kind="stable")[: min(m, len(self.frequency))]
        order = np.sort(order)
        return KcRelationMatrix(
            self.raw[np.ix_(order, order)],
            self.frequency[order],
            [self.labels[i] for i in order],
            self.queries,
            dict(self.info, top=m),
        )

    def write_csv(self, path: str | Path, normalized: bool = True) -> None:
        values = self.normalized if normalized else self.raw
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["pre\\post", *self.labels])
            for label, row in zip(self.labels, values):
                writer.writerow([label, *(repr(float(v)) for v in row)])


class KcAttentionAccumulator:
    """Running sum of final attention weights keyed by (key KC, query KC).

    Instances are callable with ``(batch, forward)`` so they can be passed
    straight to :func:`sparsekt.training.train` as a batch hook.
    """

    def __init__(self, n: int):
        self.raw = np.zeros((n, n))
        self.frequency = np.zeros(n, dtype=np.int64)
        self.queries = 0

    def __call__(self, batch: Batch, fwd: Forward) -> None:
        self.add(batch, fwd.head_weights)

    def add(self, batch: Batch, weights: np.ndarray) -> None:
        b, p, j = np.nonzero(weights)
        np.add.at(self.raw, (batch.kcs[b, j], batch.kcs[b, p]), weights[b, p, j])
        np.add.at(self.frequency, batch.kcs[batch.valid], 1)
        self.queries += int(batch.target_mask.sum())

    def result(self, labels: Sequence[int], info: dict | None = None) -> KcRelationMatrix:
        return KcRelationMatrix(self.raw.copy(), self.frequency.copy(), list(labels), self.queries, dict(info or {}))


def accumulate_kc_attention(model: SparseKT, dataset: Dataset, batch_size: int = 128) -> KcRelationMatrix:
    """One pass of ``model`` over ``dataset`` summing attention between KCs."""
    if dataset.num_predictions == 0:
        raise ValueError("no query positions to accumulate attention over")
    acc = KcAttentionAccumulator(model.meta.n)
    for batch in make_batches(dataset, batch_size, max_len=model.config.max_len):
        acc(batch, model.forward(batch))
    sparse = model.config.sparse
    info = {"mode": sparse.mode, "k": sparse.k, "renorm": sparse.renorm, "source": "final-model"}
    return acc.result(model.meta.kc_ids, info)


# --------------------------------------------------------------------------
# k sweep
# --------------------------------------------------------------------------

SWEEP_FIELDS = ("mode", "k", "seed", "valid_auc", "valid_acc")


@dataclass
class SweepRow:
    mode: str
    k: float
    seed: int
    valid_auc: float | None
    valid_acc: float


@dataclass
class SweepReport:
    rows: list[SweepRow] = field(default_factory=list)

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(SWEEP_FIELDS)
            for r in self.rows:
                auc = "" if r.valid_auc is None else repr(r.valid_auc)
                writer.writerow([r.mode, r.k, r.seed, auc, repr(r.valid_acc)])

    def by_k(self, mode: str) -> dict[float, float]:
        """Mean validation AUC per ``k`` over seeds."""
        out: dict[float, list[float]] = {}
        for r in self.rows:
            if r.mode == mode and r.valid_auc is not None:
                out.setdefault(r.k, []).append(r.valid_auc)
        return {k: float(np.mean(v)) for k, v in sorted(out.items())}


def sweep_k(
    train_set: Dataset,
    valid_set: Dataset,
    base: TrainConfig,
    mode: str,
    grid: Sequence[float] | None = None,
    seeds: Sequence[int] | None = None,
) -> SweepReport:
    """Train one model per ``(k, seed)`` and score it on ``valid_set``."""
    grid = list(DEFAULT_GRIDS[mode.lower()] if grid is None else grid)
    if not grid:
        raise ValueError("empty k grid")
    seeds = [base.seed] if seeds is None else list(seeds)
    report = SweepReport()
    for k in grid:
        for seed in seeds:
            cfg = base.replace(mode=mode, k=k, seed=seed)
            result = train(train_set, cfg, valid_set)
            ev = evaluate(result.model, valid_set)
            report.rows.append(SweepRow(cfg.sparse.mode, cfg.sparse.k, seed, ev.auc, ev.accuracy))
            log.info("sweep %s k=%s seed=%d auc=%s", cfg.sparse.mode, k, seed, ev.auc)
    return report
