"""Causal attention over past interactions with k-sparse selection.

The score row of a query is ``softmax(x_query . x_j / sqrt(d))`` over its
history ``j < p``.  A selection rule then keeps a subset of that row:

* ``soft``: sort descending and keep the shortest prefix whose cumulative
  sum is strictly larger than ``k``;
* ``topk``: keep every score ``>= s`` where ``s`` is the k-th largest, so
  ties at ``s`` can keep more than ``k`` entries;
* ``dense``: keep the whole row.

Kept scores are renormalised either with a second softmax over their values
(``resoftmax``) or by dividing by their sum (``sumnorm``).  The selection is
a constant of the backward pass: gradients flow only through kept entries.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .autograd import Tensor, as_tensor, masked_softmax, masked_sumnorm, matmul, mul, transpose
from .config import SparseConfig


class NoHistoryError(ValueError):
    """A query has no earlier interaction to attend to."""


# --------------------------------------------------------------------------
# selection rules, vectorised over leading axes
# --------------------------------------------------------------------------


def select_topk(scores: np.ndarray, allowed: np.ndarray, k: int) -> np.ndarray:
    masked = np.where(allowed, scores, -np.inf)
    count = allowed.sum(axis=-1, keepdims=True)
    desc = -np.sort(-masked, axis=-1)
    kth = np.take_along_axis(desc, np.maximum(np.minimum(int(k), count) - 1, 0), axis=-1)
    return allowed & (masked >= kth)


def select_soft(scores: np.ndarray, allowed: np.ndarray, k: float) -> np.ndarray:
    if k >= 1.0:
        # a probability row never strictly exceeds 1, so everything is kept
        return allowed.copy()
    masked = np.where(allowed, scores, -np.inf)
    order = np.argsort(-masked, axis=-1, kind="stable")
    ranked = np.take_along_axis(np.where(allowed, scores, 0.0), order, axis=-1)
    cumulative = np.cumsum(ranked, axis=-1)
    keep = (cumulative <= k).sum(axis=-1, keepdims=True) + 1
    rank = np.empty_like(order)
    np.put_along_axis(rank, order, np.broadcast_to(np.arange(order.shape[-1]), order.shape), axis=-1)
    return allowed & (rank < keep)


def select(scores: np.ndarray, allowed: np.ndarray, cfg: SparseConfig) -> np.ndarray:
    if cfg.mode == "dense":
        return allowed.copy()
    if cfg.mode == "topk":
        return select_topk(scores, allowed, int(cfg.k))
    return select_soft(scores, allowed, cfg.k)


# --------------------------------------------------------------------------
# single-row interface
# --------------------------------------------------------------------------


def attention_scores(x_query, X_hist) -> np.ndarray:
    """Score distribution of one query over ``t`` history rows."""
    x_query = np.asarray(x_query, dtype=float)
    X_hist = np.atleast_2d(np.asarray(X_hist, dtype=float))
    if X_hist.shape[0] == 0 or X_hist.size == 0:
        raise NoHistoryError("attention needs at least one history row")
    logits = X_hist @ x_query / math.sqrt(x_query.shape[-1])
    return masked_softmax(logits, np.ones(logits.shape, dtype=bool)).data


def mask_soft(scores, k: float) -> np.ndarray:
    scores = np.asarray(scores, dtype=float)
    return select_soft(scores, np.ones(scores.shape, dtype=bool), k)


def mask_topk(scores, k: int) -> np.ndarray:
    scores = np.asarray(scores, dtype=float)
    return select_topk(scores, np.ones(scores.shape, dtype=bool), k)


def renormalize(scores, selected: np.ndarray, renorm: str = "resoftmax") -> Tensor:
    if renorm == "resoftmax":
        return masked_softmax(scores, selected)
    if renorm == "sumnorm":
        return masked_sumnorm(scores, selected)
    raise ValueError(f"unknown renorm {renorm!r}")


def sparse_output(scores, selected, Y_hist, renorm: str = "resoftmax") -> tuple[np.ndarray, np.ndarray]:
    """Knowledge-state vector ``h`` and final weights for one query row."""
    selected = np.asarray(selected, dtype=bool)
    if not selected.any():
        raise ValueError("selection is empty")
    weights = renormalize(np.asarray(scores, dtype=float), selected, renorm).data
    return weights @ np.atleast_2d(np.asarray(Y_hist, dtype=float)), weights


# --------------------------------------------------------------------------
# batched causal attention
# --------------------------------------------------------------------------


@dataclass
class AttentionOutput:
    """``H`` is ``[..., L, d]``; the other arrays are ``[..., L, L]`` (query, key)."""

    H: Tensor
    scores: np.ndarray
    selected: np.ndarray
    weights: np.ndarray


def causal_mask(valid: np.ndarray) -> np.ndarray:
    """``allowed[..., p, j]`` is true when ``j < p`` and both positions are real."""
    valid = np.asarray(valid, dtype=bool)
    length = valid.shape[-1]
    earlier = np.tril(np.ones((length, length), dtype=bool), k=-1)
    return earlier & valid[..., :, None] & valid[..., None, :]


def batched_causal_attention(
    X,
    Y,
    valid,
    cfg: SparseConfig,
    selection: np.ndarray | None = None,
    keys=None,
) -> AttentionOutput:
    """Sparse attention of every position over its own history.

    Queries come from ``X``, keys from ``keys`` (default ``X``) and values
    from ``Y``, all ``[..., L, d]``.
    Rows with no history (the first position, padding) produce zero vectors.
    Passing ``selection`` reuses a previously computed keep-set instead of
    re-deriving it from the scores.
    """
    X, Y = as_tensor(X), as_tensor(Y)
    K = X if keys is None else as_tensor(keys)
    logits = mul(matmul(X, transpose(K)), 1.0 / math.sqrt(X.shape[-1]))
    allowed = np.broadcast_to(causal_mask(valid), logits.shape)
    scores = masked_softmax(logits, allowed)
    if selection is None:
        selection = select(scores.data, allowed, cfg)
    else:
        selection = np.asarray(selection, dtype=bool) & allowed
    weights = renormalize(scores, selection, cfg.renorm)
    H = matmul(weights, Y)
    return AttentionOutput(H, scores.data, selection, weights.data)
