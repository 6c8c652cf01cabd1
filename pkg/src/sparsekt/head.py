"""Two-layer prediction head and binary cross-entropy."""

from __future__ import annotations

import numpy as np

from .autograd import Parameter, Tensor, add, as_tensor, clip, concat, dropout, log, matmul, mul, relu, reshape, sigmoid, sub, sum_, transpose

PROB_CLAMP = 1e-7


class HeadParams:
    """``W1`` is ``[d, 2d]``, ``W2`` is ``[d, d]``, ``w``/``b1``/``b2`` are ``[d]``, ``b`` is scalar."""

    def __init__(self, d: int, rng: np.random.Generator, std: float = 0.1):
        self.d = d
        self.W1 = Parameter(rng.normal(0.0, std, size=(d, 2 * d)), name="head.W1")
        self.b1 = Parameter(np.zeros(d), name="head.b1")
        self.W2 = Parameter(rng.normal(0.0, std, size=(d, d)), name="head.W2")
        self.b2 = Parameter(np.zeros(d), name="head.b2")
        self.w = Parameter(rng.normal(0.0, std, size=d), name="head.w")
        self.b = Parameter(np.zeros(()), name="head.b")

    def parameters(self) -> list[Parameter]:
        return [self.W1, self.b1, self.W2, self.b2, self.w, self.b]

    def logits(self, h, x, dropout_rate: float = 0.0, rng: np.random.Generator | None = None) -> Tensor:
        """Pre-sigmoid output for ``[..., d]`` knowledge states and questions."""
        feat = concat([h, x], axis=-1)
        a1 = relu(add(matmul(feat, transpose(self.W1)), self.b1))
        a1 = dropout(a1, dropout_rate, rng)
        a2 = relu(add(matmul(a1, transpose(self.W2)), self.b2))
        a2 = dropout(a2, dropout_rate, rng)
        out = matmul(a2, reshape(self.w, (self.d, 1)))
        return add(reshape(out, out.shape[:-1]), self.b)

    def forward(self, h, x, dropout_rate: float = 0.0, rng: np.random.Generator | None = None) -> Tensor:
        return sigmoid(self.logits(h, x, dropout_rate, rng))


def predict(h, x, params: HeadParams) -> float:
    """Correctness probability for a single ``(h, x)`` pair; ``h`` comes first."""
    h = np.asarray(h, dtype=float).reshape(1, -1)
    x = np.asarray(x, dtype=float).reshape(1, -1)
    return float(params.forward(h, x).data[0])


def bce_loss(predictions, labels, mask) -> Tensor:
    """Mean binary cross-entropy over the positions where ``mask`` is true.

    Predictions are clamped to ``[1e-7, 1 - 1e-7]`` before the log.
    """
    predictions = as_tensor(predictions)
    mask = np.asarray(mask, dtype=bool)
    count = int(mask.sum())
    if count == 0:
        raise ValueError("no positions to score")
    labels = np.where(mask, np.asarray(labels, dtype=float), 0.0)
    p = clip(predictions, PROB_CLAMP, 1.0 - PROB_CLAMP)
    ll = add(mul(log(p), labels), mul(log(sub(1.0, p)), 1.0 - labels))
    return mul(sum_(mul(ll, mask.astype(float))), -1.0 / count)
