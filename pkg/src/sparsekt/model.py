"""The full sparse-attention knowledge-tracing model."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .attention import AttentionOutput, batched_causal_attention
from .autograd import Parameter, Tensor, matmul, reshape, transpose
from .config import TrainConfig
from .data import Batch, CompatibilityError, DatasetMeta
from .embeddings import EmbeddingTables
from .head import HeadParams, bce_loss


@dataclass
class Forward:
    probs: Tensor
    loss: Tensor | None
    attention: AttentionOutput

    @property
    def head_weights(self) -> np.ndarray:
        """Attention weights averaged over heads, ``[batch, L, L]``."""
        w = self.attention.weights
        return w.mean(axis=1) if w.ndim == 4 else w


class SparseKT:
    def __init__(self, config: TrainConfig, meta: DatasetMeta, rng: np.random.Generator):
        self.config = config
        self.meta = meta
        d = config.d
        self.embeddings = EmbeddingTables(
            d, meta.n, meta.Q, rng, std=config.embed_std,
            max_len=config.max_len if config.positional else None,
        )
        self.projections: list[Parameter] = []
        if config.projections:
            self.projections = [
                Parameter(rng.normal(0.0, config.init_std, size=(d, d)), name=f"attn.{name}")
                for name in ("query", "key", "value")
            ]
        self.head = HeadParams(d, rng, std=config.init_std)

    def parameters(self) -> list[Parameter]:
        return self.embeddings.parameters() + self.projections + self.head.parameters()

    def named_parameters(self) -> dict[str, Parameter]:
        return {p.name: p for p in self.parameters()}

    def check_compatible(self, batch: Batch) -> None:
        if batch.questions.max(initial=-1) >= self.meta.Q or batch.kcs.max(initial=-1) >= self.meta.n:
            raise CompatibilityError("batch ids exceed the model's embedding tables")

    def _split_heads(self, t: Tensor) -> Tensor:
        h = self.config.heads
        if h == 1:
            return t
        b, length, d = t.shape
        return transpose(reshape(t, (b, length, h, d // h)), (0, 2, 1, 3))

    def _merge_heads(self, t: Tensor) -> Tensor:
        if self.config.heads == 1:
            return t
        b, h, length, dh = t.shape
        return reshape(transpose(t, (0, 2, 1, 3)), (b, length, h * dh))

    def forward(
        self,
        batch: Batch,
        selection: np.ndarray | None = None,
        rng: np.random.Generator | None = None,
    ) -> Forward:
        """Predict every position of ``batch``.

        ``rng`` enables dropout (training); ``selection`` pins the sparse
        keep-set, as needed for finite-difference checks.
        """
        self.check_compatible(batch)
        x = self.embeddings.questions(batch.questions, batch.kcs)
        y = self.embeddings.interactions(batch.kcs, batch.responses)
        queries, keys, values = x, x, y
        if self.projections:
            wq, wk, wv = self.projections
            queries, keys, values = matmul(x, wq), matmul(x, wk), matmul(y, wv)
        valid = batch.valid if self.config.heads == 1 else batch.valid[:, None, :]
        att = batched_causal_attention(
            self._split_heads(queries), self._split_heads(values), valid, self.config.sparse, selection,
            keys=self._split_heads(keys),
        )
        h = self._merge_heads(att.H)
        probs = self.head.forward(h, x, self.config.dropout, rng)
        targets = batch.target_mask
        loss = bce_loss(probs, batch.responses, targets) if targets.any() else None
        return Forward(probs, loss, att)

    def state(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters().items()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        params = self.named_parameters()
        missing = set(params) - set(state)
        if missing:
            raise KeyError(f"state lacks tensors: {sorted(missing)}")
        for name, p in params.items():
            if state[name].shape != p.data.shape:
                raise ValueError(f"{name}: shape {state[name].shape} != {p.data.shape}")
            p.data = np.array(state[name], dtype=np.float64)
