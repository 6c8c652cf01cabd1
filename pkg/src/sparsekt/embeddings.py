"""Interaction and question-enhanced representations.

An interaction is ``kc_column + response_column``.  The query/key
representation of a question adds a per-question discrimination vector
scaled elementwise by a per-KC variation vector to the KC column.
"""

from __future__ import annotations

import numpy as np

from .autograd import Parameter, Tensor, add, gather_rows, mul, transpose


class EmbeddingTables:
    """Learnable lookup tables.

    ``kc`` is ``[d, n]`` and ``response`` is ``[d, 2]`` (one column per id);
    ``discrimination`` is ``[Q, d]`` and ``variation`` is ``[n, d]``.  The
    discrimination table starts at zero so a fresh model represents
    questions by their KC alone.
    """

    def __init__(
        self,
        d: int,
        n: int,
        Q: int,
        rng: np.random.Generator,
        std: float = 0.1,
        max_len: int | None = None,
    ):
        self.d, self.n, self.Q = d, n, Q
        self.kc = Parameter(rng.normal(0.0, std, size=(d, n)), name="embed.kc")
        self.response = Parameter(rng.normal(0.0, std, size=(d, 2)), name="embed.response")
        self.discrimination = Parameter(np.zeros((Q, d)), name="embed.discrimination")
        self.variation = Parameter(rng.normal(0.0, std, size=(n, d)), name="embed.variation")
        self.position = (
            Parameter(rng.normal(0.0, std, size=(max_len, d)), name="embed.position") if max_len else None
        )

    def parameters(self) -> list[Parameter]:
        params = [self.kc, self.response, self.discrimination, self.variation]
        return params + ([self.position] if self.position is not None else [])

    def _check(self, question_id=None, kc_id=None, response=None) -> None:
        if kc_id is not None and not 0 <= kc_id < self.n:
            raise IndexError(f"KC id {kc_id} outside [0, {self.n})")
        if question_id is not None and not 0 <= question_id < self.Q:
            raise IndexError(f"question id {question_id} outside [0, {self.Q})")
        if response is not None and response not in (0, 1):
            raise IndexError(f"response {response} is not 0 or 1")

    def embed_interaction(self, kc_id: int, response: int) -> np.ndarray:
        self._check(kc_id=kc_id, response=response)
        return self.kc.data[:, kc_id] + self.response.data[:, response]

    def enhance_question(self, question_id: int, kc_id: int) -> np.ndarray:
        self._check(question_id=question_id, kc_id=kc_id)
        return self.discrimination.data[question_id] * self.variation.data[kc_id] + self.kc.data[:, kc_id]

    # batched, differentiable forms; padded ids (-1) read row 0 and are masked downstream

    def interactions(self, kcs: np.ndarray, responses: np.ndarray) -> Tensor:
        kcs, responses = np.maximum(kcs, 0), np.maximum(responses, 0)
        y = add(gather_rows(transpose(self.kc), kcs), gather_rows(transpose(self.response), responses))
        return self._with_position(y)

    def questions(self, questions: np.ndarray, kcs: np.ndarray) -> Tensor:
        questions, kcs = np.maximum(questions, 0), np.maximum(kcs, 0)
        rasch = mul(gather_rows(self.discrimination, questions), gather_rows(self.variation, kcs))
        x = add(rasch, gather_rows(transpose(self.kc), kcs))
        return self._with_position(x)

    def _with_position(self, t: Tensor) -> Tensor:
        if self.position is None:
            return t
        length = t.shape[-2]
        return add(t, gather_rows(self.position, np.arange(length)))
