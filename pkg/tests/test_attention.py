import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sparsekt.attention import (
    NoHistoryError,
    attention_scores,
    batched_causal_attention,
    causal_mask,
    mask_soft,
    mask_topk,
    sparse_output,
)
from sparsekt.config import ConfigError, SparseConfig

SCORES = np.array([0.5, 0.3, 0.2])


def test_scores_orthogonal_query_is_uniform():
    hist = np.array([[0.0, 1.0], [0.0, -2.0], [0.0, 3.0]])
    np.testing.assert_allclose(attention_scores([1.0, 0.0], hist), [1 / 3] * 3, atol=1e-15)


def test_scores_single_history():
    assert attention_scores([3.0, -1.0], [[0.2, 7.0]]).tolist() == [1.0]


def test_scores_hand_example():
    e = math.e
    np.testing.assert_allclose(attention_scores([1.0], [[1.0], [0.0]]), [e / (e + 1), 1 / (e + 1)], atol=1e-15)
    np.testing.assert_allclose(attention_scores([1.0], [[1.0], [0.0]]), [0.7311, 0.2689], atol=5e-5)


def test_scores_need_history():
    with pytest.raises(NoHistoryError):
        attention_scores([1.0], np.zeros((0, 1)))


def test_mask_soft_examples():
    assert mask_soft(SCORES, 0.7).tolist() == [True, True, False]
    assert mask_soft(SCORES, 0.1).tolist() == [True, False, False]
    assert mask_soft(SCORES, 1.0).tolist() == [True, True, True]
    assert mask_soft(SCORES[::-1], 0.7).tolist() == [False, True, True]


def test_mask_topk_examples():
    assert mask_topk(SCORES, 2).tolist() == [True, True, False]
    assert mask_topk(SCORES, 3).tolist() == [True, True, True]
    assert mask_topk(SCORES, 10).tolist() == [True, True, True]
    assert mask_topk([0.4, 0.3, 0.3], 2).tolist() == [True, True, True]


def test_sparse_output_examples():
    y = np.array([[1.0, 0.0], [0.0, 1.0], [5.0, 5.0]])
    h, w = sparse_output(SCORES, [False, True, False], y)
    assert w.tolist() == [0.0, 1.0, 0.0] and h.tolist() == [0.0, 1.0]

    first = math.exp(0.5) / (math.exp(0.5) + math.exp(0.3))
    h, w = sparse_output(SCORES, [True, True, False], y, "resoftmax")
    np.testing.assert_allclose(w, [first, 1 - first, 0.0], atol=1e-15)
    np.testing.assert_allclose(w, [0.5498, 0.4502, 0.0], atol=5e-5)
    np.testing.assert_allclose(h, [first, 1 - first], atol=1e-15)

    h, w = sparse_output(SCORES, [True, True, False], y, "sumnorm")
    np.testing.assert_allclose(w, [0.625, 0.375, 0.0], atol=1e-15)
    assert w[2] == 0.0


def test_sparse_config_validation():
    with pytest.raises(ConfigError):
        SparseConfig("soft", 1.5)
    with pytest.raises(ConfigError):
        SparseConfig("soft", 0.0)
    with pytest.raises(ConfigError):
        SparseConfig("topk", 2.5)
    with pytest.raises(ConfigError):
        SparseConfig("topk", 0)
    assert SparseConfig("topK", 3).mode == "topk"


probability_rows = st.integers(1, 30).flatmap(
    lambda t: st.lists(st.floats(-8, 8), min_size=t, max_size=t)
).map(lambda xs: np.exp(np.array(xs) - max(xs)) / np.exp(np.array(xs) - max(xs)).sum())


@settings(max_examples=300, deadline=None)
@given(probability_rows, st.floats(0.01, 0.99))
def test_soft_budget(scores, k):
    sel = mask_soft(scores, k)
    kept = np.sort(scores[sel])[::-1]
    ordered = np.sort(scores)[::-1]
    total = np.cumsum(ordered)[len(kept) - 1]
    if len(kept) < len(scores):
        assert total > k
    if len(kept) > 1:
        assert np.cumsum(ordered)[len(kept) - 2] <= k


@settings(max_examples=300, deadline=None)
@given(probability_rows, st.integers(1, 12))
def test_topk_budget(scores, k):
    sel = mask_topk(scores, k)
    if len(np.unique(scores)) == len(scores):
        assert sel.sum() == min(k, len(scores))
    assert sel.sum() >= min(k, len(scores))
    assert scores[sel].min() >= scores[~sel].max(initial=-1.0)


@pytest.mark.parametrize("renorm", ["resoftmax", "sumnorm"])
def test_weights_are_probabilities_and_zero_off_selection(renorm):
    rng = np.random.default_rng(0)
    for _ in range(100):
        t = rng.integers(1, 12)
        scores = rng.dirichlet(np.ones(t))
        sel = mask_topk(scores, rng.integers(1, 5))
        _, w = sparse_output(scores, sel, rng.normal(size=(t, 3)), renorm)
        assert abs(w.sum() - 1) < 1e-12
        assert np.all(w[~sel] == 0)


def test_batched_first_row_zero_and_single_position():
    cfg = SparseConfig("topk", 2)
    out = batched_causal_attention(np.ones((1, 4)), np.ones((1, 4)), np.ones(1, bool), cfg)
    assert out.H.data.tolist() == [[0.0] * 4]


def test_batched_dense_equals_large_topk():
    rng = np.random.default_rng(1)
    X, Y = rng.normal(size=(3, 5)), rng.normal(size=(3, 5))
    valid = np.ones(3, bool)
    dense = batched_causal_attention(X, Y, valid, SparseConfig("dense", 1)).H.data
    topk = batched_causal_attention(X, Y, valid, SparseConfig("topk", 10)).H.data
    assert np.array_equal(dense, topk)


def test_batched_rows_sum_to_one_and_causal():
    rng = np.random.default_rng(2)
    X, Y = rng.normal(size=(2, 6, 4)), rng.normal(size=(2, 6, 4))
    valid = np.array([[True] * 6, [True] * 4 + [False] * 2])
    out = batched_causal_attention(X, Y, valid, SparseConfig("soft", 0.6))
    sums = out.weights.sum(-1)
    allowed = causal_mask(valid)
    has_history = allowed.any(-1)
    np.testing.assert_allclose(sums[has_history], 1.0, atol=1e-12)
    assert np.all(sums[~has_history] == 0)
    assert np.all(out.weights[~allowed] == 0)
    assert np.all(out.H.data[1, 4:] == 0)


def test_pinned_selection_is_honoured():
    rng = np.random.default_rng(4)
    X, Y = rng.normal(size=(5, 3)), rng.normal(size=(5, 3))
    valid = np.ones(5, bool)
    free = batched_causal_attention(X, Y, valid, SparseConfig("topk", 1))
    pinned = batched_causal_attention(X + 1e-3, Y, valid, SparseConfig("dense", 1), selection=free.selected)
    assert np.array_equal(pinned.selected, free.selected)
