import numpy as np
import pytest

from sparsekt.analysis import (
    DEFAULT_GRIDS,
    KcAttentionAccumulator,
    accumulate_kc_attention,
    min_max_normalize,
    sweep_k,
)
from sparsekt.config import SparseConfig, TrainConfig
from sparsekt.data import gen_synthetic, make_batches, preprocess, split
from sparsekt.model import SparseKT
from sparsekt.training import train


def _model(ds, **kw):
    cfg = TrainConfig(d=8, **kw)
    return SparseKT(cfg, ds.meta, np.random.default_rng(0))


def test_single_kc_dataset_gives_one_by_one_zero():
    ds = preprocess([("a", [1, 2, 3, 4], [7, 7, 7, 7], [1, 0, 1, 1])])
    rel = accumulate_kc_attention(_model(ds), ds)
    assert rel.raw.shape == (1, 1)
    assert rel.total_mass == pytest.approx(3.0)
    assert rel.normalized.tolist() == [[0.0]]


def test_two_interaction_sequence_puts_all_mass_on_pair():
    ds = preprocess([("a", [1, 2, 1], [10, 20, 10], [1, 0, 1]), ("b", [2, 2, 2], [20, 20, 20], [0, 0, 1])])
    acc = KcAttentionAccumulator(ds.meta.n)
    model = _model(ds)
    only_a = ds.subset(["a"])
    # position 2 of "a": KC 20 attends to position 1 (KC 10) with weight 1
    batch = make_batches(only_a, 1)[0]
    weights = model.forward(batch).head_weights
    assert weights[0, 1, 0] == 1.0
    acc.add(batch, weights)
    # rows are key KCs, columns query KCs; index 0 is KC 10, index 1 is KC 20
    expected = np.array([[weights[0, 2, 0], 1.0], [weights[0, 2, 1], 0.0]])
    np.testing.assert_allclose(acc.raw, expected, atol=1e-15)
    assert acc.raw.sum() == pytest.approx(2.0)
    assert acc.queries == 2


@pytest.mark.parametrize("sparse", [SparseConfig("soft", 0.4), SparseConfig("topk", 2), SparseConfig("dense")])
def test_conservation(sparse):
    ds = gen_synthetic(30, 6, 20, seed=2)
    rel = accumulate_kc_attention(_model(ds, sparse=sparse), ds, batch_size=7)
    assert rel.queries == ds.num_predictions
    assert rel.total_mass == pytest.approx(ds.num_predictions, rel=1e-9)
    norm = rel.normalized
    assert norm.min() == 0.0 and norm.max() == 1.0
    assert rel.info["mode"] == sparse.mode


def test_min_max_normalize():
    m = np.array([[2.0, 4.0], [3.0, 6.0]])
    n = min_max_normalize(m)
    assert n.tolist() == [[0.0, 0.5], [0.25, 1.0]]
    np.testing.assert_array_equal(min_max_normalize(n), n)
    assert min_max_normalize(np.full((3, 3), 2.5)).tolist() == [[0.0] * 3] * 3


def test_top_submatrix_and_csv(tmp_path):
    ds = gen_synthetic(30, 9, 20, seed=4)
    rel = accumulate_kc_attention(_model(ds), ds)
    top = rel.top(6)
    assert top.raw.shape == (6, 6)
    assert sorted(top.labels) == top.labels
    kept = set(np.argsort(-rel.frequency, kind="stable")[:6])
    assert {rel.labels.index(x) for x in top.labels} == kept
    path = tmp_path / "m.csv"
    top.write_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "pre\\post," + ",".join(map(str, top.labels))
    assert len(lines) == 7
    assert rel.top(100).raw.shape == rel.raw.shape


def test_accumulator_is_a_training_hook():
    ds = gen_synthetic(20, 5, 10, seed=6)
    acc = KcAttentionAccumulator(ds.meta.n)
    cfg = TrainConfig(d=4, max_epochs=2, patience=2)
    train(ds, cfg, hook=acc)
    assert acc.queries == 2 * ds.num_predictions
    assert acc.raw.sum() == pytest.approx(acc.queries)


def test_sweep_single_point_and_grids():
    assert DEFAULT_GRIDS["soft"] == [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0]
    assert DEFAULT_GRIDS["topk"] == list(range(1, 11))
    parts = split(gen_synthetic(30, 5, 10, seed=8), seed=0)
    base = TrainConfig(d=4, max_epochs=1, patience=1)
    report = sweep_k(parts["train"], parts["valid"], base, "topk", grid=[3])
    assert len(report.rows) == 1 and report.rows[0].k == 3
    with pytest.raises(ValueError):
        sweep_k(parts["train"], parts["valid"], base, "soft", grid=[])


def test_topk_at_least_history_equals_dense():
    ds = gen_synthetic(10, 5, 10, seed=9, min_len=4, max_len=9)
    big = accumulate_kc_attention(_model(ds, sparse=SparseConfig("topk", 10)), ds)
    dense = accumulate_kc_attention(_model(ds, sparse=SparseConfig("dense")), ds)
    np.testing.assert_allclose(big.raw, dense.raw, atol=1e-12)
