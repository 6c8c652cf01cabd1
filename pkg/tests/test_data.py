from collections import Counter

import numpy as np
import pytest

from sparsekt.data import (
    CompatibilityError,
    ConfigError,
    DataError,
    gen_synthetic,
    load_sequences,
    make_batches,
    meta_path,
    preprocess,
    response_probability,
    save_sequences,
    split,
)


def _write(tmp_path, text, name="d.txt"):
    path = tmp_path / name
    path.write_text(text)
    return path


def _record(sid, n, q0=0, kc0=10):
    qs = ",".join(str(q0 + i % 7) for i in range(n))
    cs = ",".join(str(kc0 + i % 3) for i in range(n))
    rs = ",".join(str(i % 2) for i in range(n))
    return f"{sid},{n}\n{qs}\n{cs}\n{rs}\n"


def test_short_sequence_dropped(tmp_path):
    path = _write(tmp_path, _record("a", 2) + "\n" + _record("b", 3))
    ds = load_sequences(path)
    assert [s.student_id for s in ds.sequences] == ["b"]


def test_long_sequence_chunked(tmp_path):
    ds = load_sequences(_write(tmp_path, _record("a", 450)))
    assert [len(s) for s in ds.sequences] == [200, 200, 50]
    assert {s.student_id for s in ds.sequences} == {"a"}


def test_trailing_chunk_below_minimum_dropped(tmp_path):
    ds = load_sequences(_write(tmp_path, _record("a", 402)))
    assert [len(s) for s in ds.sequences] == [200, 200]


def test_empty_file(tmp_path):
    ds = load_sequences(_write(tmp_path, ""))
    assert len(ds) == 0 and ds.meta.n == 0 and ds.meta.Q == 0


def test_ids_remapped_densely(tmp_path):
    text = "s,3\n105,7,105\n40,2,40\n1,0,1\n"
    ds = load_sequences(_write(tmp_path, text))
    assert ds.meta.question_ids == [7, 105]
    assert ds.meta.kc_ids == [2, 40]
    assert ds.sequences[0].questions.tolist() == [1, 0, 1]
    assert ds.sequences[0].kcs.tolist() == [1, 0, 1]


@pytest.mark.parametrize(
    "text, lineno",
    [
        ("s,3\n1,2,3\n1,2\n0,1,0\n", 3),
        ("s,3\n1,x,3\n1,2,3\n0,1,0\n", 2),
        ("s,three\n1,2,3\n1,2,3\n0,1,0\n", 1),
        ("s,3\n1,2,3\n1,2,3\n", 3),
    ],
)
def test_parse_errors_carry_line_numbers(tmp_path, text, lineno):
    with pytest.raises(DataError, match=f"line {lineno}"):
        load_sequences(_write(tmp_path, text))


def test_non_binary_response(tmp_path):
    with pytest.raises(DataError, match="not 0 or 1"):
        load_sequences(_write(tmp_path, "s,3\n1,2,3\n1,2,3\n0,2,1\n"))


def test_round_trip(tmp_path):
    raw = _record("a", 450) + _record("b", 12, q0=50, kc0=3) + _record("c", 2)
    first = load_sequences(_write(tmp_path, raw))
    save_sequences(first, tmp_path / "out.txt")
    again = load_sequences(tmp_path / "out.txt")
    assert again == first
    assert meta_path(tmp_path / "out.txt").exists()


def test_load_with_foreign_meta(tmp_path):
    base = load_sequences(_write(tmp_path, "s,3\n1,2,3\n5,5,6\n0,1,0\n"))
    ok = load_sequences(_write(tmp_path, "t,3\n3,2,1\n6,5,5\n1,1,0\n", "b.txt"), meta=base.meta)
    assert ok.meta == base.meta
    with pytest.raises(CompatibilityError):
        load_sequences(_write(tmp_path, "t,3\n9,2,1\n6,5,5\n1,1,0\n", "c.txt"), meta=base.meta)


def _students(n):
    return preprocess([(f"u{i}", [0, 1, 2], [0, 0, 1], [1, 0, 1]) for i in range(n)])


def test_split_counts_and_disjoint():
    parts = split(_students(10), seed=1, fractions=(0.8, 0.1, 0.1))
    assert [len(parts[k].students()) for k in ("train", "valid", "test")] == [8, 1, 1]
    ids = [set(p.students()) for p in parts.values()]
    assert not (ids[0] & ids[1]) and not (ids[0] & ids[2]) and not (ids[1] & ids[2])


def test_split_deterministic():
    a = split(_students(30), seed=5)
    b = split(_students(30), seed=5)
    assert all(a[k] == b[k] for k in a)


def test_split_errors():
    with pytest.raises(ConfigError):
        split(_students(10), seed=0, fractions=(0.5, 0.6))
    with pytest.raises(ConfigError):
        split(_students(2), seed=0, fractions=(0.8, 0.1, 0.1))


def test_split_keeps_students_chunks_together(tmp_path):
    ds = load_sequences(_write(tmp_path, _record("a", 450) + _record("b", 5) + _record("c", 5)))
    parts = split(ds, seed=0)
    for part in parts.values():
        if "a" in part.students():
            assert len(part) == 3


def test_batch_padding():
    ds = preprocess([("a", [0, 1, 2], [0, 0, 1], [1, 0, 1]), ("b", [2, 1, 0, 1, 2], [1, 1, 0, 0, 1], [0, 0, 1, 1, 0])])
    (batch,) = make_batches(ds, batch_size=2)
    assert batch.shape == (2, 5)
    assert batch.valid.tolist() == [[True, True, True, False, False], [True] * 5]
    assert batch.questions[0, 3:].tolist() == [-1, -1]
    assert batch.responses[0, 3:].tolist() == [-1, -1]


def test_batch_single_and_oversized():
    ds = _students(3)
    assert len(make_batches(ds.sequences[:1], 4)) == 1
    batches = make_batches(ds, batch_size=100)
    assert len(batches) == 1 and batches[0].shape == (3, 3)
    with pytest.raises(ConfigError):
        make_batches(ds, 0)


def test_batching_preserves_tuples():
    ds = gen_synthetic(37, 6, 20, seed=3)
    def tuples_of_dataset():
        return Counter(
            (s.student_id, i, int(q), int(c), int(r))
            for s in ds.sequences
            for i, (q, c, r) in enumerate(zip(s.questions, s.kcs, s.responses))
        )
    seen = Counter()
    for b in make_batches(ds, 8, rng=np.random.default_rng(0)):
        for row, sid in enumerate(b.student_ids):
            for i in np.flatnonzero(b.valid[row]):
                seen[(sid, int(i), int(b.questions[row, i]), int(b.kcs[row, i]), int(b.responses[row, i]))] += 1
    assert seen == tuples_of_dataset()


def test_response_probability_at_zero_margin():
    assert response_probability(0.3, 0.3) == 0.5


def test_synthetic_byte_identical(tmp_path):
    save_sequences(gen_synthetic(50, 5, 20, seed=11), tmp_path / "a.txt")
    save_sequences(gen_synthetic(50, 5, 20, seed=11), tmp_path / "b.txt")
    assert (tmp_path / "a.txt").read_bytes() == (tmp_path / "b.txt").read_bytes()
    assert meta_path(tmp_path / "a.txt").read_bytes() == meta_path(tmp_path / "b.txt").read_bytes()


def test_synthetic_correct_rate():
    ds = gen_synthetic(500, 50, 200, seed=1)
    rate = np.concatenate([s.responses for s in ds.sequences]).mean()
    assert 0.4 <= rate <= 0.6


def test_synthetic_lengths_within_bounds():
    ds = gen_synthetic(100, 10, 30, seed=2)
    assert all(3 <= len(s) <= 200 for s in ds.sequences)
    assert all(set(np.unique(s.responses)) <= {0, 1} for s in ds.sequences)
    with pytest.raises(ConfigError):
        gen_synthetic(0, 1, 1, seed=0)
