"""Interaction-sequence datasets: file I/O, preprocessing, splits and batching.

File format, one student record per four lines (blank lines allowed)::

    <student_id>,<seq_len>
    <question ids, comma separated>
    <KC ids, comma separated>
    <responses, 0 or 1, comma separated>

Question and KC ids in files are arbitrary integers.  They are remapped to
dense 0-based indices (sorted order of the ids that survive preprocessing);
the mapping lives in :class:`DatasetMeta` and is persisted to a JSON
sidecar next to the data file.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

MIN_LEN = 3
MAX_LEN = 200
PAD = -1


class DataError(ValueError):
    """Malformed or invalid dataset content."""


class ConfigError(ValueError):
    """Invalid request, e.g. impossible split fractions."""


class CompatibilityError(DataError):
    """Ids in a dataset are unknown to the mapping it is being read with."""


@dataclass
class InteractionSequence:
    student_id: str
    questions: np.ndarray
    kcs: np.ndarray
    responses: np.ndarray

    def __len__(self) -> int:
        return len(self.responses)

    def __eq__(self, other) -> bool:
        if not isinstance(other, InteractionSequence):
            return NotImplemented
        return (
            self.student_id == other.student_id
            and np.array_equal(self.questions, other.questions)
            and np.array_equal(self.kcs, other.kcs)
            and np.array_equal(self.responses, other.responses)
        )


@dataclass
class DatasetMeta:
    """Dense-index bookkeeping: original id of every question and KC index."""

    question_ids: list[int] = field(default_factory=list)
    kc_ids: list[int] = field(default_factory=list)
    max_len: int = MAX_LEN

    @property
    def n(self) -> int:
        return len(self.kc_ids)

    @property
    def Q(self) -> int:
        return len(self.question_ids)

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "Q": self.Q,
            "max_len": self.max_len,
            "kc_ids": list(self.kc_ids),
            "question_ids": list(self.question_ids),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetMeta":
        meta = cls([int(i) for i in d["question_ids"]], [int(i) for i in d["kc_ids"]], int(d.get("max_len", MAX_LEN)))
        if meta.n != int(d.get("n", meta.n)) or meta.Q != int(d.get("Q", meta.Q)):
            raise DataError("meta counts disagree with id maps")
        return meta


@dataclass
class Dataset:
    sequences: list[InteractionSequence]
    meta: DatasetMeta

    def __len__(self) -> int:
        return len(self.sequences)

    @property
    def num_interactions(self) -> int:
        return sum(len(s) for s in self.sequences)

    @property
    def num_predictions(self) -> int:
        """Positions that carry a prediction target (every position but the first)."""
        return sum(max(len(s) - 1, 0) for s in self.sequences)

    def students(self) -> list[str]:
        return list(dict.fromkeys(s.student_id for s in self.sequences))

    def subset(self, student_ids: Iterable[str]) -> "Dataset":
        keep = set(student_ids)
        return Dataset([s for s in self.sequences if s.student_id in keep], self.meta)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Dataset):
            return NotImplemented
        return self.meta == other.meta and self.sequences == other.sequences


@dataclass
class Batch:
    """Right-padded integer matrices ``[batch, L]``; padding holds ``-1``."""

    questions: np.ndarray
    kcs: np.ndarray
    responses: np.ndarray
    valid: np.ndarray
    student_ids: list[str]

    @property
    def shape(self) -> tuple[int, int]:
        return self.valid.shape

    @property
    def target_mask(self) -> np.ndarray:
        """Valid positions that have at least one earlier interaction."""
        mask = self.valid.copy()
        mask[:, 0] = False
        return mask


# --------------------------------------------------------------------------
# preprocessing
# --------------------------------------------------------------------------


def _chunks(length: int, max_len: int) -> list[tuple[int, int]]:
    return [(start, min(start + max_len, length)) for start in range(0, length, max_len)]


def preprocess(
    records: Iterable[tuple[str, Sequence[int], Sequence[int], Sequence[int]]],
    meta: DatasetMeta | None = None,
    min_len: int = MIN_LEN,
    max_len: int = MAX_LEN,
) -> Dataset:
    """Filter short sequences, split long ones and remap ids to dense indices.

    ``records`` hold raw (original) ids.  With ``meta`` given its maps are
    reused and unknown ids raise :class:`CompatibilityError`; otherwise a new
    map is built from the ids that survive filtering.
    """
    kept = []
    for sid, qs, cs, rs in records:
        for lo, hi in _chunks(len(rs), max_len):
            if hi - lo >= min_len:
                kept.append((sid, list(qs[lo:hi]), list(cs[lo:hi]), list(rs[lo:hi])))

    if meta is None:
        meta = DatasetMeta(
            question_ids=sorted({q for _, qs, _, _ in kept for q in qs}),
            kc_ids=sorted({c for _, _, cs, _ in kept for c in cs}),
            max_len=max_len,
        )
    q_index = {q: i for i, q in enumerate(meta.question_ids)}
    c_index = {c: i for i, c in enumerate(meta.kc_ids)}

    sequences = []
    for sid, qs, cs, rs in kept:
        try:
            q = np.array([q_index[v] for v in qs], dtype=np.int64)
            c = np.array([c_index[v] for v in cs], dtype=np.int64)
        except KeyError as exc:
            raise CompatibilityError(f"student {sid}: id {exc.args[0]} not in the id map") from None
        sequences.append(InteractionSequence(sid, q, c, np.array(rs, dtype=np.int64)))
    return Dataset(sequences, meta)


def _parse_ints(line: str, lineno: int, what: str) -> list[int]:
    try:
        return [int(tok) for tok in line.split(",")]
    except ValueError:
        raise DataError(f"line {lineno}: malformed {what} list") from None


def read_records(path: str | Path) -> list[tuple[str, list[int], list[int], list[int]]]:
    """Parse the four-line record format, returning raw records."""
    lines = [
        (i, raw.strip())
        for i, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1)
        if raw.strip()
    ]
    if len(lines) % 4:
        raise DataError(f"line {lines[-1][0]}: incomplete record (expected 4 lines per student)")
    records = []
    for k in range(0, len(lines), 4):
        (ln, header), (lq, qline), (lc, cline), (lr, rline) = lines[k : k + 4]
        sid, sep, count = header.rpartition(",")
        if not sep or not sid:
            raise DataError(f"line {ln}: header must be '<student_id>,<seq_len>'")
        try:
            seq_len = int(count)
        except ValueError:
            raise DataError(f"line {ln}: sequence length {count!r} is not an integer") from None
        qs = _parse_ints(qline, lq, "question id")
        cs = _parse_ints(cline, lc, "KC id")
        rs = _parse_ints(rline, lr, "response")
        for lineno, values in ((lq, qs), (lc, cs), (lr, rs)):
            if len(values) != seq_len:
                raise DataError(f"line {lineno}: expected {seq_len} values, found {len(values)}")
        bad = [r for r in rs if r not in (0, 1)]
        if bad:
            raise DataError(f"line {lr}: response {bad[0]} is not 0 or 1")
        records.append((sid, qs, cs, rs))
    return records


def meta_path(path: str | Path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".meta.json")


def load_sequences(
    path: str | Path,
    format: str = "4line",
    meta: DatasetMeta | None = None,
    min_len: int = MIN_LEN,
    max_len: int = MAX_LEN,
) -> Dataset:
    """Read a dataset file and apply the length filter and chunking."""
    if format != "4line":
        raise ConfigError(f"unsupported dataset format {format!r}")
    return preprocess(read_records(path), meta=meta, min_len=min_len, max_len=max_len)


def save_sequences(dataset: Dataset, path: str | Path) -> None:
    """Write ``dataset`` with original ids, plus the JSON id-map sidecar."""
    meta = dataset.meta
    out = []
    for s in dataset.sequences:
        out.append(f"{s.student_id},{len(s)}")
        out.append(",".join(str(meta.question_ids[i]) for i in s.questions))
        out.append(",".join(str(meta.kc_ids[i]) for i in s.kcs))
        out.append(",".join(str(int(r)) for r in s.responses))
    Path(path).write_text("\n".join(out) + ("\n" if out else ""), encoding="utf-8")
    meta_path(path).write_text(json.dumps(meta.to_dict(), indent=1) + "\n", encoding="utf-8")


def load_meta(path: str | Path) -> DatasetMeta:
    return DatasetMeta.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


# --------------------------------------------------------------------------
# splitting and batching
# --------------------------------------------------------------------------


SPLIT_NAMES = ("train", "valid", "test")


def split(dataset: Dataset, seed: int, fractions: Sequence[float] = (0.8, 0.1, 0.1)) -> dict[str, Dataset]:
    """Partition by student id so no student appears in two splits."""
    fractions = list(fractions)
    if not 2 <= len(fractions) <= 3 or any(f < 0 for f in fractions):
        raise ConfigError("need two or three non-negative split fractions")
    if not math.isclose(sum(fractions), 1.0, abs_tol=1e-9):
        raise ConfigError(f"split fractions sum to {sum(fractions)}, not 1")
    students = dataset.students()
    if len(students) < len(fractions):
        raise ConfigError(f"{len(students)} students cannot fill {len(fractions)} splits")

    total = len(students)
    counts = [int(round(f * total)) for f in fractions[:-1]]
    counts.append(total - sum(counts))
    # every split gets at least one student
    for i, c in enumerate(counts):
        while counts[i] < 1:
            donor = int(np.argmax(counts))
            counts[donor] -= 1
            counts[i] += 1
    while counts[-1] < 0:
        donor = int(np.argmax(counts[:-1]))
        counts[donor] -= 1
        counts[-1] += 1

    order = np.random.default_rng(seed).permutation(total)
    shuffled = [students[i] for i in order]
    out, start = {}, 0
    for name, c in zip(SPLIT_NAMES, counts):
        out[name] = dataset.subset(shuffled[start : start + c])
        start += c
    return out


def make_batches(
    sequences: Sequence[InteractionSequence] | Dataset,
    batch_size: int,
    max_len: int = MAX_LEN,
    rng: np.random.Generator | None = None,
) -> list[Batch]:
    """Group sequences into right-padded batches, optionally shuffled by ``rng``."""
    if batch_size < 1:
        raise ConfigError("batch_size must be >= 1")
    if isinstance(sequences, Dataset):
        sequences = sequences.sequences
    pieces = []
    for s in sequences:
        for lo, hi in _chunks(len(s), max_len):
            pieces.append(
                InteractionSequence(s.student_id, s.questions[lo:hi], s.kcs[lo:hi], s.responses[lo:hi])
            )
    order = rng.permutation(len(pieces)) if rng is not None else np.arange(len(pieces))

    batches = []
    for start in range(0, len(pieces), batch_size):
        group = [pieces[i] for i in order[start : start + batch_size]]
        width = max(len(s) for s in group)
        shape = (len(group), width)
        q = np.full(shape, PAD, dtype=np.int64)
        c = np.full(shape, PAD, dtype=np.int64)
        r = np.full(shape, PAD, dtype=np.int64)
        valid = np.zeros(shape, dtype=bool)
        for row, s in enumerate(group):
            m = len(s)
            q[row, :m], c[row, :m], r[row, :m] = s.questions, s.kcs, s.responses
            valid[row, :m] = True
        batches.append(Batch(q, c, r, valid, [s.student_id for s in group]))
    return batches


# --------------------------------------------------------------------------
# synthetic data
# --------------------------------------------------------------------------


def response_probability(ability, difficulty):
    """Rasch-style correctness probability ``sigmoid(ability - difficulty)``."""
    return 1.0 / (1.0 + np.exp(-(np.asarray(ability, dtype=float) - difficulty)))


def gen_synthetic(
    num_students: int,
    n_kcs: int,
    num_questions: int,
    seed: int,
    min_len: int = 10,
    max_len: int = 50,
    kcs_per_student: int = 5,
    learning_gain: float = 0.1,
) -> Dataset:
    """Simulate students answering Rasch-style items with a learning effect.

    Each student has a Normal(0, 1) ability per KC and practises a random
    subset of ``kcs_per_student`` KCs; each question has a Normal(0, 1)
    difficulty and one KC.  A response is Bernoulli(sigmoid(ability -
    difficulty)), after which the ability on that KC grows by
    ``learning_gain``.
    """
    if min(num_students, n_kcs, num_questions) < 1:
        raise ConfigError("all counts must be >= 1")
    if not MIN_LEN <= min_len <= max_len:
        raise ConfigError("need 3 <= min_len <= max_len")
    rng = np.random.default_rng(seed)
    difficulty = rng.normal(0.0, 1.0, size=num_questions)
    question_kc = np.concatenate(
        [rng.permutation(n_kcs)[: min(n_kcs, num_questions)],
         rng.integers(0, n_kcs, size=max(num_questions - n_kcs, 0))]
    )
    rng.shuffle(question_kc)
    by_kc = [np.flatnonzero(question_kc == c) for c in range(n_kcs)]
    usable = np.array([c for c in range(n_kcs) if len(by_kc[c])])

    records = []
    for s in range(num_students):
        ability = rng.normal(0.0, 1.0, size=n_kcs)
        practised = rng.choice(usable, size=min(kcs_per_student, len(usable)), replace=False)
        length = int(rng.integers(min_len, max_len + 1))
        qs, cs, rs = [], [], []
        for kc in rng.choice(practised, size=length):
            q = int(rng.choice(by_kc[kc]))
            p = response_probability(ability[kc], difficulty[q])
            qs.append(q)
            cs.append(int(kc))
            rs.append(int(rng.random() < p))
            ability[kc] += learning_gain
        records.append((f"s{s}", qs, cs, rs))
    return preprocess(records, max_len=MAX_LEN)
