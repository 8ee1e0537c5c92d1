"""Sparse (patient, code, specialist, label) corpus: loading, validation, splits.

File formats are UTF-8 TSV. Events: one row per diagnosis event,
``patient_id<TAB>code<TAB>specialist``. Labels: ``patient_id<TAB>label``
with label in {0, 1}; an optional header row in the labels file is
detected by a non-numeric label column. Repeated identical event rows are
kept as repeated tokens (bag semantics).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class CorpusError(ValueError):
    """Unreadable file, malformed row, or inconsistent corpus content."""


@dataclass(frozen=True)
class Token:
    """One diagnosis event: a code issued by a specialist."""

    code_id: int
    specialist_id: int


@dataclass
class PatientRecord:
    patient_id: str
    tokens: list[Token] = field(default_factory=list)
    label: int | None = None  # 0, 1, or None when unlabeled

    @property
    def n_tokens(self) -> int:
        return len(self.tokens)


class Vocabulary:
    """Bijection between strings and dense indices, in first-appearance order."""

    def __init__(self, items: list[str] | None = None):
        self._index: dict[str, int] = {}
        self._items: list[str] = []
        for it in items or []:
            self.add(it)

    def add(self, item: str) -> int:
        idx = self._index.get(item)
        if idx is None:
            idx = len(self._items)
            self._index[item] = idx
            self._items.append(item)
        return idx

    def get(self, item: str) -> int | None:
        return self._index.get(item)

    def __getitem__(self, idx: int) -> str:
        return self._items[idx]

    def __len__(self) -> int:
        return len(self._items)

    def __contains__(self, item: str) -> bool:
        return item in self._index

    def items(self) -> list[str]:
        return list(self._items)

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocabulary) and self._items == other._items


@dataclass
class Corpus:
    """Immutable-by-convention container for patients plus shared vocabularies."""

    patients: list[PatientRecord]
    code_vocab: Vocabulary
    specialist_vocab: Vocabulary

    @property
    def n_patients(self) -> int:
        return len(self.patients)

    @property
    def n_codes(self) -> int:
        return len(self.code_vocab)

    @property
    def n_specialists(self) -> int:
        return len(self.specialist_vocab)

    @property
    def n_tokens(self) -> int:
        return sum(p.n_tokens for p in self.patients)

    def labeled_patients(self) -> list[PatientRecord]:
        return [p for p in self.patients if p.label is not None]


@dataclass
class ValidationReport:
    n_patients: int
    n_tokens: int
    n_labeled: int
    label_base_rate: float  # NaN when no labeled patients
    n_empty_patients: int


def _read_tsv_rows(path: str | Path, arity: int) -> list[list[str]]:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise CorpusError(f"cannot read {path}: {exc}") from exc
    rows = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        fields = line.rstrip("\n").split("\t")
        if len(fields) != arity:
            raise CorpusError(
                f"{path}:{lineno}: expected {arity} tab-separated fields, got {len(fields)}"
            )
        rows.append(fields)
    return rows


def load_corpus(events_path: str | Path, labels_path: str | Path | None = None) -> Corpus:
    """Build a Corpus from an events TSV and an optional labels TSV.

    Vocabularies are assigned in first-appearance order. Patients that occur
    only in the labels file get empty token lists; patients without a labels
    row stay unlabeled.
    """
    code_vocab = Vocabulary()
    specialist_vocab = Vocabulary()
    patients: dict[str, PatientRecord] = {}

    for pid, code, spec in _read_tsv_rows(events_path, arity=3):
        rec = patients.get(pid)
        if rec is None:
            rec = PatientRecord(patient_id=pid)
            patients[pid] = rec
        rec.tokens.append(Token(code_vocab.add(code), specialist_vocab.add(spec)))

    if labels_path is not None:
        for pid, label in load_labels(labels_path):
            rec = patients.get(pid)
            if rec is None:
                rec = PatientRecord(patient_id=pid)
                patients[pid] = rec
            rec.label = label

    return Corpus(list(patients.values()), code_vocab, specialist_vocab)


def load_labels(labels_path: str | Path) -> list[tuple[str, int]]:
    """Parse a labels TSV into (patient_id, 0|1) pairs, in file order."""
    out: list[tuple[str, int]] = []
    seen: set[str] = set()
    for rowno, (pid, raw) in enumerate(_read_tsv_rows(labels_path, arity=2)):
        try:
            label = int(raw)
        except ValueError:
            if rowno == 0:
                continue  # header row: non-numeric label column
            raise CorpusError(f"labels row for {pid!r}: non-numeric label {raw!r}")
        if label not in (0, 1):
            raise CorpusError(f"labels row for {pid!r}: label must be 0 or 1, got {raw!r}")
        if pid in seen:
            raise CorpusError(f"duplicate patient_id {pid!r} in labels file")
        seen.add(pid)
        out.append((pid, label))
    return out


def write_corpus(corpus: Corpus, events_path: str | Path, labels_path: str | Path | None = None) -> None:
    """Write events (and labels, when a path is given) in the TSV formats above.

    Tokens are written in patient order, so reloading a corpus whose
    vocabularies were built by `load_corpus` reproduces identical indices.
    """
    with open(events_path, "w", encoding="utf-8") as fh:
        for rec in corpus.patients:
            for tok in rec.tokens:
                fh.write(
                    f"{rec.patient_id}\t{corpus.code_vocab[tok.code_id]}"
                    f"\t{corpus.specialist_vocab[tok.specialist_id]}\n"
                )
    if labels_path is not None:
        with open(labels_path, "w", encoding="utf-8") as fh:
            for rec in corpus.patients:
                if rec.label is not None:
                    fh.write(f"{rec.patient_id}\t{rec.label}\n")


def validate_corpus(corpus: Corpus) -> ValidationReport:
    """Count tokens / empty patients / label base rate; raise on index violations."""
    ids = set()
    n_tokens = 0
    n_empty = 0
    labels = []
    V, T = corpus.n_codes, corpus.n_specialists
    for rec in corpus.patients:
        if rec.patient_id in ids:
            raise CorpusError(f"duplicate patient_id {rec.patient_id!r}")
        ids.add(rec.patient_id)
        if not rec.tokens:
            n_empty += 1
        for tok in rec.tokens:
            if not (0 <= tok.code_id < V):
                raise CorpusError(
                    f"patient {rec.patient_id!r}: code_id {tok.code_id} out of range [0, {V})"
                )
            if not (0 <= tok.specialist_id < T):
                raise CorpusError(
                    f"patient {rec.patient_id!r}: specialist_id {tok.specialist_id} "
                    f"out of range [0, {T})"
                )
            n_tokens += 1
        if rec.label is not None:
            labels.append(rec.label)
    base_rate = float(np.mean(labels)) if labels else float("nan")
    return ValidationReport(
        n_patients=corpus.n_patients,
        n_tokens=n_tokens,
        n_labeled=len(labels),
        label_base_rate=base_rate,
        n_empty_patients=n_empty,
    )


def split_corpus(
    corpus: Corpus, train_frac: float, valid_frac: float, seed: int
) -> tuple[Corpus, Corpus, Corpus]:
    """Patient-level split into train/valid/test by a seeded shuffle.

    Sizes are floor(D * train_frac), floor(D * valid_frac), remainder.
    All three splits share the parent corpus vocabulary objects.
    """
    if train_frac <= 0 or valid_frac <= 0:
        raise ValueError("split fractions must be positive")
    if train_frac + valid_frac >= 1:
        raise ValueError("train_frac + valid_frac must be < 1")
    D = corpus.n_patients
    order = np.random.Generator(np.random.PCG64(seed)).permutation(D)
    n_train = math.floor(D * train_frac)
    n_valid = math.floor(D * valid_frac)
    parts = (
        order[:n_train],
        order[n_train : n_train + n_valid],
        order[n_train + n_valid :],
    )
    return tuple(
        Corpus(
            [corpus.patients[i] for i in part],
            corpus.code_vocab,
            corpus.specialist_vocab,
        )
        for part in parts
    )
