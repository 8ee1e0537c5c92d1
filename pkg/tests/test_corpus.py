import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mixtopic.corpus import (
    Corpus,
    CorpusError,
    PatientRecord,
    Token,
    Vocabulary,
    load_corpus,
    split_corpus,
    validate_corpus,
    write_corpus,
)


def write_files(tmp_path, events_rows, labels_rows=None):
    events = tmp_path / "events.tsv"
    events.write_text("".join("\t".join(r) + "\n" for r in events_rows))
    labels = None
    if labels_rows is not None:
        labels = tmp_path / "labels.tsv"
        labels.write_text("".join("\t".join(r) + "\n" for r in labels_rows))
    return events, labels


def test_load_basic(tmp_path):
    events, labels = write_files(
        tmp_path, [("p1", "c1", "s1"), ("p1", "c2", "s1")], [("p1", "1")]
    )
    corpus = load_corpus(events, labels)
    assert corpus.n_patients == 1
    assert corpus.n_codes == 2
    assert corpus.n_specialists == 1
    assert corpus.patients[0].n_tokens == 2
    assert corpus.patients[0].label == 1


def test_load_repeated_rows_are_repeated_tokens(tmp_path):
    events, _ = write_files(tmp_path, [("p1", "c1", "s1"), ("p1", "c1", "s1")])
    corpus = load_corpus(events)
    assert corpus.patients[0].n_tokens == 2
    assert corpus.patients[0].tokens[0] == corpus.patients[0].tokens[1]


def test_load_non_binary_label_rejected(tmp_path):
    events, labels = write_files(tmp_path, [("p1", "c1", "s1")], [("p1", "2")])
    with pytest.raises(CorpusError, match="0 or 1"):
        load_corpus(events, labels)


def test_load_labels_header_detected(tmp_path):
    events, labels = write_files(
        tmp_path, [("p1", "c1", "s1")], [("patient_id", "label"), ("p1", "0")]
    )
    corpus = load_corpus(events, labels)
    assert corpus.patients[0].label == 0


def test_load_duplicate_label_row_rejected(tmp_path):
    events, labels = write_files(
        tmp_path, [("p1", "c1", "s1")], [("p1", "0"), ("p1", "1")]
    )
    with pytest.raises(CorpusError, match="duplicate"):
        load_corpus(events, labels)


def test_load_wrong_arity_rejected(tmp_path):
    events = tmp_path / "events.tsv"
    events.write_text("p1\tc1\n")
    with pytest.raises(CorpusError, match="3 tab-separated"):
        load_corpus(events)


def test_load_missing_file(tmp_path):
    with pytest.raises(CorpusError, match="cannot read"):
        load_corpus(tmp_path / "nope.tsv")


def test_labels_only_patient_gets_empty_tokens(tmp_path):
    events, labels = write_files(
        tmp_path, [("p1", "c1", "s1")], [("p1", "1"), ("p2", "0")]
    )
    corpus = load_corpus(events, labels)
    by_id = {p.patient_id: p for p in corpus.patients}
    assert by_id["p2"].n_tokens == 0
    assert by_id["p2"].label == 0
    assert by_id["p1"].label == 1


def test_unlabeled_patient_stays_unlabeled(tmp_path):
    events, labels = write_files(
        tmp_path, [("p1", "c1", "s1"), ("p2", "c1", "s1")], [("p1", "1")]
    )
    corpus = load_corpus(events, labels)
    by_id = {p.patient_id: p for p in corpus.patients}
    assert by_id["p2"].label is None


def test_token_count_matches_event_rows(tmp_path):
    rows = [("p%d" % (i % 3), "c%d" % (i % 5), "s%d" % (i % 2)) for i in range(37)]
    events, _ = write_files(tmp_path, rows)
    corpus = load_corpus(events)
    assert corpus.n_tokens == len(rows)


def test_validate_counts(tmp_path):
    events, labels = write_files(
        tmp_path, [("p1", "c1", "s1"), ("p1", "c2", "s1")], [("p1", "1")]
    )
    report = validate_corpus(load_corpus(events, labels))
    assert report.n_tokens == 2
    assert report.label_base_rate == 1.0
    assert report.n_empty_patients == 0


def test_validate_base_rate_over_labeled_subset_only(tmp_path):
    events, labels = write_files(
        tmp_path,
        [("p1", "c1", "s1"), ("p2", "c1", "s1"), ("p3", "c1", "s1")],
        [("p1", "1"), ("p2", "0")],
    )
    report = validate_corpus(load_corpus(events, labels))
    assert report.n_labeled == 2
    assert report.label_base_rate == 0.5


def test_validate_out_of_range_index_fatal():
    corpus = Corpus(
        [PatientRecord("p1", [Token(1, 0)])],
        Vocabulary(["c0"]),
        Vocabulary(["s0"]),
    )
    with pytest.raises(CorpusError, match="out of range"):
        validate_corpus(corpus)


def make_corpus(D):
    patients = [
        PatientRecord(f"p{j}", [Token(j % 3, j % 2)], label=j % 2) for j in range(D)
    ]
    return Corpus(patients, Vocabulary(["c0", "c1", "c2"]), Vocabulary(["s0", "s1"]))


def test_split_sizes_70_10_20():
    train, valid, test = split_corpus(make_corpus(10), 0.7, 0.1, seed=0)
    assert (train.n_patients, valid.n_patients, test.n_patients) == (7, 1, 2)


def test_split_deterministic():
    corpus = make_corpus(23)
    a = split_corpus(corpus, 0.6, 0.2, seed=11)
    b = split_corpus(corpus, 0.6, 0.2, seed=11)
    for left, right in zip(a, b):
        assert [p.patient_id for p in left.patients] == [p.patient_id for p in right.patients]


def test_split_bad_fractions():
    with pytest.raises(ValueError):
        split_corpus(make_corpus(5), 0.9, 0.2, seed=0)
    with pytest.raises(ValueError):
        split_corpus(make_corpus(5), -0.1, 0.5, seed=0)


def test_split_shares_vocabulary_objects():
    corpus = make_corpus(9)
    train, valid, test = split_corpus(corpus, 0.5, 0.2, seed=3)
    assert train.code_vocab is corpus.code_vocab
    assert test.specialist_vocab is corpus.specialist_vocab


@settings(max_examples=40, deadline=None)
@given(
    D=st.integers(min_value=3, max_value=60),
    train_frac=st.floats(min_value=0.1, max_value=0.7),
    valid_frac=st.floats(min_value=0.05, max_value=0.25),
    seed=st.integers(min_value=0, max_value=2**31),
)
def test_split_partitions(D, train_frac, valid_frac, seed):
    corpus = make_corpus(D)
    parts = split_corpus(corpus, train_frac, valid_frac, seed)
    ids = [p.patient_id for part in parts for p in part.patients]
    assert len(ids) == D
    assert set(ids) == {p.patient_id for p in corpus.patients}


def test_round_trip_preserves_indices_and_labels(tmp_path):
    rows = [
        ("a", "x", "s"), ("b", "y", "t"), ("a", "y", "s"),
        ("c", "z", "t"), ("b", "x", "u"),
    ]
    events, labels = write_files(tmp_path, rows, [("a", "1"), ("c", "0")])
    corpus = load_corpus(events, labels)
    write_corpus(corpus, tmp_path / "e2.tsv", tmp_path / "l2.tsv")
    again = load_corpus(tmp_path / "e2.tsv", tmp_path / "l2.tsv")
    assert again.code_vocab == corpus.code_vocab
    assert again.specialist_vocab == corpus.specialist_vocab
    for p, q in zip(corpus.patients, again.patients):
        assert p.patient_id == q.patient_id
        assert p.label == q.label
        assert p.tokens == q.tokens
