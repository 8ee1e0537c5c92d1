import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mixtopic.corpus import Corpus, PatientRecord, Token, Vocabulary
from mixtopic.evaluation import ScoredLabels, auprc, auroc, perplexity, topic_recovery

from test_probit import uniform_model


def test_auroc_perfect_ranking():
    scored = ScoredLabels(scores=[0.9, 0.8, 0.2, 0.1], labels=[1, 1, 0, 0])
    assert auroc(scored) == 1.0


def test_auroc_reversed_ranking():
    scored = ScoredLabels(scores=[0.1, 0.2, 0.8, 0.9], labels=[1, 1, 0, 0])
    assert auroc(scored) == 0.0


def test_auroc_ties_count_half():
    scored = ScoredLabels(scores=[0.5, 0.5], labels=[1, 0])
    assert auroc(scored) == 0.5


def test_auroc_null_scores_near_half():
    rng = np.random.default_rng(0)
    scored = ScoredLabels(scores=rng.random(10_000), labels=rng.integers(0, 2, 10_000))
    assert abs(auroc(scored) - 0.5) < 0.02


def test_auroc_single_class_rejected():
    with pytest.raises(ValueError):
        auroc(ScoredLabels(scores=[0.1, 0.2], labels=[1, 1]))


@settings(max_examples=50, deadline=None)
@given(
    st.lists(
        # integer-valued scores keep every transform exactly injective in
        # floating point, so no artificial ties appear
        st.tuples(st.integers(-50, 50), st.integers(0, 1)), min_size=4, max_size=60
    ).filter(lambda rows: {lab for _, lab in rows} == {0, 1}),
    st.sampled_from(["affine", "exp", "cube"]),
)
def test_auroc_invariant_under_increasing_transforms(rows, transform):
    scores = np.array([float(s) for s, _ in rows])
    labels = np.array([lab for _, lab in rows])
    fn = {
        "affine": lambda x: 3.0 * x + 7.0,
        "exp": lambda x: np.exp(x / 25.0),
        "cube": lambda x: x**3 + x,
    }[transform]
    base = auroc(ScoredLabels(scores, labels))
    assert auroc(ScoredLabels(fn(scores), labels)) == pytest.approx(base, abs=1e-12)


@settings(max_examples=50, deadline=None)
@given(
    st.lists(st.integers(0, 1), min_size=4, max_size=40).filter(lambda ls: 0 < sum(ls) < len(ls)),
    st.integers(0, 2**31),
)
def test_auroc_negation_complement(labels, seed):
    rng = np.random.default_rng(seed)
    scores = rng.permutation(len(labels)).astype(float)  # distinct scores, no ties
    labels = np.array(labels)
    total = auroc(ScoredLabels(scores, labels)) + auroc(ScoredLabels(-scores, labels))
    assert total == pytest.approx(1.0, abs=1e-12)


def test_auprc_perfect_ranking():
    scored = ScoredLabels(scores=[0.9, 0.8, 0.2, 0.1], labels=[1, 1, 0, 0])
    assert auprc(scored) == 1.0


def test_auprc_single_positive_ranked_first():
    scored = ScoredLabels(scores=[0.99, 0.5, 0.4, 0.3], labels=[1, 0, 0, 0])
    assert auprc(scored) == 1.0


def test_auprc_equal_scores_approach_base_rate():
    rng = np.random.default_rng(1)
    labels = (rng.random(10_000) < 0.3).astype(int)
    scored = ScoredLabels(scores=np.zeros(10_000), labels=labels)
    values = [auprc(scored, seed=s) for s in range(5)]
    assert abs(np.mean(values) - labels.mean()) < 0.02


def test_auprc_requires_a_positive():
    with pytest.raises(ValueError):
        auprc(ScoredLabels(scores=[0.4, 0.2], labels=[0, 0]))


def corpus_one_token():
    return Corpus(
        [PatientRecord("p", [Token(0, 0)])],
        Vocabulary(["c0"]),
        Vocabulary(["s0"]),
    )


def test_perplexity_uniform_model_equals_tv():
    model = uniform_model(K=3, T=4, V=11)
    corpus, _ = _random_heldout(model, n_patients=6, seed=0)
    assert perplexity(model, corpus) == pytest.approx(4 * 11, rel=1e-10)


def _random_heldout(model, n_patients, seed):
    rng = np.random.default_rng(seed)
    patients = []
    for j in range(n_patients):
        tokens = [
            Token(int(rng.integers(0, model.V)), int(rng.integers(0, model.T)))
            for _ in range(int(rng.integers(1, 6)))
        ]
        patients.append(PatientRecord(f"h{j}", tokens))
    corpus = Corpus(
        patients,
        Vocabulary([f"c{w}" for w in range(model.V)]),
        Vocabulary([f"s{t}" for t in range(model.T)]),
    )
    return corpus, rng


def test_perplexity_hand_computed_single_token():
    model = uniform_model(K=1, T=2, V=10)
    model.estimates.beta_hat[:] = [[0.5, 0.5]]
    model.estimates.eta_values[:] = 0.1
    assert perplexity(model, corpus_one_token()) == pytest.approx(1 / (0.5 * 0.1), rel=1e-12)


def test_perplexity_invariant_to_patient_and_token_order():
    model = uniform_model(K=2, T=3, V=7)
    rng = np.random.default_rng(3)
    model.estimates.beta_hat[:] = rng.dirichlet(np.ones(3), size=2)
    model.estimates.eta_values[:] = rng.random(model.estimates.eta_values.shape) + 0.05
    corpus, _ = _random_heldout(model, n_patients=5, seed=4)
    base = perplexity(model, corpus)
    shuffled = Corpus(
        [
            PatientRecord(p.patient_id, list(reversed(p.tokens)), p.label)
            for p in reversed(corpus.patients)
        ],
        corpus.code_vocab,
        corpus.specialist_vocab,
    )
    # token order only matters through the fold-in stopping tolerance (1e-6)
    assert perplexity(model, shuffled) == pytest.approx(base, rel=1e-6)


def test_perplexity_rejects_empty():
    model = uniform_model(K=2, T=2, V=2)
    with pytest.raises(ValueError):
        perplexity(model, Corpus([], Vocabulary(["c0"]), Vocabulary(["s0"])))


def test_topic_recovery_identity():
    rng = np.random.default_rng(5)
    theta = rng.dirichlet(np.ones(4), size=100)
    report = topic_recovery(theta, theta)
    assert np.allclose(np.diag(report.correlation), 1.0)
    assert report.matched_mean == pytest.approx(1.0, abs=1e-12)


def test_topic_recovery_unpicks_column_permutation():
    rng = np.random.default_rng(6)
    theta = rng.dirichlet(np.ones(5), size=200)
    perm = np.array([3, 0, 4, 2, 1])
    report = topic_recovery(theta[:, perm], theta)
    assert report.matched_mean == pytest.approx(1.0, abs=1e-12)
    assert np.array_equal(report.matching, perm)


def test_topic_recovery_null_is_weak():
    rng = np.random.default_rng(7)
    a = rng.dirichlet(np.ones(25), size=2500)
    b = rng.dirichlet(np.ones(25), size=2500)
    assert topic_recovery(a, b).matched_mean < 0.2


def test_topic_recovery_invariant_to_joint_permutation():
    rng = np.random.default_rng(8)
    a = rng.dirichlet(np.ones(4), size=150)
    b = rng.dirichlet(np.ones(4), size=150)
    perm = np.array([2, 3, 1, 0])
    base = topic_recovery(a, b).matched_mean
    assert topic_recovery(a[:, perm], b[:, perm]).matched_mean == pytest.approx(base, abs=1e-12)


def test_topic_recovery_zero_variance_column_is_zero_correlation():
    rng = np.random.default_rng(9)
    a = rng.dirichlet(np.ones(3), size=50)
    b = a.copy()
    a[:, 0] = 0.25  # constant column: correlation defined as 0
    report = topic_recovery(a, b)
    assert np.allclose(report.correlation[0, :], 0.0)
