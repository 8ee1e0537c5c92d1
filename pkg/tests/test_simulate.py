import numpy as np
import pytest

from mixtopic.simulate import SimConfig, load_truth, simulate, write_truth


def test_dimensions_match_config():
    cfg = SimConfig(n_patients=50, n_codes=30, n_specialists=5, n_topics=4,
                    tokens_per_patient=(3, 8), seed=0)
    corpus, truth = simulate(cfg)
    assert corpus.n_patients == 50
    assert corpus.n_codes == 30
    assert corpus.n_specialists == 5
    assert truth.theta.shape == (50, 4)
    assert truth.beta.shape == (4, 5)
    assert truth.eta.shape == (4, 5, 30)


def test_deterministic_given_seed():
    cfg = SimConfig(n_patients=25, n_codes=15, n_specialists=3, n_topics=3, seed=42,
                    tokens_per_patient=(2, 6))
    c1, t1 = simulate(cfg)
    c2, t2 = simulate(cfg)
    assert [p.tokens for p in c1.patients] == [p.tokens for p in c2.patients]
    assert [p.label for p in c1.patients] == [p.label for p in c2.patients]
    assert np.array_equal(t1.theta, t2.theta)
    assert np.array_equal(t1.g, t2.g)


def test_labels_consistent_with_liability_sign():
    corpus, truth = simulate(
        SimConfig(n_patients=200, n_codes=20, n_specialists=4, n_topics=3,
                  tokens_per_patient=(1, 5), seed=9)
    )
    for patient, g in zip(corpus.patients, truth.g):
        assert patient.label == (1 if g > 0 else 0)


def test_token_counts_conserved():
    corpus, truth = simulate(
        SimConfig(n_patients=40, n_codes=10, n_specialists=2, n_topics=2,
                  tokens_per_patient=(0, 4), seed=3)
    )
    assert corpus.n_tokens == sum(len(z) for z in truth.z)
    for patient, z in zip(corpus.patients, truth.z):
        assert patient.n_tokens == len(z)


def test_zero_coefficients_give_half_base_rate():
    cfg = SimConfig(n_patients=100_000, n_codes=5, n_specialists=2, n_topics=2,
                    tokens_per_patient=1, seed=11)
    corpus, _ = simulate(cfg, w_override=np.zeros(2))
    rate = np.mean([p.label for p in corpus.patients])
    sigma = 0.5 / np.sqrt(cfg.n_patients)
    assert abs(rate - 0.5) < 3 * sigma


def test_token_frequencies_match_marginals():
    # empirical per-topic code frequencies vs sum_t beta[k,t] * eta[k,t,w]
    cfg = SimConfig(n_patients=25_000, n_codes=12, n_specialists=3, n_topics=2,
                    tokens_per_patient=40, alpha=0.5, seed=13)
    corpus, truth = simulate(cfg)
    marginal = np.einsum("kt,ktw->kw", truth.beta, truth.eta)
    counts = np.zeros((2, 12))
    for z, x in zip(truth.z, truth.x):
        for k, w in zip(z, x):
            counts[k, w] += 1
    for k in range(2):
        n_k = counts[k].sum()
        freq = counts[k] / n_k
        sigma = np.sqrt(marginal[k] * (1 - marginal[k]) / n_k)
        assert (np.abs(freq - marginal[k]) <= 3 * sigma + 1e-12).all()


def test_truth_round_trip(tmp_path):
    _, truth = simulate(
        SimConfig(n_patients=12, n_codes=8, n_specialists=2, n_topics=2,
                  tokens_per_patient=(2, 4), seed=5)
    )
    write_truth(truth, tmp_path / "truth.json")
    loaded = load_truth(tmp_path / "truth.json")
    assert np.array_equal(loaded.theta, truth.theta)
    assert np.array_equal(loaded.w, truth.w)
    assert all(np.array_equal(a, b) for a, b in zip(loaded.z, truth.z))
    assert loaded.patient_ids == truth.patient_ids


def test_config_validation():
    with pytest.raises(ValueError):
        simulate(SimConfig(n_patients=0))
    with pytest.raises(ValueError):
        simulate(SimConfig(alpha=0.0))
    with pytest.raises(ValueError):
        simulate(SimConfig(tokens_per_patient=(5, 2)))
