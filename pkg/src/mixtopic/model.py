"""Learnable state for the multi-specialist topic model.

State is split into per-token topic responsibilities (gamma), aggregated
sufficient statistics (patient x topic `n`, specialist x topic `m`, and the
(topic, specialist, code) map `p`), the Gaussian posterior of the label
regression, and the Dirichlet/precision hyperparameters. The (specialist,
code) axis of `p` is sparse because the observed pairs are a small fraction
of T*V in diagnosis data; the topic axis is dense.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .corpus import Corpus, PatientRecord, Vocabulary


@dataclass
class GammaPriorConstants:
    """Fixed Gamma-prior constants (c, d) for the three Dirichlet hyperparameters."""

    c_alpha: float = 1.0
    d_alpha: float = 10.0
    c_iota: float = 0.001
    d_iota: float = 0.01
    c_zeta: float = 2.0
    d_zeta: float = 100.0

    def astuple(self) -> tuple[float, float, float, float, float, float]:
        return (self.c_alpha, self.d_alpha, self.c_iota, self.d_iota, self.c_zeta, self.d_zeta)


@dataclass
class Hyperparameters:
    alpha: np.ndarray  # (K,) topic concentration
    iota: np.ndarray  # (T,) specialist concentration
    zeta: np.ndarray  # (K, V) code concentration, shared across specialists
    tau: float  # fixed precision of the regression-coefficient prior
    prior_constants: GammaPriorConstants = field(default_factory=GammaPriorConstants)

    def copy(self) -> "Hyperparameters":
        return Hyperparameters(
            self.alpha.copy(), self.iota.copy(), self.zeta.copy(), self.tau, self.prior_constants
        )


class TokenIndex:
    """Flat token-array view of a corpus, shared by the inference kernels.

    Tokens are laid out patient by patient; `offsets[j]:offsets[j+1]` is the
    token range of patient j. Each distinct observed (specialist, code) pair
    gets a dense row id so the sparse `p` statistic can live in one array.
    """

    def __init__(self, corpus: Corpus):
        D = corpus.n_patients
        N = corpus.n_tokens
        self.n_patients = D
        self.n_tokens = N
        self.n_codes = corpus.n_codes
        self.n_specialists = corpus.n_specialists
        self.patient_idx = np.empty(N, dtype=np.int64)
        self.code = np.empty(N, dtype=np.int64)
        self.specialist = np.empty(N, dtype=np.int64)
        self.pair = np.empty(N, dtype=np.int64)
        self.offsets = np.zeros(D + 1, dtype=np.int64)
        self.doc_len = np.zeros(D, dtype=np.int64)
        self.labels = np.full(D, -1, dtype=np.int64)  # -1 marks unlabeled
        pair_ids: dict[tuple[int, int], int] = {}
        pos = 0
        for j, rec in enumerate(corpus.patients):
            self.offsets[j] = pos
            self.doc_len[j] = rec.n_tokens
            if rec.label is not None:
                self.labels[j] = rec.label
            for tok in rec.tokens:
                key = (tok.specialist_id, tok.code_id)
                pid = pair_ids.get(key)
                if pid is None:
                    pid = len(pair_ids)
                    pair_ids[key] = pid
                self.patient_idx[pos] = j
                self.code[pos] = tok.code_id
                self.specialist[pos] = tok.specialist_id
                self.pair[pos] = pid
                pos += 1
        self.offsets[D] = pos
        self.pair_ids = pair_ids
        self.pairs = np.array(list(pair_ids.keys()), dtype=np.int64).reshape(len(pair_ids), 2)
        self.labeled = self.labels >= 0

    def token_range(self, j: int) -> tuple[int, int]:
        return int(self.offsets[j]), int(self.offsets[j + 1])


class Responsibilities:
    """Ragged per-token topic responsibilities backed by one (N, K) array."""

    def __init__(self, flat: np.ndarray, offsets: np.ndarray):
        self.flat = flat
        self.offsets = offsets

    def __getitem__(self, j: int) -> np.ndarray:
        """(M_j, K) view for patient j; writes go straight to the backing array."""
        return self.flat[self.offsets[j] : self.offsets[j + 1]]

    @property
    def n_topics(self) -> int:
        return self.flat.shape[1]


class SparsePairCounts:
    """Map (specialist, code) -> K-vector of expected counts, dense over topics."""

    def __init__(self, pair_ids: dict[tuple[int, int], int], values: np.ndarray):
        self.pair_ids = pair_ids
        self.values = values  # (n_pairs, K)

    def get(self, specialist: int, code: int) -> np.ndarray | None:
        row = self.pair_ids.get((specialist, code))
        return None if row is None else self.values[row]

    def total(self) -> float:
        return float(self.values.sum())

    def copy(self) -> "SparsePairCounts":
        return SparsePairCounts(self.pair_ids, self.values.copy())


@dataclass
class SufficientStats:
    n: np.ndarray  # (D, K)
    m: np.ndarray  # (T, K)
    p: SparsePairCounts
    total_tokens: int

    def copy(self) -> "SufficientStats":
        return SufficientStats(self.n.copy(), self.m.copy(), self.p.copy(), self.total_tokens)


@dataclass
class RegressionState:
    mean: np.ndarray  # (K,)
    covariance: np.ndarray  # (K, K), symmetric positive definite
    liability_mean: np.ndarray  # (D,), meaningful where labeled
    expected_g: np.ndarray  # (D,), meaningful where labeled

    def copy(self) -> "RegressionState":
        return RegressionState(
            self.mean.copy(),
            self.covariance.copy(),
            self.liability_mean.copy(),
            self.expected_g.copy(),
        )


@dataclass
class ModelState:
    K: int
    hyper: Hyperparameters
    resp: Responsibilities
    stats: SufficientStats
    reg: RegressionState
    supervised: bool
    index: TokenIndex


@dataclass
class InitConfig:
    alpha0: float = 0.1
    iota0: float = 0.1
    zeta0: float = 0.01
    tau: float = 1.0
    prior_constants: GammaPriorConstants = field(default_factory=GammaPriorConstants)


def init_state(
    corpus: Corpus, K: int, seed: int, config: InitConfig | None = None, supervised: bool = True
) -> ModelState:
    """Seeded state: gamma rows ~ Dirichlet(1), stats aggregated, prior regression."""
    if K < 1:
        raise ValueError(f"K must be >= 1, got {K}")
    config = config or InitConfig()
    index = TokenIndex(corpus)
    rng = np.random.Generator(np.random.PCG64(seed))
    flat = (
        rng.dirichlet(np.ones(K), size=index.n_tokens)
        if index.n_tokens
        else np.zeros((0, K))
    )
    flat /= flat.sum(axis=1, keepdims=True) if index.n_tokens else 1.0
    resp = Responsibilities(flat, index.offsets)
    hyper = Hyperparameters(
        alpha=np.full(K, config.alpha0),
        iota=np.full(index.n_specialists, config.iota0),
        zeta=np.full((K, index.n_codes), config.zeta0),
        tau=config.tau,
        prior_constants=config.prior_constants,
    )
    from .probit import truncated_normal_mean

    D = index.n_patients
    reg = RegressionState(
        mean=np.zeros(K),
        covariance=np.eye(K) / config.tau,
        liability_mean=np.zeros(D),
        expected_g=np.zeros(D),
    )
    for j in np.flatnonzero(index.labeled):
        reg.expected_g[j] = truncated_normal_mean(0.0, int(index.labels[j]))
    state = ModelState(
        K=K,
        hyper=hyper,
        resp=resp,
        stats=None,  # filled below
        reg=reg,
        supervised=supervised,
        index=index,
    )
    state.stats = recompute_stats(state, corpus)
    return state


def recompute_stats(state: ModelState, corpus: Corpus) -> SufficientStats:
    """Direct summation of gamma over tokens; the consistency oracle for the
    incrementally maintained statistics."""
    index = state.index
    if index.n_tokens != corpus.n_tokens or index.n_patients != corpus.n_patients:
        raise ValueError("state and corpus shapes do not match")
    K = state.K
    flat = state.resp.flat
    n = np.zeros((index.n_patients, K))
    m = np.zeros((index.n_specialists, K))
    p = np.zeros((len(index.pair_ids), K))
    np.add.at(n, index.patient_idx, flat)
    np.add.at(m, index.specialist, flat)
    np.add.at(p, index.pair, flat)
    return SufficientStats(n, m, SparsePairCounts(index.pair_ids, p), index.n_tokens)


def permute_topics(state: ModelState, perm: np.ndarray) -> ModelState:
    """Relabel topics: axis position k of the result holds old topic perm[k]."""
    perm = np.asarray(perm)
    if sorted(perm.tolist()) != list(range(state.K)):
        raise ValueError("perm must be a permutation of range(K)")
    resp = Responsibilities(state.resp.flat[:, perm].copy(), state.resp.offsets)
    hyper = Hyperparameters(
        alpha=state.hyper.alpha[perm].copy(),
        iota=state.hyper.iota.copy(),
        zeta=state.hyper.zeta[perm, :].copy(),
        tau=state.hyper.tau,
        prior_constants=state.hyper.prior_constants,
    )
    stats = SufficientStats(
        n=state.stats.n[:, perm].copy(),
        m=state.stats.m[:, perm].copy(),
        p=SparsePairCounts(state.stats.p.pair_ids, state.stats.p.values[:, perm].copy()),
        total_tokens=state.stats.total_tokens,
    )
    reg = RegressionState(
        mean=state.reg.mean[perm].copy(),
        covariance=state.reg.covariance[np.ix_(perm, perm)].copy(),
        liability_mean=state.reg.liability_mean.copy(),
        expected_g=state.reg.expected_g.copy(),
    )
    return ModelState(
        K=state.K,
        hyper=hyper,
        resp=resp,
        stats=stats,
        reg=reg,
        supervised=state.supervised,
        index=state.index,
    )


@dataclass
class TopicEstimates:
    """Point estimates of the mixing proportions.

    `eta_values[r]` holds the K estimates for observed pair r = (t, w);
    unobserved pairs fall back to zeta[:, w] / eta_denom[:, t], which is why
    the denominators are kept alongside the sparse values.
    """

    theta_hat: np.ndarray  # (D, K) row-stochastic
    beta_hat: np.ndarray  # (K, T) row-stochastic
    eta_pairs: dict[tuple[int, int], int]
    eta_values: np.ndarray  # (n_pairs, K)
    eta_denom: np.ndarray  # (K, T)


FORMAT_VERSION = 1


@dataclass
class TrainedModel:
    """Everything a fold-in / prediction / evaluation consumer needs.

    Raw per-token responsibilities are not persisted; held-out mixtures are
    re-derived by fold-in against the frozen estimates.
    """

    K: int
    V: int
    T: int
    code_vocab: Vocabulary
    specialist_vocab: Vocabulary
    alpha: np.ndarray
    iota: np.ndarray
    zeta: np.ndarray  # (K, V)
    tau: float
    reg_mean: np.ndarray  # (K,)
    reg_cov: np.ndarray  # (K, K)
    patient_ids: list[str]
    estimates: TopicEstimates
    supervised: bool = True

    def eta(self, specialist: int, code: int) -> np.ndarray:
        """K-vector of code probabilities for one (specialist, code) pair."""
        row = self.estimates.eta_pairs.get((specialist, code))
        if row is not None:
            return self.estimates.eta_values[row]
        return self.zeta[:, code] / self.estimates.eta_denom[:, specialist]

    def eta_row(self, k: int, t: int) -> np.ndarray:
        """Dense V-vector of code probabilities for topic k and specialist t."""
        out = self.zeta[k, :] / self.estimates.eta_denom[k, t]
        for (tt, w), row in self.estimates.eta_pairs.items():
            if tt == t:
                out[w] = self.estimates.eta_values[row, k]
        return out

    def to_dict(self) -> dict:
        est = self.estimates
        eta_entries = [
            [int(k), int(t), int(w), float(est.eta_values[row, k])]
            for (t, w), row in est.eta_pairs.items()
            for k in range(self.K)
        ]
        return {
            "format_version": FORMAT_VERSION,
            "K": self.K,
            "V": self.V,
            "T": self.T,
            "supervised": self.supervised,
            "code_vocab": self.code_vocab.items(),
            "specialist_vocab": self.specialist_vocab.items(),
            "hyperparameters": {
                "alpha": self.alpha.tolist(),
                "iota": self.iota.tolist(),
                "zeta": self.zeta.tolist(),
                "tau": self.tau,
            },
            "regression": {
                "mean": self.reg_mean.tolist(),
                "covariance": self.reg_cov.flatten().tolist(),  # row-major
            },
            "patient_ids": self.patient_ids,
            "theta_hat": est.theta_hat.tolist(),
            "beta_hat": est.beta_hat.tolist(),
            "eta_hat": {
                "entries": eta_entries,  # (k, t, w, value) tuples
                "denominators": est.eta_denom.tolist(),  # (K, T)
            },
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "TrainedModel":
        if doc.get("format_version") != FORMAT_VERSION:
            raise ValueError(f"unsupported model format_version {doc.get('format_version')!r}")
        K, V, T = doc["K"], doc["V"], doc["T"]
        pairs: dict[tuple[int, int], int] = {}
        for k, t, w, _ in doc["eta_hat"]["entries"]:
            pairs.setdefault((t, w), len(pairs))
        eta_values = np.zeros((len(pairs), K))
        for k, t, w, value in doc["eta_hat"]["entries"]:
            eta_values[pairs[(t, w)], k] = value
        est = TopicEstimates(
            theta_hat=np.asarray(doc["theta_hat"], dtype=float).reshape(-1, K),
            beta_hat=np.asarray(doc["beta_hat"], dtype=float).reshape(K, T),
            eta_pairs=pairs,
            eta_values=eta_values,
            eta_denom=np.asarray(doc["eta_hat"]["denominators"], dtype=float).reshape(K, T),
        )
        return cls(
            K=K,
            V=V,
            T=T,
            code_vocab=Vocabulary(doc["code_vocab"]),
            specialist_vocab=Vocabulary(doc["specialist_vocab"]),
            alpha=np.asarray(doc["hyperparameters"]["alpha"], dtype=float),
            iota=np.asarray(doc["hyperparameters"]["iota"], dtype=float),
            zeta=np.asarray(doc["hyperparameters"]["zeta"], dtype=float).reshape(K, V),
            tau=float(doc["hyperparameters"]["tau"]),
            reg_mean=np.asarray(doc["regression"]["mean"], dtype=float),
            reg_cov=np.asarray(doc["regression"]["covariance"], dtype=float).reshape(K, K),
            patient_ids=list(doc["patient_ids"]),
            estimates=est,
            supervised=bool(doc.get("supervised", True)),
        )

    def save(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def load(cls, path: str | Path) -> "TrainedModel":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def build_trained_model(state: ModelState, corpus: Corpus, estimates: TopicEstimates) -> TrainedModel:
    return TrainedModel(
        K=state.K,
        V=corpus.n_codes,
        T=corpus.n_specialists,
        code_vocab=corpus.code_vocab,
        specialist_vocab=corpus.specialist_vocab,
        alpha=state.hyper.alpha.copy(),
        iota=state.hyper.iota.copy(),
        zeta=state.hyper.zeta.copy(),
        tau=state.hyper.tau,
        reg_mean=state.reg.mean.copy(),
        reg_cov=state.reg.covariance.copy(),
        patient_ids=[p.patient_id for p in corpus.patients],
        estimates=estimates,
        supervised=state.supervised,
    )
