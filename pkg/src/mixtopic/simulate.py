"""Synthetic corpora drawn from the model's own generative process.

Per topic: a Dirichlet distribution over specialists and, per specialist, a
Dirichlet distribution over codes. Per patient: a Dirichlet topic mixture;
each token samples topic -> specialist -> code. The binary label thresholds
a unit-variance Gaussian liability centred on coefficients dotted with the
patient's average topic assignment.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .corpus import Corpus, PatientRecord, Token, Vocabulary


@dataclass
class SimConfig:
    n_patients: int = 2500
    n_codes: int = 750
    n_specialists: int = 48
    n_topics: int = 25
    tokens_per_patient: int | tuple[int, int] = (20, 60)  # int or inclusive uniform range
    alpha: float = 0.1  # patient-mixture concentration
    iota: float = 0.5  # topic-over-specialist concentration
    zeta: float = 0.05  # code concentration (small -> sparse, separable topics)
    tau: float = 0.04  # coefficient prior precision (std 5 -> strong label signal)
    seed: int = 0

    def validate(self) -> None:
        if min(self.n_patients, self.n_codes, self.n_specialists, self.n_topics) < 1:
            raise ValueError("all size parameters must be >= 1")
        if min(self.alpha, self.iota, self.zeta, self.tau) <= 0:
            raise ValueError("concentrations and tau must be positive")
        rng = self.token_range()
        if rng[0] < 0 or rng[1] < rng[0]:
            raise ValueError(f"bad tokens_per_patient range {rng}")

    def token_range(self) -> tuple[int, int]:
        tpp = self.tokens_per_patient
        return (tpp, tpp) if isinstance(tpp, int) else (int(tpp[0]), int(tpp[1]))


@dataclass
class GroundTruth:
    theta: np.ndarray  # (D, K)
    beta: np.ndarray  # (K, T)
    eta: np.ndarray  # (K, T, V)
    w: np.ndarray  # (K,)
    g: np.ndarray  # (D,)
    z: list[np.ndarray] = field(repr=False)  # per patient, token topic assignments
    b: list[np.ndarray] = field(repr=False)  # per patient, token specialists
    x: list[np.ndarray] = field(repr=False)  # per patient, token codes
    patient_ids: list[str] = field(default_factory=list)
    codes: list[str] = field(default_factory=list)
    specialists: list[str] = field(default_factory=list)


def simulate(config: SimConfig, w_override: np.ndarray | None = None) -> tuple[Corpus, GroundTruth]:
    """Sample a corpus plus its generating parameters, deterministically per seed.

    `w_override` pins the regression coefficients (e.g. to zero) for
    controlled experiments; everything else still follows the seed.
    """
    config.validate()
    D, V, T, K = config.n_patients, config.n_codes, config.n_specialists, config.n_topics
    rng = np.random.Generator(np.random.PCG64(config.seed))

    beta = rng.dirichlet(np.full(T, config.iota), size=K)  # (K, T)
    eta = rng.dirichlet(np.full(V, config.zeta), size=(K, T))  # (K, T, V)
    w = rng.normal(0.0, config.tau**-0.5, size=K) if w_override is None else np.asarray(w_override, dtype=float)

    lo, hi = config.token_range()
    beta_cdf = np.cumsum(beta, axis=1)
    eta_cdf = np.cumsum(eta, axis=2)

    theta = np.empty((D, K))
    g = np.empty(D)
    all_z: list[np.ndarray] = []
    all_b: list[np.ndarray] = []
    all_x: list[np.ndarray] = []
    patients: list[PatientRecord] = []
    # vocabularies pre-seeded in generator order so the corpus has the exact
    # configured dimensions even when rare codes are never sampled, and so
    # truth arrays share the corpus index space
    code_names = [f"c{wid}" for wid in range(V)]
    specialist_names = [f"s{t}" for t in range(T)]
    code_vocab = Vocabulary(code_names)
    specialist_vocab = Vocabulary(specialist_names)

    for j in range(D):
        theta[j] = rng.dirichlet(np.full(K, config.alpha))
        M = int(rng.integers(lo, hi + 1))
        z = rng.choice(K, size=M, p=theta[j]) if M else np.empty(0, dtype=np.int64)
        u_b = rng.random(M)
        b = np.array(
            [np.searchsorted(beta_cdf[z[i]], u_b[i], side="right") for i in range(M)],
            dtype=np.int64,
        )
        b = np.minimum(b, T - 1)  # guard the cdf[-1] < 1 float boundary
        u_x = rng.random(M)
        x = np.array(
            [np.searchsorted(eta_cdf[z[i], b[i]], u_x[i], side="right") for i in range(M)],
            dtype=np.int64,
        )
        x = np.minimum(x, V - 1)
        zbar = np.bincount(z, minlength=K) / M if M else np.zeros(K)
        g[j] = rng.normal(zbar @ w, 1.0)
        label = 1 if g[j] > 0 else 0
        tokens = [Token(int(x[i]), int(b[i])) for i in range(M)]
        patients.append(PatientRecord(patient_id=f"p{j}", tokens=tokens, label=label))
        all_z.append(z)
        all_b.append(b)
        all_x.append(x)

    corpus = Corpus(patients, code_vocab, specialist_vocab)
    truth = GroundTruth(
        theta=theta,
        beta=beta,
        eta=eta,
        w=w,
        g=g,
        z=all_z,
        b=all_b,
        x=all_x,
        patient_ids=[p.patient_id for p in patients],
        codes=code_names,
        specialists=specialist_names,
    )
    return corpus, truth


def write_truth(truth: GroundTruth, path: str | Path) -> None:
    """Companion JSON with the generating parameters and per-token assignments.

    Arrays are indexed in generator space; `codes`/`specialists` carry the
    name of each index. A corpus reloaded from TSV rebuilds vocabularies in
    first-appearance order, so joins against the truth should go by name.
    """
    doc = {
        "patient_ids": truth.patient_ids,
        "codes": truth.codes,
        "specialists": truth.specialists,
        "theta": truth.theta.tolist(),
        "beta": truth.beta.tolist(),
        "eta": truth.eta.tolist(),
        "w": truth.w.tolist(),
        "g": truth.g.tolist(),
        "z": [z.tolist() for z in truth.z],
        "b": [b.tolist() for b in truth.b],
        "x": [x.tolist() for x in truth.x],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)


def load_truth(path: str | Path) -> GroundTruth:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    return GroundTruth(
        theta=np.asarray(doc["theta"], dtype=float),
        beta=np.asarray(doc["beta"], dtype=float),
        eta=np.asarray(doc["eta"], dtype=float),
        w=np.asarray(doc["w"], dtype=float),
        g=np.asarray(doc["g"], dtype=float),
        z=[np.asarray(v, dtype=np.int64) for v in doc["z"]],
        b=[np.asarray(v, dtype=np.int64) for v in doc["b"]],
        x=[np.asarray(v, dtype=np.int64) for v in doc["x"]],
        patient_ids=list(doc["patient_ids"]),
        codes=list(doc["codes"]),
        specialists=list(doc["specialists"]),
    )
