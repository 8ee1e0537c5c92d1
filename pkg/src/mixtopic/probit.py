"""Probit-link math: truncated-normal moments, label prediction, patient fold-in.

The Gaussian CDF goes through the complementary error function; the Mills
ratio switches to a scaled-erfc form in the tail (|lambda| > 6) where the
naive density/CDF quotient degrades to 0/0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np
from scipy.special import erfc, erfcx

if TYPE_CHECKING:
    from .corpus import Corpus, PatientRecord
    from .model import TrainedModel

_SQRT2 = math.sqrt(2.0)
_SQRT_2PI = math.sqrt(2.0 * math.pi)
_TAIL = 6.0


def norm_pdf(x: float) -> float:
    return math.exp(-0.5 * x * x) / _SQRT_2PI


def norm_cdf(x: float) -> float:
    return float(0.5 * erfc(-x / _SQRT2))


def _hazard(lam: float) -> float:
    """phi(lam) / Phi(lam), stable for arbitrarily negative lam."""
    if lam > -_TAIL:
        return norm_pdf(lam) / norm_cdf(lam)
    # phi(l)/Phi(l) = 2 / (sqrt(2*pi) * erfcx(-l/sqrt(2))) after cancelling exp(-l^2/2)
    return float(2.0 / (_SQRT_2PI * erfcx(-lam / _SQRT2)))


def truncated_normal_mean(lam: float, y: int) -> float:
    """E[g] for g ~ N(lam, 1) truncated to g > 0 (y=1) or g <= 0 (y=0)."""
    if not math.isfinite(lam):
        raise ValueError(f"lambda must be finite, got {lam!r}")
    if y == 1:
        return lam + _hazard(lam)
    if y == 0:
        return lam - _hazard(-lam)
    raise ValueError(f"label must be 0 or 1, got {y!r}")


def predict_probability(zbar: np.ndarray, reg_mean: np.ndarray, reg_cov: np.ndarray) -> float:
    """P(y = 1) = Phi(m' zbar / sqrt(1 + zbar' S zbar)) for a held-out mixture."""
    zbar = np.asarray(zbar, dtype=float)
    if zbar.ndim != 1 or np.any(zbar < -1e-12) or abs(zbar.sum() - 1.0) > 1e-10:
        raise ValueError("zbar must be a probability vector")
    radicand = 1.0 + float(zbar @ reg_cov @ zbar)
    if radicand <= 0:
        raise ValueError("covariance is not positive definite (corrupted state)")
    return norm_cdf(float(reg_mean @ zbar) / math.sqrt(radicand))


@dataclass
class FoldInResult:
    theta_star: np.ndarray  # (K,)
    zbar_star: np.ndarray  # (K,)
    probability: float
    n_dropped: int  # tokens whose code or specialist is unknown to the model


def _map_tokens(patient: "PatientRecord", model: "TrainedModel", corpus: "Corpus | None"):
    """Token (specialist, code) pairs in model index space; unseen ones dropped."""
    mapped: list[tuple[int, int]] = []
    dropped = 0
    for tok in patient.tokens:
        if corpus is not None:
            t = model.specialist_vocab.get(corpus.specialist_vocab[tok.specialist_id])
            w = model.code_vocab.get(corpus.code_vocab[tok.code_id])
            if t is None or w is None:
                dropped += 1
                continue
        else:
            t, w = tok.specialist_id, tok.code_id
            if not (0 <= t < model.T and 0 <= w < model.V):
                dropped += 1
                continue
        mapped.append((t, w))
    return mapped, dropped


def fold_in(
    patient: "PatientRecord",
    model: "TrainedModel",
    corpus: "Corpus | None" = None,
    iters: int = 50,
    tol: float = 1e-6,
) -> FoldInResult:
    """Infer a held-out patient's mixture against frozen topic estimates.

    Runs the unsupervised responsibility update with the specialist and code
    factors replaced by the frozen beta/eta point estimates. When `corpus` is
    given, token indices are translated from its vocabularies into the
    model's; otherwise they are assumed to be model-space already. Patients
    with no usable token get the prior mean alpha / sum(alpha).
    """
    alpha = model.alpha
    alpha_mean = alpha / alpha.sum()
    tokens, dropped = _map_tokens(patient, model, corpus)
    M = len(tokens)
    if M == 0:
        zbar = alpha_mean.copy()
        return FoldInResult(
            theta_star=alpha_mean.copy(),
            zbar_star=zbar,
            probability=predict_probability(zbar, model.reg_mean, model.reg_cov),
            n_dropped=dropped,
        )
    # per-token likelihood factor beta_hat[k, t] * eta_hat[k, t, w], fixed across rounds
    lik = np.empty((M, model.K))
    for i, (t, w) in enumerate(tokens):
        lik[i] = model.estimates.beta_hat[:, t] * model.eta(t, w)
    from ._kernels import fold_in_batch

    gamma = fold_in_batch(lik, alpha, iters, tol)
    totals = gamma.sum(axis=0)
    zbar = totals / M
    theta_star = (alpha + totals) / (alpha.sum() + M)
    return FoldInResult(
        theta_star=theta_star,
        zbar_star=zbar,
        probability=predict_probability(zbar, model.reg_mean, model.reg_cov),
        n_dropped=dropped,
    )
