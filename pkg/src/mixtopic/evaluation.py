"""Quantitative evaluation: held-out perplexity, ranking metrics, topic recovery."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.stats import rankdata

from .corpus import Corpus
from .model import TrainedModel
from .probit import fold_in


def perplexity(model: TrainedModel, heldout: Corpus, fold_in_iters: int = 50) -> float:
    """exp(- mean per-token log-likelihood) under the frozen point estimates.

    Each held-out patient is folded in to get theta*, then every usable token
    scores sum_k theta*_k beta_hat[k, t] eta_hat[k, t, w]. Tokens with codes
    or specialists unknown to the model are dropped from scoring.
    """
    if heldout.n_patients == 0:
        raise ValueError("held-out corpus is empty")
    total_loglik = 0.0
    n_scored = 0
    beta_hat = model.estimates.beta_hat
    for patient in heldout.patients:
        result = fold_in(patient, model, corpus=heldout, iters=fold_in_iters)
        theta = result.theta_star
        for tok in patient.tokens:
            t = model.specialist_vocab.get(heldout.specialist_vocab[tok.specialist_id])
            w = model.code_vocab.get(heldout.code_vocab[tok.code_id])
            if t is None or w is None:
                continue
            lik = float(theta @ (beta_hat[:, t] * model.eta(t, w)))
            total_loglik += np.log(lik)
            n_scored += 1
    if n_scored == 0:
        raise ValueError("no held-out token could be scored against the model vocabulary")
    return float(np.exp(-total_loglik / n_scored))


@dataclass
class ScoredLabels:
    scores: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=float)
        self.labels = np.asarray(self.labels, dtype=int)
        if self.scores.shape != self.labels.shape or self.scores.ndim != 1:
            raise ValueError("scores and labels must be parallel 1-d arrays")
        if not np.isin(self.labels, (0, 1)).all():
            raise ValueError("labels must be binary")


def auroc(scored: ScoredLabels) -> float:
    """Tie-aware rank statistic: P(score_pos > score_neg) + 0.5 P(tie)."""
    labels = scored.labels
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUROC needs both classes present")
    ranks = rankdata(scored.scores)  # average ranks on ties
    u = ranks[labels == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def auprc(scored: ScoredLabels, seed: int = 0) -> float:
    """Step-wise average precision over positives in descending score order.

    Ties are broken by stable order after a seeded shuffle, so equal-score
    blocks contribute their expected precision over orderings on average.
    """
    labels = scored.labels
    n_pos = int(labels.sum())
    if n_pos == 0:
        raise ValueError("AUPRC needs at least one positive")
    rng = np.random.Generator(np.random.PCG64(seed))
    perm = rng.permutation(labels.size)
    scores = scored.scores[perm]
    labels = labels[perm]
    order = np.argsort(-scores, kind="stable")
    labels = labels[order]
    hits = np.cumsum(labels)
    precision_at = hits / np.arange(1, labels.size + 1)
    return float(precision_at[labels == 1].sum() / n_pos)


@dataclass
class RecoveryReport:
    correlation: np.ndarray  # (K, K): inferred topic a vs true topic b
    matching: np.ndarray  # permutation: true topic matched to each inferred topic
    matched_mean: float
    matched_correlations: np.ndarray  # (K,)


def _column_correlations(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pearson correlation of every column of a with every column of b.

    Zero-variance columns produce correlation 0 rather than NaN.
    """
    ac = a - a.mean(axis=0)
    bc = b - b.mean(axis=0)
    na = np.linalg.norm(ac, axis=0)
    nb = np.linalg.norm(bc, axis=0)
    corr = ac.T @ bc
    denom = np.outer(na, nb)
    out = np.zeros_like(corr)
    np.divide(corr, denom, out=out, where=denom > 0)
    return out


def topic_recovery(theta_hat: np.ndarray, theta_true: np.ndarray) -> RecoveryReport:
    """Correlate inferred and true patient mixtures topic-by-topic and match
    them one-to-one by optimal assignment on the correlation matrix."""
    theta_hat = np.asarray(theta_hat, dtype=float)
    theta_true = np.asarray(theta_true, dtype=float)
    if theta_hat.shape != theta_true.shape:
        raise ValueError(f"shape mismatch: {theta_hat.shape} vs {theta_true.shape}")
    if theta_hat.shape[0] < 3:
        raise ValueError("need at least 3 patients for a meaningful correlation")
    corr = _column_correlations(theta_hat, theta_true)
    rows, cols = linear_sum_assignment(1.0 - corr)
    matching = np.empty(corr.shape[0], dtype=int)
    matching[rows] = cols
    matched = corr[rows, cols]
    return RecoveryReport(
        correlation=corr,
        matching=matching,
        matched_mean=float(matched.mean()),
        matched_correlations=matched,
    )


def roc_curve_points(scored: ScoredLabels) -> np.ndarray:
    """(threshold, fpr, tpr) rows at every distinct score, descending."""
    order = np.argsort(-scored.scores, kind="stable")
    scores = scored.scores[order]
    labels = scored.labels[order]
    n_pos = labels.sum()
    n_neg = labels.size - n_pos
    tp = np.cumsum(labels)
    fp = np.cumsum(1 - labels)
    distinct = np.flatnonzero(np.diff(np.append(scores, -np.inf)))
    return np.column_stack([scores[distinct], fp[distinct] / max(n_neg, 1), tp[distinct] / max(n_pos, 1)])


def pr_curve_points(scored: ScoredLabels) -> np.ndarray:
    """(threshold, recall, precision) rows at every distinct score, descending."""
    order = np.argsort(-scored.scores, kind="stable")
    scores = scored.scores[order]
    labels = scored.labels[order]
    n_pos = labels.sum()
    tp = np.cumsum(labels)
    precision = tp / np.arange(1, labels.size + 1)
    distinct = np.flatnonzero(np.diff(np.append(scores, -np.inf)))
    return np.column_stack([scores[distinct], tp[distinct] / max(n_pos, 1), precision[distinct]])
