"""Training engine: joint collapsed variational inference.

Full-batch mode sweeps every token sequentially with incremental statistic
maintenance; stochastic mode processes patient minibatches and blends scaled
minibatch statistics into the global ones on a Robbins-Monro schedule. Both
interleave the regression-posterior refresh, the liability refresh, and the
empirical-Bayes hyperparameter fixed points, and stop on relative ELBO
change.
"""

from __future__ import annotations

import logging
import math
from collections import namedtuple
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve
from scipy.special import digamma, gammaln, log_ndtr, xlogy

from . import _kernels
from .corpus import Corpus
from .model import InitConfig, ModelState, TopicEstimates, init_state, recompute_stats
from .probit import truncated_normal_mean

logger = logging.getLogger(__name__)

HYPER_FLOOR = 1e-6
HYPER_WARMUP_SWEEPS = 5  # fixed points on noisy early counts are unstable
DRIFT_RESET_EVERY = 50

LOG_2PI = math.log(2.0 * math.pi)

ELBO_TERM_NAMES = (
    "log_p_z",
    "log_p_b",
    "log_p_x",
    "log_p_g",
    "log_p_w",
    "log_p_y",
    "log_q_z",
    "log_q_g",
    "log_q_w",
)


class InferenceError(RuntimeError):
    """Non-finite intermediate or failed factorization: corrupted state."""


@dataclass
class StochasticConfig:
    batch_size: int = 256
    kappa: float = 0.9
    delay: float = 1.0

    def validate(self) -> None:
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not (0.5 < self.kappa <= 1.0):
            raise ValueError("kappa must lie in (0.5, 1]")
        if self.delay < 0:
            raise ValueError("delay must be >= 0")


@dataclass
class TrainConfig:
    K: int
    max_sweeps: int = 500
    elbo_rel_tol: float = 1e-6
    mode: str = "supervised"  # "supervised" | "unsupervised"
    stochastic: StochasticConfig | None = None
    seed: int = 0
    hyper_update_every: int = 1
    hyper_fixed_point_iters: int = 5
    threads: int = 1
    init: InitConfig = field(default_factory=InitConfig)

    def validate(self) -> None:
        if self.K < 1:
            raise ValueError("K must be >= 1")
        if self.elbo_rel_tol <= 0:
            raise ValueError("elbo_rel_tol must be positive")
        if self.mode not in ("supervised", "unsupervised"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.max_sweeps < 0:
            raise ValueError("max_sweeps must be >= 0")
        if self.threads < 1:
            raise ValueError("threads must be >= 1")
        if self.stochastic is not None:
            self.stochastic.validate()


@dataclass
class ElboTrace:
    sweeps: list[int] = field(default_factory=list)
    elbos: list[float] = field(default_factory=list)
    terms: list[dict[str, float]] = field(default_factory=list)
    converged: bool = False

    def append(self, sweep: int, elbo: float, terms: dict[str, float]) -> None:
        self.sweeps.append(sweep)
        self.elbos.append(elbo)
        self.terms.append(terms)

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("sweep,elbo," + ",".join(ELBO_TERM_NAMES) + "\n")
            for sweep, elbo, terms in zip(self.sweeps, self.elbos, self.terms):
                cols = [repr(terms[name]) for name in ELBO_TERM_NAMES]
                fh.write(f"{sweep},{elbo!r}," + ",".join(cols) + "\n")


ExclusiveCounts = namedtuple("ExclusiveCounts", "n m m_totals p p_totals")


def exclusive_counts(state: ModelState, j: int, i: int) -> ExclusiveCounts:
    """Expected counts with token (j, i)'s own responsibility removed.

    Only the single token is excluded (standard CVB0); tiny negatives from
    incremental float drift are clamped at zero. `p_totals` (the per-topic
    code total for the token's specialist) coincides with `m` because the
    code-level counts aggregate to the specialist-level ones.
    """
    index = state.index
    pos = int(index.offsets[j]) + i
    if not (index.offsets[j] <= pos < index.offsets[j + 1]):
        raise IndexError(f"token ({j}, {i}) out of range")
    g = state.resp.flat[pos]
    t = int(index.specialist[pos])
    pair = int(index.pair[pos])
    n_ex = np.maximum(state.stats.n[j] - g, 0.0)
    m_ex = np.maximum(state.stats.m[t] - g, 0.0)
    m_tot_ex = np.maximum(state.stats.m.sum(axis=0) - g, 0.0)
    p_ex = np.maximum(state.stats.p.values[pair] - g, 0.0)
    return ExclusiveCounts(n_ex, m_ex, m_tot_ex, p_ex, m_ex.copy())


def update_token_gamma(state: ModelState, j: int, i: int) -> np.ndarray:
    """Reference single-token responsibility update; stats adjusted in place.

    The sweep kernels inline the same formula; this path exists for oracle
    tests and spot updates. Computation is in log space with max subtraction.
    """
    index = state.index
    pos = int(index.offsets[j]) + i
    g_old = state.resp.flat[pos].copy()
    t = int(index.specialist[pos])
    w = int(index.code[pos])
    pair = int(index.pair[pos])
    stats = state.stats
    stats.n[j] -= g_old
    stats.m[t] -= g_old
    stats.p.values[pair] -= g_old

    hyper = state.hyper
    n_ex = np.maximum(stats.n[j], 0.0)
    m_ex = np.maximum(stats.m[t], 0.0)
    m_tot_ex = np.maximum(stats.m.sum(axis=0), 0.0)
    p_ex = np.maximum(stats.p.values[pair], 0.0)
    logits = (
        np.log(hyper.alpha + n_ex)
        + np.log(hyper.iota[t] + m_ex)
        - np.log(hyper.iota.sum() + m_tot_ex)
        + np.log(hyper.zeta[:, w] + p_ex)
        - np.log(hyper.zeta.sum(axis=1) + m_ex)
    )
    if state.supervised and index.labels[j] >= 0:
        Mj = float(index.doc_len[j])
        mean, cov = state.reg.mean, state.reg.covariance
        mdot = float(mean @ n_ex)
        s_gamma = cov @ n_ex
        logits = logits + mean * state.reg.expected_g[j] / Mj - (
            2.0 * (mean * mdot + s_gamma) + mean**2 + np.diag(cov)
        ) / (2.0 * Mj * Mj)
    logits -= logits.max()
    weights = np.exp(logits)
    total = weights.sum()
    if not np.isfinite(total) or total <= 0:
        raise InferenceError(f"non-finite responsibility update for token ({j}, {i})")
    g_new = weights / total
    state.resp.flat[pos] = g_new
    stats.n[j] += g_new
    stats.m[t] += g_new
    stats.p.values[pair] += g_new
    return g_new


def update_liability(state: ModelState) -> None:
    """Refresh lambda = mean' gamma_bar and E[g] for every labeled patient."""
    index = state.index
    usable = index.labeled & (index.doc_len > 0)
    skipped = int((index.labeled & (index.doc_len == 0)).sum())
    if skipped:
        logger.warning("skipping %d labeled patients with no tokens (undefined liability)", skipped)
    rows = np.flatnonzero(usable)
    if rows.size == 0:
        return
    gbar = state.stats.n[rows] / index.doc_len[rows, None]
    lam = gbar @ state.reg.mean
    state.reg.liability_mean[rows] = lam
    for r, row in enumerate(rows):
        state.reg.expected_g[row] = truncated_normal_mean(float(lam[r]), int(index.labels[row]))


def update_regression(state: ModelState) -> None:
    """Gaussian posterior of the regression coefficients by completing the square.

    S = (tau I + sum_j E[zbar zbar'])^-1, mean = S sum_j gamma_bar_j E[g_j],
    summing over labeled patients with at least one token. The second moment
    uses the expected-count form gbar gbar' + diag(n_j) / M_j^2.
    """
    index = state.index
    K = state.K
    tau = state.hyper.tau
    rows = np.flatnonzero(index.labeled & (index.doc_len > 0))
    if rows.size == 0:
        state.reg.covariance = np.eye(K) / tau
        state.reg.mean = np.zeros(K)
        return
    M = index.doc_len[rows].astype(float)
    gbar = state.stats.n[rows] / M[:, None]
    second_moment = gbar.T @ gbar
    second_moment[np.diag_indices(K)] += (state.stats.n[rows] / (M**2)[:, None]).sum(axis=0)
    precision = tau * np.eye(K) + second_moment
    try:
        factor = cho_factor(precision, lower=True)
    except LinAlgError as exc:
        raise InferenceError("regression precision matrix is not SPD (corrupted state)") from exc
    S = cho_solve(factor, np.eye(K))
    S = 0.5 * (S + S.T)
    state.reg.covariance = S
    state.reg.mean = S @ (gbar.T @ state.reg.expected_g[rows])


def update_hyperparameters(state: ModelState, iters: int = 5) -> None:
    """Empirical-Bayes fixed points for alpha, iota, zeta; results floored at 1e-6."""
    index = state.index
    consts = state.hyper.prior_constants
    n = state.stats.n
    m = state.stats.m
    pvals = state.stats.p.values
    pair_w = index.pairs[:, 1] if len(index.pairs) else np.empty(0, dtype=np.int64)
    D = index.n_patients
    V = index.n_codes
    K = state.K
    doc_len = index.doc_len.astype(float)

    alpha = state.hyper.alpha
    for _ in range(iters):
        asum = alpha.sum()
        num = consts.c_alpha - 1.0 + alpha * (
            digamma(alpha[None, :] + n).sum(axis=0) - D * digamma(alpha)
        )
        den = consts.d_alpha + digamma(asum + doc_len).sum() - D * digamma(asum)
        alpha = np.maximum(num / den, HYPER_FLOOR)
    state.hyper.alpha = alpha

    iota = state.hyper.iota
    mtot = m.sum(axis=0)
    for _ in range(iters):
        isum = iota.sum()
        num = consts.c_iota - 1.0 + iota * (
            digamma(iota[:, None] + m).sum(axis=1) - K * digamma(iota)
        )
        den = consts.d_iota + (digamma(isum + mtot) - digamma(isum)).sum()
        iota = np.maximum(num / den, HYPER_FLOOR)
    state.hyper.iota = iota

    zeta = state.hyper.zeta
    for _ in range(iters):
        zsum = zeta.sum(axis=1)
        acc = np.zeros((V, K))
        if len(pair_w):
            zp = zeta[:, pair_w].T  # (n_pairs, K)
            np.add.at(acc, pair_w, digamma(zp + pvals) - digamma(zp))
        den = consts.d_zeta + (digamma(zsum[:, None] + m.T) - digamma(zsum)[:, None]).sum(axis=1)
        num = consts.c_zeta - 1.0 + zeta.T * acc  # (V, K)
        zeta = np.maximum((num / den[None, :]).T, HYPER_FLOOR)
    state.hyper.zeta = zeta


def compute_elbo(state: ModelState, corpus: Corpus) -> tuple[float, dict[str, float]]:
    """Zero-order ELBO surrogate: expected counts inside the log-Gamma terms.

    Returns the total and the nine-term breakdown. Supervised terms sum over
    labeled patients with tokens; with supervision off those sums are empty
    and the coefficient prior/entropy pair cancels.
    """
    index = state.index
    hyper = state.hyper
    K = state.K
    n = state.stats.n
    m = state.stats.m
    pvals = state.stats.p.values
    doc_len = index.doc_len.astype(float)
    D = index.n_patients

    alpha, iota, zeta = hyper.alpha, hyper.iota, hyper.zeta
    asum, isum = alpha.sum(), iota.sum()
    zsum = zeta.sum(axis=1)
    mtot = m.sum(axis=0)

    t_z = float(
        D * (gammaln(asum) - gammaln(alpha).sum())
        + gammaln(alpha[None, :] + n).sum()
        - gammaln(asum + doc_len).sum()
    )
    t_b = float(
        K * (gammaln(isum) - gammaln(iota).sum())
        + gammaln(iota[:, None] + m).sum()
        - gammaln(isum + mtot).sum()
    )
    t_x = float(m.shape[0] * gammaln(zsum).sum() - gammaln(zsum[:, None] + m.T).sum())
    if len(index.pairs):
        pair_w = index.pairs[:, 1]
        zp = zeta[:, pair_w].T
        t_x += float((gammaln(zp + pvals) - gammaln(zp)).sum())

    t_qz = float(xlogy(state.resp.flat, state.resp.flat).sum())

    if state.supervised:
        rows = np.flatnonzero(index.labeled & (index.doc_len > 0))
    else:
        rows = np.empty(0, dtype=np.int64)
    mean, S = state.reg.mean, state.reg.covariance
    tau = hyper.tau
    if rows.size:
        M = doc_len[rows]
        gbar = n[rows] / M[:, None]
        lam = state.reg.liability_mean[rows]
        eg = state.reg.expected_g[rows]
        labels = index.labels[rows]
        eg2 = 1.0 + lam * eg  # E[g^2] of the unit-variance truncated normal
        md = gbar @ mean
        diag_load = (n[rows] / (M**2)[:, None]) @ (mean**2 + np.diag(S))
        quad = md**2 + ((gbar @ S) * gbar).sum(axis=1) + diag_load
        t_g = float((-0.5 * LOG_2PI - 0.5 * eg2 + md * eg - 0.5 * quad).sum())
        log_z = np.where(labels == 1, log_ndtr(lam), log_ndtr(-lam))
        t_qg = float((-0.5 * LOG_2PI - 0.5 * eg2 + lam * eg - 0.5 * lam**2 - log_z).sum())
    else:
        t_g = 0.0
        t_qg = 0.0
    t_w = -0.5 * K * LOG_2PI + 0.5 * K * math.log(tau) - 0.5 * tau * float(mean @ mean + np.trace(S))
    t_y = 0.0
    t_qw = -0.5 * K * LOG_2PI - 0.5 * K - 0.5 * float(np.log(np.diag(S)).sum())

    terms = {
        "log_p_z": t_z,
        "log_p_b": t_b,
        "log_p_x": t_x,
        "log_p_g": t_g,
        "log_p_w": t_w,
        "log_p_y": t_y,
        "log_q_z": t_qz,
        "log_q_g": t_qg,
        "log_q_w": t_qw,
    }
    elbo = t_z + t_b + t_x + t_g + t_w + t_y - t_qz - t_qg - t_qw
    if not math.isfinite(elbo):
        raise InferenceError(f"non-finite ELBO term: {terms}")
    return elbo, terms


def regression_objective(state: ModelState, w: np.ndarray) -> float:
    """The two coefficient-dependent ELBO terms evaluated at an arbitrary mean w.

    The returned posterior mean is their stationary point (checked by finite
    differences in the test suite). The covariance S is held fixed.
    """
    index = state.index
    K = state.K
    tau = state.hyper.tau
    S = state.reg.covariance
    rows = np.flatnonzero(index.labeled & (index.doc_len > 0)) if state.supervised else np.empty(0, dtype=np.int64)
    total = -0.5 * K * LOG_2PI + 0.5 * K * math.log(tau) - 0.5 * tau * float(w @ w + np.trace(S))
    if rows.size:
        M = index.doc_len[rows].astype(float)
        gbar = state.stats.n[rows] / M[:, None]
        lam = state.reg.liability_mean[rows]
        eg = state.reg.expected_g[rows]
        eg2 = 1.0 + lam * eg
        md = gbar @ w
        diag_load = (state.stats.n[rows] / (M**2)[:, None]) @ (w**2 + np.diag(S))
        quad = md**2 + ((gbar @ S) * gbar).sum(axis=1) + diag_load
        total += float((-0.5 * LOG_2PI - 0.5 * eg2 + md * eg - 0.5 * quad).sum())
    return total


def estimate_mixtures(state: ModelState) -> TopicEstimates:
    """Posterior-mean mixing proportions from the current expected counts."""
    index = state.index
    hyper = state.hyper
    n, m = state.stats.n, state.stats.m
    pvals = state.stats.p.values
    alpha, iota, zeta = hyper.alpha, hyper.iota, hyper.zeta
    asum, isum = alpha.sum(), iota.sum()
    zsum = zeta.sum(axis=1)
    mtot = m.sum(axis=0)

    theta_hat = (alpha[None, :] + n) / (asum + index.doc_len.astype(float))[:, None]
    beta_hat = ((iota[:, None] + m) / (isum + mtot)[None, :]).T  # (K, T)
    eta_denom = zsum[:, None] + m.T  # (K, T)
    if len(index.pairs):
        pair_t = index.pairs[:, 0]
        pair_w = index.pairs[:, 1]
        eta_values = (zeta[:, pair_w].T + pvals) / eta_denom[:, pair_t].T
    else:
        eta_values = np.zeros((0, state.K))
    return TopicEstimates(
        theta_hat=theta_hat,
        beta_hat=beta_hat,
        eta_pairs=dict(index.pair_ids),
        eta_values=eta_values,
        eta_denom=eta_denom,
    )


def _check_supervised_pre(corpus: Corpus, config: TrainConfig) -> None:
    if config.mode == "supervised" and not any(
        p.label is not None and p.n_tokens > 0 for p in corpus.patients
    ):
        raise ValueError("supervised mode requires at least one labeled patient with tokens")


def _run_sweep(state: ModelState, threads: int) -> None:
    """One full pass over every token, dispatching to the right kernel."""
    index = state.index
    stats = state.stats
    mtot = stats.m.sum(axis=0)
    args = (
        state.hyper.alpha,
        state.hyper.iota,
        float(state.hyper.iota.sum()),
        state.hyper.zeta,
        state.hyper.zeta.sum(axis=1),
        index.doc_len,
        index.labels,
        state.reg.expected_g,
        state.reg.mean,
        state.reg.covariance,
        state.supervised,
    )
    if threads == 1:
        status = _kernels.sweep_sequential(
            state.resp.flat,
            stats.n,
            stats.m,
            stats.p.values,
            mtot,
            index.patient_idx,
            index.specialist,
            index.pair,
            index.code,
            np.arange(index.n_tokens, dtype=np.int64),
            *args,
        )
    else:
        import numba

        numba.set_num_threads(threads)
        status = _kernels.sweep_frozen(
            state.resp.flat,
            stats.n,
            stats.m.copy(),
            stats.p.values.copy(),
            mtot.copy(),
            index.offsets,
            index.specialist,
            index.pair,
            index.code,
            *args,
        )
        # sweep barrier: rebuild the shared statistics from the new gamma
        stats.m[:] = 0.0
        stats.p.values[:] = 0.0
        np.add.at(stats.m, index.specialist, state.resp.flat)
        np.add.at(stats.p.values, index.pair, state.resp.flat)
    if status != _kernels.OK:
        raise InferenceError("non-finite responsibility update during sweep")


def train(corpus: Corpus, config: TrainConfig) -> tuple[ModelState, TopicEstimates, ElboTrace]:
    """Full-batch training loop; see module docstring for the sweep schedule."""
    config.validate()
    if config.stochastic is not None:
        return train_stochastic(corpus, config)
    _check_supervised_pre(corpus, config)
    state = init_state(
        corpus, config.K, config.seed, config.init, supervised=config.mode == "supervised"
    )
    trace = ElboTrace()
    elbo, terms = compute_elbo(state, corpus)
    trace.append(0, elbo, terms)
    for sweep in range(1, config.max_sweeps + 1):
        _run_sweep(state, config.threads)
        if sweep % DRIFT_RESET_EVERY == 0:
            state.stats = recompute_stats(state, corpus)
        if state.supervised:
            update_regression(state)
            update_liability(state)
        if sweep > HYPER_WARMUP_SWEEPS and sweep % config.hyper_update_every == 0:
            update_hyperparameters(state, config.hyper_fixed_point_iters)
        prev = trace.elbos[-1]
        elbo, terms = compute_elbo(state, corpus)
        trace.append(sweep, elbo, terms)
        logger.debug("sweep %d elbo %.6f", sweep, elbo)
        if abs(elbo - prev) < config.elbo_rel_tol * abs(prev):
            trace.converged = True
            break
    return state, estimate_mixtures(state), trace


def train_stochastic(
    corpus: Corpus, config: TrainConfig
) -> tuple[ModelState, TopicEstimates, ElboTrace]:
    """Stochastic (minibatch) training with step size rho_s = (s + delay)^-kappa.

    Per step: sample patients without replacement, update their tokens
    sequentially against working copies of the global statistics, then blend
    global m/p toward the D/batch-scaled minibatch estimates. The n rows of
    batch patients are replaced outright. Regression, hyperparameter, and
    ELBO updates run at sweep-equivalents (ceil(D / batch) steps). When
    batch_size equals D the step size is pinned at 1 and a step reproduces a
    full-batch sweep.
    """
    config.validate()
    cfg = config.stochastic or StochasticConfig()
    _check_supervised_pre(corpus, config)
    D = corpus.n_patients
    if cfg.batch_size > D:
        raise ValueError(f"batch_size {cfg.batch_size} exceeds patient count {D}")
    state = init_state(
        corpus, config.K, config.seed, config.init, supervised=config.mode == "supervised"
    )
    index = state.index
    stats = state.stats
    rng = np.random.default_rng([config.seed, 1])
    steps_per_sweep = math.ceil(D / cfg.batch_size)
    scale = D / cfg.batch_size

    trace = ElboTrace()
    elbo, terms = compute_elbo(state, corpus)
    trace.append(0, elbo, terms)
    step = 0
    for sweep in range(1, config.max_sweeps + 1):
        for _ in range(steps_per_sweep):
            step += 1
            rho = 1.0 if cfg.batch_size == D else (step + cfg.delay) ** (-cfg.kappa)
            batch = np.sort(rng.choice(D, size=cfg.batch_size, replace=False))
            token_order = np.concatenate(
                [np.arange(index.offsets[j], index.offsets[j + 1]) for j in batch]
            ).astype(np.int64)
            if token_order.size == 0:
                continue
            m_work = stats.m.copy()
            p_work = stats.p.values.copy()
            status = _kernels.sweep_sequential(
                state.resp.flat,
                stats.n,
                m_work,
                p_work,
                m_work.sum(axis=0),
                index.patient_idx,
                index.specialist,
                index.pair,
                index.code,
                token_order,
                state.hyper.alpha,
                state.hyper.iota,
                float(state.hyper.iota.sum()),
                state.hyper.zeta,
                state.hyper.zeta.sum(axis=1),
                index.doc_len,
                index.labels,
                state.reg.expected_g,
                state.reg.mean,
                state.reg.covariance,
                state.supervised,
            )
            if status != _kernels.OK:
                raise InferenceError("non-finite responsibility update during stochastic step")
            m_hat = np.zeros_like(stats.m)
            p_hat = np.zeros_like(stats.p.values)
            np.add.at(m_hat, index.specialist[token_order], state.resp.flat[token_order])
            np.add.at(p_hat, index.pair[token_order], state.resp.flat[token_order])
            stats.m *= 1.0 - rho
            stats.m += rho * scale * m_hat
            stats.p.values *= 1.0 - rho
            stats.p.values += rho * scale * p_hat
        if state.supervised:
            update_regression(state)
            update_liability(state)
        if sweep > HYPER_WARMUP_SWEEPS and sweep % config.hyper_update_every == 0:
            update_hyperparameters(state, config.hyper_fixed_point_iters)
        prev = trace.elbos[-1]
        elbo, terms = compute_elbo(state, corpus)
        trace.append(sweep, elbo, terms)
        logger.debug("sweep-equivalent %d elbo %.6f", sweep, elbo)
        if abs(elbo - prev) < config.elbo_rel_tol * abs(prev):
            trace.converged = True
            break
    return state, estimate_mixtures(state), trace
