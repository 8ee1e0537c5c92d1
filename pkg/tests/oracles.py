"""Independent reference computations used by the oracle tests.

Everything here is written from the collapsed-model definitions with plain
loops, deliberately sharing no code with the package's vectorized paths.
"""

import numpy as np
from scipy.integrate import quad
from scipy.special import gammaln

from mixtopic.corpus import Corpus, PatientRecord, Token, Vocabulary
from mixtopic.model import ModelState, init_state


def log_joint_marginal(z_flat, index, alpha, iota, zeta):
    """log p(z, b, x) with the mixture weights integrated out.

    Product of Dirichlet-multinomial ratios: one per patient over topics,
    one per topic over specialists, one per (topic, specialist) over codes.
    z_flat gives the hard topic assignment of every token in flat order.
    """
    K = len(alpha)
    T = len(iota)
    V = zeta.shape[1]
    D = index.n_patients
    n = np.zeros((D, K))
    m = np.zeros((T, K))
    p = np.zeros((K, T, V))
    for pos in range(index.n_tokens):
        j = index.patient_idx[pos]
        t = index.specialist[pos]
        w = index.code[pos]
        k = z_flat[pos]
        n[j, k] += 1
        m[t, k] += 1
        p[k, t, w] += 1
    total = 0.0
    asum = alpha.sum()
    for j in range(D):
        total += (
            gammaln(asum)
            - gammaln(alpha).sum()
            + gammaln(alpha + n[j]).sum()
            - gammaln(asum + n[j].sum())
        )
    isum = iota.sum()
    for k in range(K):
        total += (
            gammaln(isum)
            - gammaln(iota).sum()
            + gammaln(iota + m[:, k]).sum()
            - gammaln(isum + m[:, k].sum())
        )
    for k in range(K):
        zsum = zeta[k].sum()
        for t in range(T):
            total += (
                gammaln(zsum)
                - gammaln(zeta[k]).sum()
                + gammaln(zeta[k] + p[k, t]).sum()
                - gammaln(zsum + p[k, t].sum())
            )
    return total


def random_tiny_corpus(rng, max_patients=3, max_tokens=3, T=2, V=4):
    """A corpus with explicit, fully populated vocabularies for oracle tests."""
    D = int(rng.integers(1, max_patients + 1))
    patients = []
    for j in range(D):
        M = int(rng.integers(1, max_tokens + 1))
        tokens = [
            Token(int(rng.integers(0, V)), int(rng.integers(0, T))) for _ in range(M)
        ]
        patients.append(
            PatientRecord(f"p{j}", tokens, label=int(rng.integers(0, 2)))
        )
    return Corpus(
        patients,
        Vocabulary([f"c{w}" for w in range(V)]),
        Vocabulary([f"s{t}" for t in range(T)]),
    )


def hard_assign(state: ModelState, z_flat) -> None:
    """Overwrite gamma with one-hot assignments and rebuild the stats."""
    from mixtopic.model import recompute_stats

    state.resp.flat[:] = 0.0
    for pos, k in enumerate(z_flat):
        state.resp.flat[pos, k] = 1.0
    state.stats.n[:] = 0.0
    state.stats.m[:] = 0.0
    state.stats.p.values[:] = 0.0
    for pos in range(state.index.n_tokens):
        j = state.index.patient_idx[pos]
        t = state.index.specialist[pos]
        pr = state.index.pair[pos]
        state.stats.n[j] += state.resp.flat[pos]
        state.stats.m[t] += state.resp.flat[pos]
        state.stats.p.values[pr] += state.resp.flat[pos]


def hard_state(corpus: Corpus, K: int, rng, supervised=False) -> tuple[ModelState, np.ndarray]:
    state = init_state(corpus, K, seed=int(rng.integers(0, 2**31)), supervised=supervised)
    z_flat = rng.integers(0, K, size=corpus.n_tokens)
    hard_assign(state, z_flat)
    return state, z_flat


def tn_mean_quad(lam: float, y: int) -> float:
    """Truncated-normal mean by adaptive quadrature of the raw integrals."""

    def pdf(g):
        return np.exp(-0.5 * (g - lam) ** 2) / np.sqrt(2.0 * np.pi)

    lo, hi = (0.0, np.inf) if y == 1 else (-np.inf, 0.0)
    num, _ = quad(lambda g: g * pdf(g), lo, hi, epsabs=0.0, epsrel=1e-13, limit=200)
    den, _ = quad(pdf, lo, hi, epsabs=0.0, epsrel=1e-13, limit=200)
    return num / den


def direct_exclusive_counts(state: ModelState, j: int, i: int):
    """Exclusive counts by brute-force summation over all other tokens."""
    index = state.index
    K = state.K
    pos = int(index.offsets[j]) + i
    t0 = int(index.specialist[pos])
    w0 = int(index.code[pos])
    n_ex = np.zeros(K)
    m_ex = np.zeros(K)
    m_tot = np.zeros(K)
    p_ex = np.zeros(K)
    p_tot = np.zeros(K)
    for q in range(index.n_tokens):
        if q == pos:
            continue
        g = state.resp.flat[q]
        if index.patient_idx[q] == j:
            n_ex += g
        if index.specialist[q] == t0:
            m_ex += g
            p_tot += g
            if index.code[q] == w0:
                p_ex += g
        m_tot += g
    return n_ex, m_ex, m_tot, p_ex, p_tot
