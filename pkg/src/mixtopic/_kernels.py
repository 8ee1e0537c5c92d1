"""Numba inner loops for the responsibility sweeps.

Two variants share the same per-token update. The sequential kernel mutates
the global statistics token by token (the reference semantics); the frozen
kernel reads a sweep-start snapshot of the specialist/code statistics and
only writes gamma and the per-patient rows, so patients can be processed in
parallel and m/p are rebuilt at the sweep barrier.

All count arguments are float64 and laid out as:
  gamma (N, K); n (D, K); m (T, K); p (n_pairs, K); mtot (K,) = column sums of m.
Exclusive counts clamp tiny float-drift negatives at zero.
"""

import numpy as np
from numba import njit, prange

OK = 0
NON_FINITE = 1


@njit(cache=True)
def _token_logits(
    logits, j, t, pr, w, n, m, p, mtot,
    alpha, iota_t, iota_sum, zeta, zeta_rowsum,
    sup, Mj, egj, reg_mean, reg_cov,
):
    """Log of the unnormalized responsibility for every topic.

    The caller must already have removed the token's own gamma from
    n/m/p/mtot, so the rows read here are the exclusive counts.
    """
    K = logits.shape[0]
    if sup:
        mdot = 0.0
        for k in range(K):
            nk = n[j, k]
            if nk < 0.0:
                nk = 0.0
            mdot += reg_mean[k] * nk
    for k in range(K):
        nk = n[j, k]
        if nk < 0.0:
            nk = 0.0
        mk = m[t, k]
        if mk < 0.0:
            mk = 0.0
        pk = p[pr, k]
        if pk < 0.0:
            pk = 0.0
        mt = mtot[k]
        if mt < 0.0:
            mt = 0.0
        val = (
            np.log(alpha[k] + nk)
            + np.log(iota_t + mk)
            - np.log(iota_sum + mt)
            + np.log(zeta[k, w] + pk)
            - np.log(zeta_rowsum[k] + mk)
        )
        if sup:
            sg = 0.0
            for k2 in range(K):
                nk2 = n[j, k2]
                if nk2 < 0.0:
                    nk2 = 0.0
                sg += reg_cov[k, k2] * nk2
            val += reg_mean[k] * egj / Mj - (
                2.0 * (reg_mean[k] * mdot + sg)
                + reg_mean[k] * reg_mean[k]
                + reg_cov[k, k]
            ) / (2.0 * Mj * Mj)
        logits[k] = val


@njit(cache=True)
def _normalize_logits(logits):
    """Max-subtracted softmax in place; returns the exp-sum (0 marks failure)."""
    K = logits.shape[0]
    mx = logits[0]
    for k in range(1, K):
        if logits[k] > mx:
            mx = logits[k]
    if not np.isfinite(mx):
        return 0.0
    s = 0.0
    for k in range(K):
        e = np.exp(logits[k] - mx)
        logits[k] = e
        s += e
    return s


@njit(cache=True)
def sweep_sequential(
    gamma, n, m, p, mtot,
    tok_patient, tok_spec, tok_pair, tok_code, token_order,
    alpha, iota, iota_sum, zeta, zeta_rowsum,
    doc_len, labels, eg, reg_mean, reg_cov, supervised,
):
    """Incremental CVB0 pass over token_order; gamma and all stats updated in place."""
    K = gamma.shape[1]
    logits = np.empty(K)
    for idx in range(token_order.shape[0]):
        i = token_order[idx]
        j = tok_patient[i]
        t = tok_spec[i]
        pr = tok_pair[i]
        w = tok_code[i]
        for k in range(K):
            g_old = gamma[i, k]
            n[j, k] -= g_old
            m[t, k] -= g_old
            p[pr, k] -= g_old
            mtot[k] -= g_old
        sup = supervised and labels[j] >= 0
        _token_logits(
            logits, j, t, pr, w, n, m, p, mtot,
            alpha, iota[t], iota_sum, zeta, zeta_rowsum,
            sup, float(doc_len[j]), eg[j], reg_mean, reg_cov,
        )
        s = _normalize_logits(logits)
        if s <= 0.0:
            return NON_FINITE
        for k in range(K):
            g_new = logits[k] / s
            gamma[i, k] = g_new
            n[j, k] += g_new
            m[t, k] += g_new
            p[pr, k] += g_new
            mtot[k] += g_new
    return OK


@njit(cache=True, parallel=True)
def sweep_frozen(
    gamma, n, m_frozen, p_frozen, mtot_frozen,
    offsets, tok_spec, tok_pair, tok_code,
    alpha, iota, iota_sum, zeta, zeta_rowsum,
    doc_len, labels, eg, reg_mean, reg_cov, supervised,
):
    """Sweep-synchronous pass: m/p/mtot are sweep-start snapshots, patients run
    in parallel, each updating only its own gamma rows and n row. Exclusive
    specialist/code counts subtract the token's pre-sweep gamma from the
    snapshots; callers rebuild m and p afterwards."""
    D = offsets.shape[0] - 1
    K = gamma.shape[1]
    status = np.zeros(D, dtype=np.int64)
    for j in prange(D):
        logits = np.empty(K)
        g_old = np.empty(K)
        sup = supervised and labels[j] >= 0
        for i in range(offsets[j], offsets[j + 1]):
            t = tok_spec[i]
            pr = tok_pair[i]
            w = tok_code[i]
            for k in range(K):
                g_old[k] = gamma[i, k]
                n[j, k] -= g_old[k]
            if sup:
                mdot = 0.0
                for k in range(K):
                    nk = n[j, k]
                    if nk < 0.0:
                        nk = 0.0
                    mdot += reg_mean[k] * nk
            Mj = float(doc_len[j])
            for k in range(K):
                nk = n[j, k]
                if nk < 0.0:
                    nk = 0.0
                mk = m_frozen[t, k] - g_old[k]
                if mk < 0.0:
                    mk = 0.0
                pk = p_frozen[pr, k] - g_old[k]
                if pk < 0.0:
                    pk = 0.0
                mt = mtot_frozen[k] - g_old[k]
                if mt < 0.0:
                    mt = 0.0
                val = (
                    np.log(alpha[k] + nk)
                    + np.log(iota[t] + mk)
                    - np.log(iota_sum + mt)
                    + np.log(zeta[k, w] + pk)
                    - np.log(zeta_rowsum[k] + mk)
                )
                if sup:
                    sg = 0.0
                    for k2 in range(K):
                        nk2 = n[j, k2]
                        if nk2 < 0.0:
                            nk2 = 0.0
                        sg += reg_cov[k, k2] * nk2
                    val += reg_mean[k] * eg[j] / Mj - (
                        2.0 * (reg_mean[k] * mdot + sg)
                        + reg_mean[k] * reg_mean[k]
                        + reg_cov[k, k]
                    ) / (2.0 * Mj * Mj)
                logits[k] = val
            s = _normalize_logits(logits)
            if s <= 0.0:
                status[j] = NON_FINITE
                break
            for k in range(K):
                g_new = logits[k] / s
                gamma[i, k] = g_new
                n[j, k] += g_new
    return OK if status.sum() == 0 else NON_FINITE


@njit(cache=True)
def fold_in_batch(lik, alpha, iters, tol):
    """CVB0 fold-in rounds for one patient against fixed per-token factors.

    lik is (M, K): beta_hat * eta_hat per token. Returns the final gamma.
    """
    M, K = lik.shape
    gamma = np.full((M, K), 1.0 / K)
    totals = np.full(K, M / K)
    weights = np.empty(K)
    for _ in range(iters):
        delta = 0.0
        for i in range(M):
            s = 0.0
            for k in range(K):
                totals[k] -= gamma[i, k]
                wk = (alpha[k] + totals[k]) * lik[i, k]
                weights[k] = wk
                s += wk
            for k in range(K):
                wk = weights[k] / s
                d = abs(wk - gamma[i, k])
                if d > delta:
                    delta = d
                gamma[i, k] = wk
                totals[k] += wk
        if delta < tol:
            break
    return gamma
