"""Pure numpy batch kernel; used when the compiled extension is unavailable."""

import math

import numpy as np
from scipy.special import gammaln


def batch_changepoint_probs(X, mu0, kappa0, alpha0, beta0, hazard, max_run):
    """Changepoint probabilities for ``n`` series of shape ``(n, T, d)``.

    Same recursion as :func:`mcpd.bocpd.core.bocpd_step`, vectorised over
    series and run lengths. ``max_run <= 0`` disables merging.
    """
    X = np.ascontiguousarray(X, dtype=np.float64)
    n, T, d = X.shape
    out = np.empty((n, T))
    if n == 0 or T == 0:
        return out
    log_h = math.log(hazard)
    log_1mh = math.log1p(-hazard)
    cap = T + 1 if max_run <= 0 else min(T, max_run) + 1

    # stacked hypotheses, shape (n, R, d)
    mu = np.broadcast_to(mu0, (n, 1, d)).copy()
    kappa = np.broadcast_to(kappa0, (n, 1, d)).copy()
    alpha = np.broadcast_to(alpha0, (n, 1, d)).copy()
    beta = np.broadcast_to(beta0, (n, 1, d)).copy()
    log_w = np.zeros((n, 1))

    def logpred(x, mu, kappa, alpha, beta):
        nu = 2.0 * alpha
        scale2 = beta * (kappa + 1.0) / (alpha * kappa)
        z2 = (x - mu) ** 2 / (nu * scale2)
        return (gammaln(alpha + 0.5) - gammaln(alpha) - 0.5 * np.log(np.pi * nu * scale2)
                - (alpha + 0.5) * np.log1p(z2)).sum(axis=-1)

    p_mu, p_kappa, p_alpha, p_beta = (np.asarray(a, dtype=np.float64)[None, None, :]
                                      for a in (mu0, kappa0, alpha0, beta0))
    for t in range(T):
        x = X[:, t, None, :]
        lp = logpred(x, mu, kappa, alpha, beta)
        lp0 = logpred(x, p_mu, p_kappa, p_alpha, p_beta)[:, 0]
        m = log_w.max(axis=1)
        lse = m + np.log(np.exp(log_w - m[:, None]).sum(axis=1))
        new_w = np.concatenate(((lse + lp0 + log_h)[:, None], log_w + lp + log_1mh), axis=1)

        dx = x - mu
        g_beta = beta + kappa * dx * dx / (2.0 * (kappa + 1.0))
        g_mu = (kappa * mu + x) / (kappa + 1.0)
        dx0 = x - p_mu
        f_beta = p_beta + p_kappa * dx0 * dx0 / (2.0 * (p_kappa + 1.0))
        f_mu = (p_kappa * p_mu + x) / (p_kappa + 1.0)
        mu = np.concatenate((np.broadcast_to(f_mu, (n, 1, d)), g_mu), axis=1)
        kappa = np.concatenate((np.broadcast_to(p_kappa + 1.0, (n, 1, d)), kappa + 1.0), axis=1)
        alpha = np.concatenate((np.broadcast_to(p_alpha + 0.5, (n, 1, d)), alpha + 0.5), axis=1)
        beta = np.concatenate((np.broadcast_to(f_beta, (n, 1, d)), g_beta), axis=1)

        if new_w.shape[1] > cap:
            tail = new_w[:, cap - 1:]
            tm = tail.max(axis=1)
            merged = tm + np.log(np.exp(tail - tm[:, None]).sum(axis=1))
            new_w = np.concatenate((new_w[:, :cap - 1], merged[:, None]), axis=1)
            mu, kappa, alpha, beta = mu[:, :cap], kappa[:, :cap], alpha[:, :cap], beta[:, :cap]

        m = new_w.max(axis=1)
        lse = m + np.log(np.exp(new_w - m[:, None]).sum(axis=1))
        log_w = new_w - lse[:, None]
        out[:, t] = np.exp(log_w[:, 0])
    return out
