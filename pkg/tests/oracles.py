"""Independent reference computations used by several test modules."""

import itertools
import math

import numpy as np
from scipy.special import gammaln


def nig_log_evidence(seg, mu0, kappa0, alpha0, beta0):
    """Closed-form log marginal likelihood of a segment under an NIG prior.

    Uses batch sufficient statistics rather than sequential predictives.
    """
    seg = np.asarray(seg, dtype=np.float64)
    n = seg.shape[0]
    if n == 0:
        return 0.0
    xbar = seg.mean(axis=0)
    ss = ((seg - xbar) ** 2).sum(axis=0)
    kn = kappa0 + n
    an = alpha0 + n / 2.0
    bn = beta0 + 0.5 * ss + kappa0 * n * (xbar - mu0) ** 2 / (2.0 * kn)
    per_dim = (gammaln(an) - gammaln(alpha0) + alpha0 * np.log(beta0) - an * np.log(bn)
               + 0.5 * np.log(kappa0 / kn) - 0.5 * n * math.log(2 * math.pi))
    return float(np.sum(per_dim))


def brute_force_run_length(series, hazard, mu0, kappa0, alpha0, beta0):
    """Run-length posterior after the last observation by enumerating change indicators.

    ``c_t = 1`` declares that observation ``t`` opens a new segment (run length 0
    at ``t``). Every indicator vector is weighted by its hazard prior times the
    product of segment evidences.
    """
    series = np.asarray(series, dtype=np.float64)
    T = series.shape[0]
    log_mass = {}
    for c in itertools.product((0, 1), repeat=T):
        logp = sum(math.log(hazard) if ci else math.log1p(-hazard) for ci in c)
        starts = [0] + [t for t in range(T) if c[t]]
        bounds = sorted(set(starts)) + [T]
        for a, b in zip(bounds[:-1], bounds[1:]):
            logp += nig_log_evidence(series[a:b], mu0, kappa0, alpha0, beta0)
        last = max((t for t in range(T) if c[t]), default=None)
        r = (T - 1 - last) if last is not None else T
        log_mass.setdefault(r, []).append(logp)
    lm = np.full(T + 1, -np.inf)
    for r, vals in log_mass.items():
        m = max(vals)
        lm[r] = m + math.log(sum(math.exp(v - m) for v in vals))
    m = lm.max()
    return np.exp(lm - m) / np.exp(lm - m).sum()


def student_t_logpdf(x, nu, loc, scale2):
    """Textbook Student-t log density with squared scale ``scale2``."""
    return (math.lgamma((nu + 1) / 2) - math.lgamma(nu / 2) - 0.5 * math.log(nu * math.pi * scale2)
            - (nu + 1) / 2 * math.log(1 + (x - loc) ** 2 / (nu * scale2)))
