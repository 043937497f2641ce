# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled batch kernel for the run-length recursion.

Kappa and alpha of a hypothesis depend only on how many observations ``m``
it has absorbed, so their predictive constants are tabulated once per call
and each slot carries ``mu``, ``beta`` and the count ``m``.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport log, exp, M_PI

cnp.import_array()


cdef inline double _logsumexp(double* a, Py_ssize_t n) noexcept nogil:
    cdef Py_ssize_t i
    cdef double m = a[0]
    cdef double s = 0.0
    for i in range(1, n):
        if a[i] > m:
            m = a[i]
    for i in range(n):
        s += exp(a[i] - m)
    return m + log(s)


cdef inline double _logpred(const double* x, const double* mu, const double* beta,
                            const double* const_m, const double* coef_m, const double* alpha_m,
                            Py_ssize_t d) noexcept nogil:
    # Student-t log density rewritten as
    #   const + alpha*log(beta) - (alpha + 1/2)*log(beta + coef*(x - mu)^2)
    cdef Py_ssize_t j
    cdef double diff, total = 0.0
    for j in range(d):
        diff = x[j] - mu[j]
        total += (const_m[j] + alpha_m[j] * log(beta[j])
                  - (alpha_m[j] + 0.5) * log(beta[j] + coef_m[j] * diff * diff))
    return total


def batch_changepoint_probs(X, mu0, kappa0, alpha0, beta0, double hazard, Py_ssize_t max_run):
    cdef const double[:, :, ::1] xv = np.ascontiguousarray(X, dtype=np.float64)
    cdef const double[::1] pmu = np.ascontiguousarray(mu0, dtype=np.float64)
    cdef const double[::1] pbet = np.ascontiguousarray(beta0, dtype=np.float64)
    cdef Py_ssize_t n = xv.shape[0], T = xv.shape[1], d = xv.shape[2]
    out_arr = np.empty((n, T), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    if n == 0 or T == 0:
        return out_arr

    cdef Py_ssize_t cap = T + 1 if max_run <= 0 else min(T, max_run) + 1
    # per-observation-count tables, m = 0..T
    m_ = np.arange(T + 1, dtype=np.float64)[:, None]
    kap_m = np.asarray(kappa0, dtype=np.float64)[None, :] + m_
    alp_m = np.asarray(alpha0, dtype=np.float64)[None, :] + 0.5 * m_
    from scipy.special import gammaln
    cdef const double[:, ::1] cst = np.ascontiguousarray(
        gammaln(alp_m + 0.5) - gammaln(alp_m) - 0.5 * np.log(2.0 * M_PI * (kap_m + 1.0) / kap_m))
    cdef const double[:, ::1] coef = np.ascontiguousarray(kap_m / (2.0 * (kap_m + 1.0)))
    cdef const double[:, ::1] alp = np.ascontiguousarray(alp_m)
    cdef const double[:, ::1] kap = np.ascontiguousarray(kap_m)

    # double-buffered hypothesis stats, indexed [buffer, run, dim]
    cdef double[:, :, ::1] mu = np.empty((2, cap, d)), bet = np.empty((2, cap, d))
    cdef double[::1] lw = np.empty(cap + 1), nw = np.empty(cap + 1)
    cdef Py_ssize_t[:, ::1] cnt = np.empty((2, cap), dtype=np.intp)
    cdef double log_h = log(hazard), log_1mh = log(1.0 - hazard)
    cdef Py_ssize_t i, t, r, j, R, newR, a, b, m
    cdef double lse, lp0, dx, k
    cdef const double* xt

    with nogil:
        for i in range(n):
            R = 1
            a = 0
            lw[0] = 0.0
            cnt[a, 0] = 0
            for j in range(d):
                mu[a, 0, j] = pmu[j]
                bet[a, 0, j] = pbet[j]
            for t in range(T):
                b = 1 - a
                xt = &xv[i, t, 0]
                lse = _logsumexp(&lw[0], R)
                lp0 = _logpred(xt, &pmu[0], &pbet[0], &cst[0, 0], &coef[0, 0], &alp[0, 0], d)
                nw[0] = lse + lp0 + log_h
                for r in range(R):
                    m = cnt[a, r]
                    nw[r + 1] = lw[r] + log_1mh + _logpred(
                        xt, &mu[a, r, 0], &bet[a, r, 0], &cst[m, 0], &coef[m, 0], &alp[m, 0], d)
                newR = R + 1
                cnt[b, 0] = 1
                for j in range(d):
                    dx = xt[j] - pmu[j]
                    k = kap[0, j]
                    mu[b, 0, j] = (k * pmu[j] + xt[j]) / (k + 1.0)
                    bet[b, 0, j] = pbet[j] + k * dx * dx / (2.0 * (k + 1.0))
                for r in range(R):
                    if r + 1 >= cap:
                        break
                    m = cnt[a, r]
                    cnt[b, r + 1] = m + 1
                    for j in range(d):
                        dx = xt[j] - mu[a, r, j]
                        k = kap[m, j]
                        mu[b, r + 1, j] = (k * mu[a, r, j] + xt[j]) / (k + 1.0)
                        bet[b, r + 1, j] = bet[a, r, j] + k * dx * dx / (2.0 * (k + 1.0))
                if newR > cap:
                    nw[cap - 1] = _logsumexp(&nw[cap - 1], newR - cap + 1)
                    newR = cap
                lse = _logsumexp(&nw[0], newR)
                for r in range(newR):
                    lw[r] = nw[r] - lse
                R = newR
                a = b
                out[i, t] = exp(lw[0])
    return out_arr
