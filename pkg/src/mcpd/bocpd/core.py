"""Bayesian online changepoint detection over multivariate period vectors.

One joint run-length posterior is tracked per series. Each dimension carries
an independent Normal-Inverse-Gamma model, so the posterior predictive of a
run is a product of per-dimension Student-t densities.

Run-length convention: after observing ``x_t``, run length 0 means that
``x_t`` opened a fresh segment (a changepoint at ``t``) and is scored under
the prior predictive. Run length ``r > 0`` means the current segment grew
out of the run-length ``r - 1`` hypothesis of the previous step.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import gammaln, logsumexp

__all__ = [
    "NigParams",
    "CpdConfig",
    "RunLengthState",
    "ChangeScores",
    "predictive_logpdf",
    "posterior_update",
    "initial_state",
    "bocpd_step",
    "changepoint_probabilities",
    "attention_weights",
    "WEIGHT_MODES",
]

WEIGHT_MODES = ("affine", "direct", "softmax")


def _finite_vector(x, name: str = "x") -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be a 1-d vector, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


@dataclass(frozen=True)
class NigParams:
    """Normal-Inverse-Gamma hyperparameters.

    Arrays have shape ``(d,)`` for a single hypothesis or ``(R, d)`` for a
    stack of run-length hypotheses.
    """

    mu: np.ndarray
    kappa: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray

    def __post_init__(self) -> None:
        arrays = [np.asarray(a, dtype=np.float64) for a in (self.mu, self.kappa, self.alpha, self.beta)]
        shape = arrays[0].shape
        if any(a.shape != shape for a in arrays):
            raise ValueError("NIG parameter arrays must share one shape")
        if not all(np.all(np.isfinite(a)) for a in arrays):
            raise ValueError("NIG parameters must be finite")
        if np.any(arrays[1] <= 0) or np.any(arrays[2] <= 0) or np.any(arrays[3] <= 0):
            raise ValueError("kappa, alpha and beta must be strictly positive")
        for name, a in zip(("mu", "kappa", "alpha", "beta"), arrays):
            a.setflags(write=False)
            object.__setattr__(self, name, a)

    @classmethod
    def broadcast(cls, dim: int, mu: float = 0.0, kappa: float = 1.0,
                  alpha: float = 1.0, beta: float = 1.0) -> "NigParams":
        return cls(np.full(dim, mu), np.full(dim, kappa), np.full(dim, alpha), np.full(dim, beta))

    @property
    def dim(self) -> int:
        return self.mu.shape[-1]

    def __getitem__(self, idx) -> "NigParams":
        return NigParams(self.mu[idx], self.kappa[idx], self.alpha[idx], self.beta[idx])


@dataclass(frozen=True)
class CpdConfig:
    """Detector settings.

    ``prior`` is a scalar template ``(mu, kappa, alpha, beta)`` broadcast to
    every dimension. ``max_run=None`` means "never merge" (the sequence
    length bounds the run length anyway).
    """

    hazard_lambda: float = 10.0
    prior: tuple[float, float, float, float] = (0.0, 1.0, 1.0, 1.0)
    max_run: int | None = None

    def __post_init__(self) -> None:
        if not self.hazard_lambda > 1:
            raise ValueError(f"hazard_lambda must be > 1, got {self.hazard_lambda}")
        mu, kappa, alpha, beta = self.prior
        if not (kappa > 0 and alpha > 0 and beta > 0) or not math.isfinite(mu):
            raise ValueError(f"invalid NIG prior template {self.prior}")
        if self.max_run is not None and self.max_run < 1:
            raise ValueError("max_run must be >= 1")

    @property
    def hazard(self) -> float:
        return 1.0 / self.hazard_lambda

    def prior_params(self, dim: int) -> NigParams:
        return NigParams.broadcast(dim, *self.prior)


@dataclass(frozen=True)
class RunLengthState:
    """Run-length posterior after ``t`` observations.

    ``log_weights[r]`` is the log posterior mass of run length ``r`` and
    ``stats[r]`` the NIG posterior of that hypothesis.
    """

    t: int
    log_weights: np.ndarray
    stats: NigParams

    @property
    def weights(self) -> np.ndarray:
        return np.exp(self.log_weights)

    @property
    def changepoint_probability(self) -> float:
        return float(np.exp(self.log_weights[0]))


@dataclass(frozen=True)
class ChangeScores:
    probs: np.ndarray
    weights: np.ndarray = field(default_factory=lambda: np.empty(0))


def predictive_logpdf(x, params: NigParams) -> np.ndarray | float:
    """Log posterior-predictive density of ``x``, summed over dimensions.

    Each dimension is Student-t with ``2 * alpha`` degrees of freedom,
    location ``mu`` and squared scale ``beta * (kappa + 1) / (alpha * kappa)``.
    Returns a float for ``(d,)`` params and an ``(R,)`` array for stacked ones.
    """
    x = _finite_vector(x)
    if x.shape[0] != params.dim:
        raise ValueError(f"dimension mismatch: x has {x.shape[0]}, params have {params.dim}")
    nu = 2.0 * params.alpha
    scale2 = params.beta * (params.kappa + 1.0) / (params.alpha * params.kappa)
    z2 = (x - params.mu) ** 2 / (nu * scale2)
    per_dim = (
        gammaln(params.alpha + 0.5)
        - gammaln(params.alpha)
        - 0.5 * np.log(np.pi * nu * scale2)
        - (params.alpha + 0.5) * np.log1p(z2)
    )
    out = per_dim.sum(axis=-1)
    return float(out) if np.ndim(out) == 0 else out


def posterior_update(params: NigParams, x) -> NigParams:
    x = _finite_vector(x)
    if x.shape[0] != params.dim:
        raise ValueError(f"dimension mismatch: x has {x.shape[0]}, params have {params.dim}")
    k = params.kappa
    dx = x - params.mu
    return NigParams(
        mu=(k * params.mu + x) / (k + 1.0),
        kappa=k + 1.0,
        alpha=params.alpha + 0.5,
        beta=params.beta + k * dx * dx / (2.0 * (k + 1.0)),
    )


def initial_state(dim: int, config: CpdConfig) -> RunLengthState:
    prior = config.prior_params(dim)
    return RunLengthState(t=0, log_weights=np.zeros(1), stats=prior[np.newaxis])


def bocpd_step(state: RunLengthState, x, config: CpdConfig) -> RunLengthState:
    """Advance the run-length posterior by one observation.

    Growth mass ``w_r * pred_r(x) * (1 - H)`` moves run ``r`` to ``r + 1``;
    the changepoint mass ``H * pred_prior(x)`` (the weights sum to one) goes
    to run 0, whose statistics restart from the prior. Runs longer than
    ``max_run`` are merged into the longest retained run.
    """
    x = _finite_vector(x)
    dim = state.stats.dim
    if x.shape[0] != dim:
        raise ValueError(f"dimension mismatch: x has {x.shape[0]}, state has {dim}")
    prior = config.prior_params(dim)
    h = config.hazard

    log_pred = predictive_logpdf(x, state.stats)
    log_growth = state.log_weights + log_pred + math.log1p(-h)
    log_cp = logsumexp(state.log_weights) + predictive_logpdf(x, prior) + math.log(h)
    log_w = np.concatenate(([log_cp], log_growth))

    grown = posterior_update(state.stats, x)
    fresh = posterior_update(prior, x)
    stats = NigParams(*(np.vstack([getattr(fresh, f)[np.newaxis], getattr(grown, f)])
                        for f in ("mu", "kappa", "alpha", "beta")))

    if config.max_run is not None and log_w.shape[0] > config.max_run + 1:
        keep = config.max_run + 1
        tail = logsumexp(log_w[keep - 1:])
        log_w = np.concatenate((log_w[:keep - 1], [tail]))
        stats = stats[:keep]

    log_w = log_w - logsumexp(log_w)
    return RunLengthState(t=state.t + 1, log_weights=log_w, stats=stats)


def _as_series(series) -> np.ndarray:
    arr = np.asarray(series, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[:, np.newaxis]
    if arr.ndim != 2 or arr.shape[0] == 0:
        raise ValueError("series must be a non-empty sequence of equal-length vectors")
    return arr


def changepoint_probabilities(series: Sequence, config: CpdConfig) -> np.ndarray:
    """``probs[t] = P(run length 0 | x_1..x_t)`` for every step of one series."""
    arr = _as_series(series)
    state = initial_state(arr.shape[1], config)
    probs = np.empty(arr.shape[0])
    for t, x in enumerate(arr):
        state = bocpd_step(state, x, config)
        probs[t] = state.changepoint_probability
    return probs


def attention_weights(probs, mode: str = "affine", gamma: float = 1.0,
                      temperature: float = 1.0) -> np.ndarray:
    """Turn changepoint probabilities into per-period feature multipliers.

    Works on the last axis, so a ``(n, T)`` batch is accepted as well.
    """
    p = np.asarray(probs, dtype=np.float64)
    if mode == "affine":
        if gamma < 0:
            raise ValueError("gamma must be >= 0")
        return 1.0 + gamma * p
    if mode == "direct":
        return p.copy()
    if mode == "softmax":
        if not temperature > 0:
            raise ValueError("temperature must be > 0 in softmax mode")
        z = p / temperature
        z = z - z.max(axis=-1, keepdims=True)
        e = np.exp(z)
        return p.shape[-1] * e / e.sum(axis=-1, keepdims=True)
    raise ValueError(f"unknown weight mode {mode!r}; expected one of {WEIGHT_MODES}")
