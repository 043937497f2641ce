"""Bayesian online changepoint detection and changepoint attention weights.

The per-series batch kernel comes from a compiled extension when one was
built, else from a numpy implementation. Set ``MCPD_PURE_PYTHON=1`` to force
the fallback.
"""

import os

import numpy as np

from .core import (
    WEIGHT_MODES,
    ChangeScores,
    CpdConfig,
    NigParams,
    RunLengthState,
    attention_weights,
    bocpd_step,
    changepoint_probabilities,
    initial_state,
    posterior_update,
    predictive_logpdf,
)
from . import _kernel_py

if os.environ.get("MCPD_PURE_PYTHON", "") not in ("", "0"):
    _kernel = _kernel_py
    BACKEND = "python"
else:
    try:
        from . import _kernel
        BACKEND = "compiled"
    except ImportError:
        _kernel = _kernel_py
        BACKEND = "python"


def batch_changepoint_probabilities(X, config: CpdConfig, backend: str | None = None) -> np.ndarray:
    """Changepoint probabilities for a stack of series, shape ``(n, T, d) -> (n, T)``."""
    X = np.ascontiguousarray(X, dtype=np.float64)
    if X.ndim != 3:
        raise ValueError(f"expected (n, T, d) array, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise ValueError("series contain non-finite values")
    kernel = {None: _kernel, "python": _kernel_py}.get(backend)
    if kernel is None:
        if backend != "compiled" or BACKEND != "compiled":
            raise ValueError(f"backend {backend!r} is not available")
        kernel = _kernel
    prior = config.prior_params(X.shape[2])
    max_run = 0 if config.max_run is None else config.max_run
    return kernel.batch_changepoint_probs(X, prior.mu, prior.kappa, prior.alpha, prior.beta,
                                          config.hazard, max_run)


__all__ = [
    "BACKEND",
    "WEIGHT_MODES",
    "ChangeScores",
    "CpdConfig",
    "NigParams",
    "RunLengthState",
    "attention_weights",
    "batch_changepoint_probabilities",
    "bocpd_step",
    "changepoint_probabilities",
    "initial_state",
    "posterior_update",
    "predictive_logpdf",
]
