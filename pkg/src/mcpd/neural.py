"""Small dense-numerics toolkit: feedforward encoder, LSTM, sigmoid head, BPTT, Adam.

Everything runs in float64 on batches. Parameters live in a flat
``dict[str, ndarray]`` so the optimiser, checkpoints and gradient checks can
walk them uniformly. LSTM gate blocks are stacked in the order input,
forget, output, candidate.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.special import expit

from .errors import ModelError, TrainingError

Params = dict[str, np.ndarray]

P_CLAMP = 1e-7
GATES = ("input", "forget", "output", "candidate")
PARAM_NAMES = ("enc1.W", "enc1.b", "enc2.W", "enc2.b", "lstm.W", "lstm.U", "lstm.b", "head.w", "head.b")


@dataclass(frozen=True)
class DenseLayer:
    W: np.ndarray  # (out, in)
    b: np.ndarray  # (out,)

    def __call__(self, x: np.ndarray) -> np.ndarray:
        if x.shape[-1] != self.W.shape[1]:
            raise ModelError(f"dense layer expects {self.W.shape[1]} inputs, got {x.shape[-1]}")
        return x @ self.W.T + self.b


@dataclass(frozen=True)
class LstmParams:
    W: np.ndarray  # (4h, d)
    U: np.ndarray  # (4h, h)
    b: np.ndarray  # (4h,)

    @property
    def hidden(self) -> int:
        return self.U.shape[1]

    def gate(self, name: str) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        h = self.hidden
        k = GATES.index(name)
        sl = slice(k * h, (k + 1) * h)
        return self.W[sl], self.U[sl], self.b[sl]


@dataclass(frozen=True)
class SigmoidHead:
    w: np.ndarray  # (h,)
    b: np.ndarray  # (1,)


def encoder_layers(params: Params) -> tuple[DenseLayer, DenseLayer]:
    return DenseLayer(params["enc1.W"], params["enc1.b"]), DenseLayer(params["enc2.W"], params["enc2.b"])


def lstm_params(params: Params) -> LstmParams:
    return LstmParams(params["lstm.W"], params["lstm.U"], params["lstm.b"])


def init_params(d_grade: int, ffn_hidden: int, d_num: int, d_text: int, lstm_hidden: int,
                rng: np.random.Generator) -> Params:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) init; forget-gate bias starts at +1."""
    def u(shape, fan_in):
        s = 1.0 / np.sqrt(fan_in)
        return rng.uniform(-s, s, size=shape)

    d_in = d_num + d_text
    h = lstm_hidden
    params = {
        "enc1.W": u((ffn_hidden, d_grade), d_grade),
        "enc1.b": u((ffn_hidden,), d_grade),
        "enc2.W": u((d_num, ffn_hidden), ffn_hidden),
        "enc2.b": u((d_num,), ffn_hidden),
        "lstm.W": u((4 * h, d_in), d_in),
        "lstm.U": u((4 * h, h), h),
        "lstm.b": u((4 * h,), h),
        "head.w": u((h,), h),
        "head.b": u((1,), h),
    }
    params["lstm.b"][h:2 * h] = 1.0
    return params


def zero_params_like(params: Params) -> Params:
    return {k: np.zeros_like(v) for k, v in params.items()}


# -- forward pieces -----------------------------------------------------------

def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def ffn_forward(x: np.ndarray, layer1: DenseLayer, layer2: DenseLayer) -> np.ndarray:
    """``layer2(relu(layer1(x)))`` over the last axis."""
    return layer2(relu(layer1(np.asarray(x, dtype=np.float64))))


@dataclass
class LstmCache:
    xs: np.ndarray        # (B, T, d)
    hs: np.ndarray        # (B, T+1, h), hs[:, 0] = h0
    cs: np.ndarray        # (B, T+1, h)
    gates: np.ndarray     # (B, T, 4h) post-activation


def lstm_forward(seq: np.ndarray, params: LstmParams) -> tuple[np.ndarray, LstmCache]:
    """Run the recurrence from zero state; returns ``h_T`` and the activation cache.

    ``seq`` is ``(T, d)`` or a batch ``(B, T, d)``.
    """
    seq = np.asarray(seq, dtype=np.float64)
    single = seq.ndim == 2
    if single:
        seq = seq[np.newaxis]
    B, T, d = seq.shape
    if T == 0:
        raise ValueError("lstm_forward needs a non-empty sequence")
    if d != params.W.shape[1]:
        raise ModelError(f"LSTM expects inputs of dim {params.W.shape[1]}, got {d}")
    h = params.hidden
    hs = np.zeros((B, T + 1, h))
    cs = np.zeros((B, T + 1, h))
    gates = np.empty((B, T, 4 * h))
    xw = seq @ params.W.T + params.b
    for t in range(T):
        a = xw[:, t] + hs[:, t] @ params.U.T
        g = np.empty_like(a)
        g[:, :3 * h] = expit(a[:, :3 * h])
        g[:, 3 * h:] = np.tanh(a[:, 3 * h:])
        i, f, o, cand = g[:, :h], g[:, h:2 * h], g[:, 2 * h:3 * h], g[:, 3 * h:]
        cs[:, t + 1] = f * cs[:, t] + i * cand
        hs[:, t + 1] = o * np.tanh(cs[:, t + 1])
        gates[:, t] = g
    cache = LstmCache(seq, hs, cs, gates)
    h_last = hs[:, T]
    return (h_last[0] if single else h_last), cache


def bce_loss(p, y, pos_weight: float = 1.0):
    """``-[pos_weight * y * log p + (1 - y) * log(1 - p)]`` with p clamped to [1e-7, 1 - 1e-7]."""
    p = np.clip(np.asarray(p, dtype=np.float64), P_CLAMP, 1.0 - P_CLAMP)
    y = np.asarray(y, dtype=np.float64)
    loss = -(pos_weight * y * np.log(p) + (1.0 - y) * np.log1p(-p))
    return float(loss) if loss.ndim == 0 else loss


def bce_logit_grad(p: np.ndarray, y: np.ndarray, pos_weight: float) -> np.ndarray:
    """d loss / d logit; zero where the clamp is active."""
    inside = (p > P_CLAMP) & (p < 1.0 - P_CLAMP)
    return np.where(inside, -pos_weight * y * (1.0 - p) + (1.0 - y) * p, 0.0)


# -- the full stack -----------------------------------------------------------

@dataclass
class StackCache:
    grades: np.ndarray      # (B, T, g)
    pre1: np.ndarray        # (B, T, ffn_hidden)
    num: np.ndarray         # (B, T, d_num)
    fused: np.ndarray       # (B, T, d_num + d_text)
    weights: np.ndarray     # (B, T)
    lstm: LstmCache
    logits: np.ndarray      # (B,)
    probs: np.ndarray       # (B,)
    param_ids: tuple = field(default_factory=tuple)


def encode_and_fuse(params: Params, grades: np.ndarray, text: np.ndarray):
    enc1, enc2 = encoder_layers(params)
    pre1 = enc1(grades)
    num = enc2(relu(pre1))
    fused = np.concatenate((num, text), axis=-1)
    return pre1, num, fused


def stack_forward(params: Params, grades: np.ndarray, text: np.ndarray,
                  weights: np.ndarray | None = None) -> tuple[np.ndarray, StackCache]:
    """Encoder, fusion, per-period weighting, LSTM and sigmoid head on a batch.

    ``grades`` is ``(B, T, g)``, ``text`` ``(B, T, d_text)``, ``weights``
    ``(B, T)`` or ``None`` for the unweighted pipeline. Weights are treated
    as constants by :func:`stack_backward`.
    """
    grades = np.asarray(grades, dtype=np.float64)
    text = np.asarray(text, dtype=np.float64)
    pre1, num, fused = encode_and_fuse(params, grades, text)
    if fused.shape[-1] != params["lstm.W"].shape[1]:
        raise ModelError(
            f"fused width {fused.shape[-1]} does not match LSTM input {params['lstm.W'].shape[1]}")
    if weights is None:
        x = fused
        weights = np.ones(fused.shape[:2])
    else:
        weights = np.asarray(weights, dtype=np.float64)
        x = weights[..., np.newaxis] * fused
    h_last, lcache = lstm_forward(x, lstm_params(params))
    logits = h_last @ params["head.w"] + params["head.b"][0]
    probs = expit(logits)
    cache = StackCache(grades, pre1, num, fused, weights, lcache, logits, probs,
                       tuple(id(v) for v in params.values()))
    return probs, cache


def stack_backward(params: Params, cache: StackCache, y, pos_weight: float = 1.0,
                   scale: float = 1.0) -> Params:
    """Analytic gradient of ``scale * sum_b bce_loss(p_b, y_b, pos_weight)``."""
    if cache.param_ids != tuple(id(v) for v in params.values()):
        raise ModelError("stale forward cache: parameters changed since the forward pass")
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    lc = cache.lstm
    B, T, _ = lc.xs.shape
    h = params["lstm.U"].shape[1]
    W, U = params["lstm.W"], params["lstm.U"]

    dz = scale * bce_logit_grad(cache.probs, y, pos_weight)          # (B,)
    grads: Params = {
        "head.w": dz @ lc.hs[:, T],
        "head.b": np.array([dz.sum()]),
    }
    dW = np.zeros_like(W)
    dU = np.zeros_like(U)
    db = np.zeros(4 * h)
    dx = np.empty_like(lc.xs)
    dh = dz[:, None] * params["head.w"][None, :]
    dc = np.zeros((B, h))
    for t in range(T - 1, -1, -1):
        g = lc.gates[:, t]
        i, f, o, cand = g[:, :h], g[:, h:2 * h], g[:, 2 * h:3 * h], g[:, 3 * h:]
        tc = np.tanh(lc.cs[:, t + 1])
        dc = dc + dh * o * (1.0 - tc * tc)
        da = np.empty((B, 4 * h))
        da[:, :h] = dc * cand * i * (1.0 - i)
        da[:, h:2 * h] = dc * lc.cs[:, t] * f * (1.0 - f)
        da[:, 2 * h:3 * h] = dh * tc * o * (1.0 - o)
        da[:, 3 * h:] = dc * i * (1.0 - cand * cand)
        dW += da.T @ lc.xs[:, t]
        dU += da.T @ lc.hs[:, t]
        db += da.sum(axis=0)
        dx[:, t] = da @ W
        dh = da @ U
        dc = dc * f
    grads["lstm.W"], grads["lstm.U"], grads["lstm.b"] = dW, dU, db

    d_num = params["enc2.W"].shape[0]
    dnum = (cache.weights[..., None] * dx)[..., :d_num].reshape(B * T, d_num)
    hid = relu(cache.pre1).reshape(B * T, -1)
    grads["enc2.W"] = dnum.T @ hid
    grads["enc2.b"] = dnum.sum(axis=0)
    dpre1 = (dnum @ params["enc2.W"]) * (cache.pre1.reshape(B * T, -1) > 0)
    grads["enc1.W"] = dpre1.T @ cache.grades.reshape(B * T, -1)
    grads["enc1.b"] = dpre1.sum(axis=0)
    return {k: grads[k] for k in params}


def stack_loss_and_grad(params: Params, grades, text, weights, y, pos_weight: float = 1.0,
                        scale: float = 1.0) -> tuple[float, Params]:
    probs, cache = stack_forward(params, grades, text, weights)
    loss = scale * float(np.sum(bce_loss(probs, y, pos_weight)))
    return loss, stack_backward(params, cache, y, pos_weight, scale)


# -- logistic model (linear baseline) ----------------------------------------

def logistic_loss_and_grad(params: Params, X: np.ndarray, y, pos_weight: float = 1.0,
                           scale: float = 1.0) -> tuple[float, Params]:
    """Weighted BCE of ``sigmoid(X @ w + b)`` and its gradient."""
    y = np.asarray(y, dtype=np.float64)
    z = X @ params["w"] + params["b"][0]
    p = expit(z)
    loss = scale * float(np.sum(bce_loss(p, y, pos_weight)))
    dz = scale * bce_logit_grad(p, y, pos_weight)
    return loss, {"w": X.T @ dz, "b": np.array([dz.sum()])}


# -- optimisation -------------------------------------------------------------

@dataclass
class AdamState:
    m: Params
    v: Params
    step: int = 0

    @classmethod
    def zeros_like(cls, params: Params) -> "AdamState":
        return cls(zero_params_like(params), zero_params_like(params), 0)


def adam_step(params: Params, grads: Params, state: AdamState, lr: float = 1e-3,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> tuple[Params, AdamState]:
    """Bias-corrected Adam; returns new parameter and state objects."""
    for name, g in grads.items():
        if g.shape != params[name].shape:
            raise ModelError(f"gradient shape {g.shape} != parameter shape {params[name].shape} for {name}")
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient in parameter block {name!r}")
    t = state.step + 1
    bc1 = 1.0 - beta1 ** t
    bc2 = 1.0 - beta2 ** t
    new_p, new_m, new_v = {}, {}, {}
    for name, p in params.items():
        g = grads[name]
        m = beta1 * state.m[name] + (1.0 - beta1) * g
        v = beta2 * state.v[name] + (1.0 - beta2) * (g * g)
        new_p[name] = p - lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
        new_m[name], new_v[name] = m, v
    return new_p, AdamState(new_m, new_v, t)


def grad_check(loss_and_grad: Callable[[Params], tuple[float, Params]], params: Params,
               h: float = 1e-5, floor: float = 1e-6) -> float:
    """Largest relative gap between analytic and central-difference gradients.

    Relative error per entry is ``|a - n| / max(|a|, |n|, floor)``; the floor
    keeps entries whose true gradient is ~0 from reporting rounding noise.
    """
    _, analytic = loss_and_grad(params)
    worst = 0.0
    for name, value in params.items():
        flat = value.reshape(-1)
        for k in range(flat.size):
            probe = {n: v.copy() for n, v in params.items()}
            probe[name].reshape(-1)[k] = flat[k] + h
            lp, _ = loss_and_grad(probe)
            probe[name].reshape(-1)[k] = flat[k] - h
            lm, _ = loss_and_grad(probe)
            num = (lp - lm) / (2.0 * h)
            a = analytic[name].reshape(-1)[k]
            worst = max(worst, abs(a - num) / max(abs(a), abs(num), floor))
    return worst
