"""End-to-end MCPD model: featurise, detect changes, weight, encode, classify, train."""

from __future__ import annotations

import dataclasses
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np
from scipy.special import expit

from . import neural
from .bocpd import CpdConfig, attention_weights, batch_changepoint_probabilities
from .errors import ModelError, SchemaError, TrainingError
from .records import N_PERIODS, SUBJECTS, Cohort, StudentRecord, render_period_summary
from .text_embed import EmbedderConfig, embed_text, load_precomputed

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1
N_GRADES = len(SUBJECTS)
CPD_INPUTS = ("raw", "grades", "encoded")


# Standardised grades pool between-student spread (~1) while within-student
# noise is ~0.3, so the pipeline detector uses a vague mean and a small
# variance scale instead of the unit template.
PIPELINE_PRIOR = (0.0, 0.1, 1.0, 0.1)


def default_pipeline_cpd() -> CpdConfig:
    return CpdConfig(hazard_lambda=10.0, prior=PIPELINE_PRIOR)


@dataclass(frozen=True)
class McpdConfig:
    """Model, detector and training settings.

    ``cpd_input`` selects the detector input: ``grades`` (standardised grade
    block, default), ``raw`` (grades plus text embedding) or ``encoded``
    (fused encoder output, recomputed each batch, no gradient).
    """

    d_text: int = 64
    d_num: int = 8
    ffn_hidden: int = 16
    lstm_hidden: int = 32
    cpd: CpdConfig = field(default_factory=default_pipeline_cpd)
    weight_mode: str = "affine"
    gamma: float = 1.0
    temperature: float = 1.0
    cpd_input: str = "grades"
    lr: float = 1e-3
    epochs: int = 60
    batch_size: int = 32
    seed: int = 0
    pos_weight_mode: str = "auto"
    pos_weight: float = 1.0
    hash_seed: int = 0
    embeddings_path: str | None = None

    def __post_init__(self) -> None:
        for name in ("d_text", "d_num", "ffn_hidden", "lstm_hidden", "epochs", "batch_size"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.gamma < 0:
            raise ValueError("gamma must be >= 0")
        if self.weight_mode not in ("affine", "direct", "softmax"):
            raise ValueError(f"unknown weight_mode {self.weight_mode!r}")
        if self.cpd_input not in CPD_INPUTS:
            raise ValueError(f"unknown cpd_input {self.cpd_input!r}")
        if self.pos_weight_mode not in ("auto", "fixed"):
            raise ValueError(f"unknown pos_weight_mode {self.pos_weight_mode!r}")
        if self.lr <= 0 or self.temperature <= 0 or self.pos_weight <= 0:
            raise ValueError("lr, temperature and pos_weight must be positive")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["cpd"] = {"hazard_lambda": self.cpd.hazard_lambda, "prior": list(self.cpd.prior),
                    "max_run": self.cpd.max_run}
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "McpdConfig":
        d = dict(d)
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown model config keys: {sorted(unknown)}")
        if "cpd" in d and not isinstance(d["cpd"], CpdConfig):
            c = dict(d["cpd"])
            if "prior" in c:
                c["prior"] = tuple(float(v) for v in c["prior"])
            d["cpd"] = CpdConfig(**c)
        return cls(**d)

    def replace(self, **changes) -> "McpdConfig":
        return dataclasses.replace(self, **changes)


@dataclass(frozen=True)
class Standardizer:
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, cohort: Cohort) -> "Standardizer":
        """Per-subject mean/std pooled over periods; missing scores ignored."""
        vals = [[] for _ in SUBJECTS]
        for rec in cohort:
            for p in rec.periods:
                for k, v in enumerate(p.scores.as_tuple()):
                    if v is not None:
                        vals[k].append(v)
        mean = np.array([np.mean(v) if v else 0.0 for v in vals])
        std = np.array([np.std(v) if v else 1.0 for v in vals])
        std[~(std > 0)] = 1.0
        return cls(mean, std)

    def transform(self, scores: tuple) -> np.ndarray:
        x = np.array([self.mean[k] if v is None else v for k, v in enumerate(scores)], dtype=np.float64)
        return (x - self.mean) / self.std


class Embedder:
    """Hashing embedder with optional precomputed vectors taking precedence."""

    def __init__(self, config: EmbedderConfig, precomputed: Mapping | None = None):
        self.config = config
        self.precomputed = dict(precomputed or {})
        self._memo: dict[str, np.ndarray] = {}

    @classmethod
    def from_model_config(cls, cfg: McpdConfig) -> "Embedder":
        ecfg = EmbedderConfig(dim=cfg.d_text, hash_seed=cfg.hash_seed)
        pre = load_precomputed(cfg.embeddings_path, cfg.d_text) if cfg.embeddings_path else None
        return cls(ecfg, pre)

    def __call__(self, student_id: str, period_index: int, text: str) -> np.ndarray:
        vec = self.precomputed.get((student_id, period_index))
        if vec is not None:
            return vec
        if text not in self._memo:
            self._memo[text] = embed_text(text, self.config)
        return self._memo[text]


def featurize(record: StudentRecord, std: Standardizer, embedder: Embedder) -> np.ndarray:
    """``(6, 3 + d_text)`` raw period vectors: standardised grades then summary embedding."""
    rows = []
    for p in record.periods:
        grades = std.transform(p.scores.as_tuple())
        text = embedder(record.student_id, p.index, render_period_summary(p))
        rows.append(np.concatenate((grades, text)))
    return np.vstack(rows)


def featurize_cohort(cohort: Cohort, std: Standardizer, embedder: Embedder) -> np.ndarray:
    if len(cohort) == 0:
        return np.empty((0, N_PERIODS, N_GRADES + embedder.config.dim))
    return np.stack([featurize(r, std, embedder) for r in cohort])


@dataclass
class McpdModel:
    config: McpdConfig
    params: neural.Params
    standardizer: Standardizer
    embedder: Embedder
    pos_weight: float = 1.0

    @classmethod
    def initialize(cls, config: McpdConfig, standardizer: Standardizer,
                   embedder: Embedder | None = None, rng: np.random.Generator | None = None) -> "McpdModel":
        rng = rng if rng is not None else np.random.default_rng(config.seed)
        params = neural.init_params(N_GRADES, config.ffn_hidden, config.d_num, config.d_text,
                                    config.lstm_hidden, rng)
        return cls(config, params, standardizer, embedder or Embedder.from_model_config(config))

    def check(self) -> None:
        p, c = self.params, self.config
        expected = {
            "enc1.W": (c.ffn_hidden, N_GRADES), "enc2.W": (c.d_num, c.ffn_hidden),
            "lstm.W": (4 * c.lstm_hidden, c.d_num + c.d_text), "lstm.U": (4 * c.lstm_hidden, c.lstm_hidden),
            "head.w": (c.lstm_hidden,),
        }
        for name, shape in expected.items():
            if p[name].shape != shape:
                raise ModelError(f"parameter {name} has shape {p[name].shape}, expected {shape}")
        if self.embedder.config.dim != c.d_text:
            raise ModelError("embedder dimension does not match d_text")


# -- forward ------------------------------------------------------------------

def change_probabilities(params: neural.Params, raw: np.ndarray, config: McpdConfig) -> np.ndarray:
    """Per-period changepoint probabilities for a ``(B, 6, D)`` batch; never differentiated."""
    if config.cpd_input == "raw":
        series = raw
    elif config.cpd_input == "grades":
        series = raw[..., :N_GRADES]
    else:
        _, _, series = neural.encode_and_fuse(params, raw[..., :N_GRADES], raw[..., N_GRADES:])
    return batch_changepoint_probabilities(series, config.cpd)


def period_weights(probs: np.ndarray, config: McpdConfig) -> np.ndarray:
    return attention_weights(probs, config.weight_mode, config.gamma, config.temperature)


def _as_batch(raw) -> tuple[np.ndarray, bool]:
    raw = np.asarray(raw, dtype=np.float64)
    if raw.ndim == 2:
        return raw[np.newaxis], True
    if raw.ndim != 3:
        raise ModelError(f"expected (6, D) or (B, 6, D) input, got shape {raw.shape}")
    return raw, False


def prior_corrected(logits: np.ndarray, pos_weight: float) -> np.ndarray:
    """Undo the class weighting of the loss: ``sigmoid(logit - log(pos_weight))``.

    Training with ``pos_weight = neg/pos`` centres outputs on a balanced
    prior; shifting the logit restores the training-split base rate.
    """
    return expit(np.asarray(logits) - np.log(pos_weight))


def forward(model: McpdModel, raw, probs: np.ndarray | None = None, use_cpd: bool = True,
            calibrated: bool = True):
    """Risk probability for one record ``(6, D)`` or a batch ``(B, 6, D)``.

    ``probs`` may carry precomputed changepoint probabilities (ignored in
    encoded mode). ``use_cpd=False`` runs the changepoint-free pipeline.
    With ``calibrated`` the class-weight offset is removed from the logit
    (see :func:`prior_corrected`); it is a no-op when ``pos_weight == 1``.
    """
    batch, single = _as_batch(raw)
    D = N_GRADES + model.config.d_text
    if batch.shape[2] != D:
        raise ModelError(f"raw vectors have width {batch.shape[2]}, model expects {D}")
    weights = None
    if use_cpd:
        if probs is None or model.config.cpd_input == "encoded":
            probs = change_probabilities(model.params, batch, model.config)
        weights = period_weights(np.asarray(probs).reshape(batch.shape[:2]), model.config)
    p, cache = neural.stack_forward(model.params, batch[..., :N_GRADES], batch[..., N_GRADES:], weights)
    if calibrated and model.pos_weight != 1.0:
        p = prior_corrected(cache.logits, model.pos_weight)
    return float(p[0]) if single else p


@dataclass(frozen=True)
class Prediction:
    student_id: str
    probability: float
    change_probs: np.ndarray


def predict(model: McpdModel, record: StudentRecord) -> Prediction:
    raw = featurize(record, model.standardizer, model.embedder)[np.newaxis]
    probs = change_probabilities(model.params, raw, model.config)
    p = forward(model, raw, probs)
    return Prediction(record.student_id, float(p[0]), probs[0])


def predict_cohort(model: McpdModel, cohort: Cohort) -> tuple[np.ndarray, np.ndarray]:
    """Risk probabilities ``(n,)`` and change probabilities ``(n, 6)`` for a cohort."""
    raw = featurize_cohort(cohort, model.standardizer, model.embedder)
    if raw.shape[0] == 0:
        return np.empty(0), np.empty((0, N_PERIODS))
    probs = change_probabilities(model.params, raw, model.config)
    return forward(model, raw, probs), probs


# -- training -----------------------------------------------------------------

@dataclass
class TrainingReport:
    epoch_loss: list[float]
    seconds: float
    seed: int
    pos_weight: float
    n_train: int
    validation: object | None = None   # evalkit.MetricsReport

    def to_dict(self) -> dict:
        return {
            "epoch_loss": self.epoch_loss,
            "seconds": self.seconds,
            "seed": self.seed,
            "pos_weight": self.pos_weight,
            "n_train": self.n_train,
            "validation": None if self.validation is None else self.validation.to_dict(),
        }


def resolve_pos_weight(y: np.ndarray, config: McpdConfig) -> float:
    if config.pos_weight_mode == "fixed":
        return float(config.pos_weight)
    n_pos = int(y.sum())
    return (len(y) - n_pos) / n_pos


def _label_vector(cohort: Cohort, labels: Mapping[str, bool]) -> np.ndarray:
    try:
        return np.array([1.0 if labels[sid] else 0.0 for sid in cohort.ids])
    except KeyError as exc:
        raise SchemaError(f"no label for student {exc.args[0]!r}") from None


def fit(cohort: Cohort, labels: Mapping[str, bool], config: McpdConfig = McpdConfig(),
        validation: Cohort | None = None, validation_labels: Mapping[str, bool] | None = None,
        use_cpd: bool = True) -> tuple[McpdModel, TrainingReport]:
    """Train on ``cohort`` with mini-batch Adam and weighted BCE.

    The standardiser and ``pos_weight`` see only ``cohort``. ``use_cpd=False``
    trains the changepoint-free pipeline (same code path with no weights).
    """
    if len(cohort) < 20:
        raise TrainingError(f"need at least 20 training records, got {len(cohort)}")
    y = _label_vector(cohort, labels)
    if y.min() == y.max():
        raise TrainingError("training labels contain a single class")
    start = time.perf_counter()
    rng = np.random.default_rng(config.seed)
    std = Standardizer.fit(cohort)
    embedder = Embedder.from_model_config(config)
    model = McpdModel.initialize(config, std, embedder, rng)
    model.pos_weight = resolve_pos_weight(y, config)
    raw = featurize_cohort(cohort, std, embedder)
    grades, text = raw[..., :N_GRADES], raw[..., N_GRADES:]
    fixed_w = None
    if use_cpd and config.cpd_input != "encoded":
        fixed_w = period_weights(change_probabilities(model.params, raw, config), config)

    params = model.params
    adam = neural.AdamState.zeros_like(params)
    n = len(y)
    epoch_loss = []
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(n)
        total = 0.0
        for s in range(0, n, config.batch_size):
            idx = order[s:s + config.batch_size]
            if not use_cpd:
                w = None
            elif fixed_w is not None:
                w = fixed_w[idx]
            else:
                w = period_weights(change_probabilities(params, raw[idx], config), config)
            loss, grads = neural.stack_loss_and_grad(params, grades[idx], text[idx], w, y[idx],
                                                     model.pos_weight, scale=1.0 / len(idx))
            if not np.isfinite(loss):
                raise TrainingError(f"non-finite loss at epoch {epoch}")
            total += loss * len(idx)
            try:
                params, adam = neural.adam_step(params, grads, adam, config.lr)
            except TrainingError as exc:
                raise TrainingError(f"epoch {epoch}: {exc}") from None
        epoch_loss.append(total / n)
        log.debug("epoch %d loss %.6f", epoch, epoch_loss[-1])
    model.params = params
    report = TrainingReport(epoch_loss, time.perf_counter() - start, config.seed, model.pos_weight, n)
    if validation is not None and len(validation):
        from .evalkit import compute_metrics

        vp = predict_cohort(model, validation)[0] if use_cpd else forward(
            model, featurize_cohort(validation, std, embedder), use_cpd=False)
        report.validation = compute_metrics(vp, _label_vector(validation, validation_labels or labels))
    return model, report


# -- checkpoints --------------------------------------------------------------

def save_checkpoint(model: McpdModel, path) -> None:
    doc = {
        "schema_version": CHECKPOINT_VERSION,
        "config": model.config.to_dict(),
        "pos_weight": model.pos_weight,
        "standardizer": {"mean": model.standardizer.mean.tolist(), "std": model.standardizer.std.tolist()},
        "params": {name: {"shape": list(v.shape), "data": v.reshape(-1).tolist()}
                   for name, v in model.params.items()},
    }
    Path(path).write_text(json.dumps(doc, indent=1) + "\n", encoding="utf-8")


def load_checkpoint(path) -> McpdModel:
    path = Path(path)
    if not path.is_file():
        raise SchemaError(f"checkpoint not found: {path}")
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: malformed checkpoint: {exc.msg}") from None
    if doc.get("schema_version") != CHECKPOINT_VERSION:
        raise SchemaError(f"{path}: unsupported checkpoint schema_version {doc.get('schema_version')}")
    config = McpdConfig.from_dict(doc["config"])
    params = {}
    for name in neural.PARAM_NAMES:
        entry = doc["params"][name]
        arr = np.array(entry["data"], dtype=np.float64)
        if arr.size != int(np.prod(entry["shape"])):
            raise SchemaError(f"{path}: parameter {name} data does not match its shape")
        params[name] = arr.reshape(entry["shape"])
    std = Standardizer(np.array(doc["standardizer"]["mean"]), np.array(doc["standardizer"]["std"]))
    model = McpdModel(config, params, std, Embedder.from_model_config(config), float(doc["pos_weight"]))
    model.check()
    return model
