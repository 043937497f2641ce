"""Splits, metrics, baselines and a synthetic cohort generator with planted behaviour changes."""

from __future__ import annotations

import csv
import io
from dataclasses import asdict, dataclass
from typing import Mapping, Sequence

import numpy as np

from . import neural
from .errors import SchemaError, TrainingError
from .pipeline import (
    Embedder,
    McpdConfig,
    Standardizer,
    featurize_cohort,
    fit,
    predict_cohort,
    prior_corrected,
    resolve_pos_weight,
)
from .records import (
    N_PERIODS,
    BehaviorEvent,
    Cohort,
    PeriodRecord,
    StudentRecord,
    SubjectScores,
)


# -- metrics ------------------------------------------------------------------

@dataclass(frozen=True)
class MetricsReport:
    tp: int
    fp: int
    tn: int
    fn: int
    accuracy: float
    precision: float
    recall: float
    f1: float
    threshold: float = 0.5

    @classmethod
    def from_counts(cls, tp: int, fp: int, tn: int, fn: int, threshold: float = 0.5) -> "MetricsReport":
        total = tp + fp + tn + fn
        if total == 0:
            raise ValueError("empty confusion matrix")
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn) if tp + fn else 0.0
        # equals 2PR/(P+R) but in counts, so exact cases stay exact
        f1 = 2 * tp / (2 * tp + fp + fn) if tp else 0.0
        return cls(tp, fp, tn, fn, (tp + tn) / total, precision, recall, f1, threshold)

    def to_dict(self) -> dict:
        return asdict(self)


def compute_metrics(probs: Sequence[float], labels: Sequence, threshold: float = 0.5) -> MetricsReport:
    """Confusion counts at ``probs >= threshold`` and the derived scores."""
    p = np.asarray(probs, dtype=np.float64).reshape(-1)
    y = np.asarray(labels).astype(bool).reshape(-1)
    if p.size == 0:
        raise ValueError("compute_metrics needs at least one prediction")
    if p.shape != y.shape:
        raise ValueError(f"length mismatch: {p.size} predictions, {y.size} labels")
    pred = p >= threshold
    tp = int(np.sum(pred & y))
    fp = int(np.sum(pred & ~y))
    tn = int(np.sum(~pred & ~y))
    fn = int(np.sum(~pred & y))
    return MetricsReport.from_counts(tp, fp, tn, fn, threshold)


def roc_auc(scores: Sequence[float], labels: Sequence) -> float:
    """Mann-Whitney AUC with ties counted as one half."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels).astype(bool)
    pos, neg = s[y], s[~y]
    if pos.size == 0 or neg.size == 0:
        raise ValueError("AUC needs both classes")
    gt = (pos[:, None] > neg[None, :]).sum()
    eq = (pos[:, None] == neg[None, :]).sum()
    return float((gt + 0.5 * eq) / (pos.size * neg.size))


# -- splits -------------------------------------------------------------------

def stratified_split(cohort: Cohort, labels: Mapping[str, bool], test_fraction: float = 0.2,
                     seed: int = 0) -> tuple[list[str], list[str]]:
    """Per-class proportional train/test partition; ids keep cohort order within each part."""
    if not 0 < test_fraction < 1:
        raise ValueError(f"test_fraction must be in (0, 1), got {test_fraction}")
    rng = np.random.default_rng(seed)
    ids = cohort.ids
    test: set[str] = set()
    for cls in (True, False):
        members = [sid for sid in ids if bool(labels[sid]) == cls]
        if len(members) < 2:
            raise SchemaError(f"class {int(cls)} has {len(members)} member(s); need at least 2 to split")
        n_test = min(len(members) - 1, max(1, int(round(test_fraction * len(members)))))
        picked = rng.permutation(len(members))[:n_test]
        test.update(members[i] for i in picked)
    return [sid for sid in ids if sid not in test], [sid for sid in ids if sid in test]


# -- logistic baseline --------------------------------------------------------

@dataclass
class LogisticModel:
    params: neural.Params
    standardizer: Standardizer
    embedder: Embedder
    pos_weight: float = 1.0

    def predict_proba(self, cohort: Cohort) -> np.ndarray:
        X = featurize_cohort(cohort, self.standardizer, self.embedder).reshape(len(cohort), -1)
        return prior_corrected(X @ self.params["w"] + self.params["b"][0], self.pos_weight)


def fit_logistic(cohort: Cohort, labels: Mapping[str, bool], config: McpdConfig = McpdConfig()) -> LogisticModel:
    """Weighted logistic regression on the flattened six-period feature vector.

    Trained with the same optimiser, batch size, epochs and class weighting as MCPD.
    """
    y = np.array([1.0 if labels[sid] else 0.0 for sid in cohort.ids])
    if y.min() == y.max():
        raise TrainingError("training labels contain a single class")
    std = Standardizer.fit(cohort)
    embedder = Embedder.from_model_config(config)
    X = featurize_cohort(cohort, std, embedder).reshape(len(cohort), -1)
    rng = np.random.default_rng(config.seed)
    pos_weight = resolve_pos_weight(y, config)
    params = {"w": np.zeros(X.shape[1]), "b": np.zeros(1)}
    adam = neural.AdamState.zeros_like(params)
    for _ in range(config.epochs):
        order = rng.permutation(len(y))
        for s in range(0, len(y), config.batch_size):
            idx = order[s:s + config.batch_size]
            _, grads = neural.logistic_loss_and_grad(params, X[idx], y[idx], pos_weight, 1.0 / len(idx))
            params, adam = neural.adam_step(params, grads, adam, config.lr)
    return LogisticModel(params, std, embedder, pos_weight)


def logistic_baseline(cohort: Cohort, labels: Mapping[str, bool], split: tuple[list[str], list[str]],
                      config: McpdConfig = McpdConfig()) -> MetricsReport:
    train_ids, test_ids = split
    model = fit_logistic(cohort.subset(train_ids), labels, config)
    test = cohort.subset(test_ids)
    return compute_metrics(model.predict_proba(test), [labels[s] for s in test_ids])


# -- comparison ---------------------------------------------------------------

COMPARISON_MODELS = ("MCPD", "ablation", "logistic")


@dataclass(frozen=True)
class ComparisonRow:
    model: str
    metrics: MetricsReport
    seed: int
    probs: np.ndarray | None = None
    labels: tuple[bool, ...] = ()

    def at_threshold(self, threshold: float) -> MetricsReport:
        return compute_metrics(self.probs, self.labels, threshold)


def run_comparison(cohort: Cohort, labels: Mapping[str, bool], config: McpdConfig = McpdConfig(),
                   test_fraction: float = 0.2, threshold: float = 0.5) -> list[ComparisonRow]:
    """Train MCPD, its gamma=0 ablation and the logistic baseline on one shared split."""
    train_ids, test_ids = stratified_split(cohort, labels, test_fraction, config.seed)
    train, test = cohort.subset(train_ids), cohort.subset(test_ids)
    y_test = tuple(bool(labels[s]) for s in test_ids)
    scored = []
    for name, cfg in (("MCPD", config), ("ablation", config.replace(weight_mode="affine", gamma=0.0))):
        model, _ = fit(train, labels, cfg)
        scored.append((name, predict_cohort(model, test)[0]))
    scored.append(("logistic", fit_logistic(train, labels, config).predict_proba(test)))
    return [ComparisonRow(name, compute_metrics(p, y_test, threshold), config.seed, p, y_test)
            for name, p in scored]


def comparison_csv(rows: Sequence[ComparisonRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["model", "accuracy", "precision", "recall", "f1", "seed"])
    for r in rows:
        m = r.metrics
        w.writerow([r.model, f"{m.accuracy:.6f}", f"{m.precision:.6f}", f"{m.recall:.6f}", f"{m.f1:.6f}", r.seed])
    return buf.getvalue()


def threshold_sweep_csv(rows: Sequence[ComparisonRow], thresholds: Sequence[float]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["model", "seed", "threshold", "accuracy", "precision", "recall", "f1"])
    for r in rows:
        for t in thresholds:
            m = r.at_threshold(t)
            w.writerow([r.model, r.seed, f"{t:g}", f"{m.accuracy:.6f}", f"{m.precision:.6f}",
                        f"{m.recall:.6f}", f"{m.f1:.6f}"])
    return buf.getvalue()


# -- synthetic cohorts --------------------------------------------------------

@dataclass(frozen=True)
class SyntheticConfig:
    """Knobs of the planted-change generator.

    ``shift_magnitude`` is measured in units of the stationary within-student
    grade standard deviation. Post-change event-rate increases scale with it,
    so ``shift_magnitude=0`` with ``vocab_shift=False`` is a null generator.
    """

    n_students: int = 1200
    positive_rate: float = 0.10
    shift_magnitude: float = 3.0
    change_period_min: int = 2
    change_period_max: int = 5
    vocab_shift: bool = False
    seed: int = 0
    cohort_year: int = 2021

    def __post_init__(self) -> None:
        if not 0 < self.positive_rate < 1:
            raise ValueError("positive_rate must be in (0, 1)")
        if self.n_students < 40:
            raise ValueError("n_students must be >= 40")
        if not 2 <= self.change_period_min <= self.change_period_max <= N_PERIODS:
            raise ValueError("change period range must lie within 2..6")
        if self.shift_magnitude < 0:
            raise ValueError("shift_magnitude must be >= 0")


_BASE_MEAN = 68.0
_BASE_SD = 9.0
_SUBJECT_SD = 4.0
_AR_PHI = 0.6
_AR_INNOV = 3.0
_SLOPE_SD = 3.0
_GRADE_SCALE = _AR_INNOV / np.sqrt(1 - _AR_PHI ** 2)

# per-period Poisson rates: baseline, and extra per unit of shift after the change
_BASE_RATES = {"absence": 0.35, "reward": 0.3, "punishment": 0.12, "activity": 0.3}
_SHIFT_RATES = {"absence": 0.25, "reward": -0.08, "punishment": 0.2, "activity": 0.0}

_REASONS = {
    "absence": ["sick leave", "family matters", "medical appointment", "late arrival", "fever"],
    "reward": ["helping classmates", "class monitor duty", "tidy homework", "good attendance"],
    "punishment": ["late homework", "uniform violation", "talking in class", "using phone in class",
                   "forgot textbook"],
    "activity": ["science club", "debate team", "choir", "volunteer service", "chess club"],
}
_AT_RISK_REASONS = {
    "punishment": ["smoking", "fighting", "attacking classmates", "touching body",
                   "repeatedly uncorrected misconduct", "swearing multiple times"],
    "activity": ["art workshop", "sports training", "pet grooming"],
}


def _events(rng, kind: str, rate: float, period: int, exclusive: bool) -> list[BehaviorEvent]:
    out = []
    for _ in range(rng.poisson(max(rate, 0.0))):
        pool = _AT_RISK_REASONS[kind] if exclusive and kind in _AT_RISK_REASONS and rng.random() < 0.5 \
            else _REASONS[kind]
        reason = pool[rng.integers(len(pool))]
        severity = "none"
        if kind == "punishment":
            p_major = 0.5 if exclusive or reason in _AT_RISK_REASONS["punishment"] else 0.15
            severity = "major" if rng.random() < p_major else "minor"
        out.append(BehaviorEvent(kind, period, severity, reason))
    return out


def generate_synthetic(config: SyntheticConfig = SyntheticConfig(), return_changes: bool = False):
    """Seeded cohort where at-risk students undergo an abrupt change at a random period.

    Every student gets an AR(1) grade trajectory around a personal baseline
    and sparse benign events. At-risk students follow the same process until
    their change period, after which grades drop by ``shift_magnitude``
    grade-scales and absence/punishment rates rise.

    With ``return_changes`` the planted change period of every at-risk
    student is returned alongside the cohort as ``{student_id: period}``.
    """
    rng = np.random.default_rng(config.seed)
    n = config.n_students
    n_pos = int(round(n * config.positive_rate))
    positive = np.zeros(n, dtype=bool)
    positive[rng.permutation(n)[:n_pos]] = True

    records = []
    changes: dict[str, int] = {}
    for i in range(n):
        base = _BASE_MEAN + _BASE_SD * rng.normal() + _SUBJECT_SD * rng.normal(size=3)
        e = rng.normal(scale=_GRADE_SCALE, size=3)
        slope = _SLOPE_SD * rng.normal()
        tau = int(rng.integers(config.change_period_min, config.change_period_max + 1))
        periods = []
        for t in range(1, N_PERIODS + 1):
            if t > 1:
                e = _AR_PHI * e + rng.normal(scale=_AR_INNOV, size=3)
            changed = bool(positive[i]) and t >= tau
            shift = config.shift_magnitude * _GRADE_SCALE if changed else 0.0
            grades = np.clip(base + slope * (t - 1) + e - shift, 0.0, 100.0)
            scores = SubjectScores(*(round(float(g), 1) for g in grades))
            events = []
            for kind, rate in _BASE_RATES.items():
                if changed:
                    rate = rate + _SHIFT_RATES[kind] * config.shift_magnitude
                events += _events(rng, kind, rate, t, changed and config.vocab_shift)
            periods.append(PeriodRecord(t, scores, tuple(events)))
        sid = f"S{i:05d}"
        if positive[i]:
            changes[sid] = tau
        records.append(StudentRecord(
            student_id=sid,
            cohort_year=config.cohort_year,
            grade_level=int(rng.integers(7, 13)),
            periods=tuple(periods),
            dropout_next_year=bool(positive[i]),
        ))
    cohort = Cohort(tuple(records), source=f"synthetic(seed={config.seed})")
    return (cohort, changes) if return_changes else cohort
