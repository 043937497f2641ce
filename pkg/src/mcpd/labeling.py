"""Risk labels: next-year dropout plus the academic, behavioural and time-management crises.

All thresholds read "more than k" strictly, so "more than 3 times" means at
least 4. Students tied at a percentile cutoff are all flagged.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

import numpy as np

from .errors import SchemaError
from .records import N_PERIODS, Cohort, StudentRecord

DEFAULT_FRACTION = 0.15
LABEL_TARGETS = ("dropout", "academic", "behavioral", "time")


@dataclass(frozen=True)
class LabelSet:
    student_id: str
    dropout: bool
    academic_crisis: bool
    behavioral_crisis: bool
    time_crisis: bool


def _cutoff_count(fraction: float, n: int) -> int:
    # guard against 0.15 * 20 == 3.0000000000000004
    return max(1, math.ceil(fraction * n - 1e-9))


def _bottom_flags(values: np.ndarray, fraction: float) -> np.ndarray:
    """Flag the lowest ceil(fraction * n) finite values, extended to ties at the cutoff."""
    flags = np.zeros(values.shape, dtype=bool)
    present = np.isfinite(values)
    n = int(present.sum())
    if n == 0:
        return flags
    k = _cutoff_count(fraction, n)
    cutoff = np.sort(values[present])[k - 1]
    flags[present] = values[present] <= cutoff
    return flags


def _check_fraction(fraction: float) -> None:
    if not 0 < fraction < 1:
        raise ValueError(f"fraction must be in (0, 1), got {fraction}")


def composite_matrix(cohort: Cohort, weights=(1.0, 1.0, 1.0)) -> np.ndarray:
    """``(n_students, 6)`` composite scores, NaN where any subject is missing."""
    out = np.full((len(cohort), N_PERIODS), np.nan)
    for i, rec in enumerate(cohort):
        for j, p in enumerate(rec.periods):
            c = p.scores.composite(weights)
            if c is not None:
                out[i, j] = c
    return out


def _checked_composites(cohort: Cohort, weights) -> np.ndarray:
    if len(cohort) == 0:
        raise SchemaError("labeling needs a non-empty cohort")
    comp = composite_matrix(cohort, weights)
    empty = ~np.isfinite(comp).any(axis=1)
    if empty.any():
        sid = cohort.records[int(np.argmax(empty))].student_id
        raise SchemaError(f"student {sid} has no complete exam composite")
    return comp


def bottom_percentile_flags(cohort: Cohort, fraction: float = DEFAULT_FRACTION,
                            weights=(1.0, 1.0, 1.0)) -> dict[str, tuple[bool, ...]]:
    """Per-exam bottom-``fraction`` flags keyed by student id.

    An exam with a missing subject is excluded for that student (never flagged)
    and does not count towards that exam's participant total.
    """
    _check_fraction(fraction)
    comp = _checked_composites(cohort, weights)
    flags = np.column_stack([_bottom_flags(comp[:, j], fraction) for j in range(N_PERIODS)])
    return {sid: tuple(bool(f) for f in row) for sid, row in zip(cohort.ids, flags)}


def label_academic_crisis(cohort: Cohort, fraction: float = DEFAULT_FRACTION,
                          min_flags: int = 4, weights=(1.0, 1.0, 1.0)) -> dict[str, bool]:
    flags = bottom_percentile_flags(cohort, fraction, weights)
    return {sid: sum(f) >= min_flags for sid, f in flags.items()}


def label_behavioral_crisis(record: StudentRecord) -> bool:
    severities = {ev.severity for ev in record.events("punishment")}
    return "major" in severities and "minor" in severities


def label_time_crisis(cohort: Cohort, fraction: float = DEFAULT_FRACTION,
                      min_activities: int = 3, weights=(1.0, 1.0, 1.0)) -> dict[str, bool]:
    _check_fraction(fraction)
    comp = _checked_composites(cohort, weights)
    year_avg = np.nanmean(comp, axis=1)
    low = _bottom_flags(year_avg, fraction)
    return {
        rec.student_id: bool(low[i]) and len(rec.events("activity")) >= min_activities
        for i, rec in enumerate(cohort)
    }


def label_cohort(cohort: Cohort, fraction: float = DEFAULT_FRACTION) -> list[LabelSet]:
    academic = label_academic_crisis(cohort, fraction)
    time = label_time_crisis(cohort, fraction)
    return [
        LabelSet(r.student_id, r.dropout_next_year, academic[r.student_id],
                 label_behavioral_crisis(r), time[r.student_id])
        for r in cohort
    ]


def labels_for_target(cohort: Cohort, target: str, fraction: float = DEFAULT_FRACTION) -> dict[str, bool]:
    """Label vector for one of ``dropout``, ``academic``, ``behavioral``, ``time``."""
    if target == "dropout":
        return {r.student_id: r.dropout_next_year for r in cohort}
    if target == "academic":
        return label_academic_crisis(cohort, fraction)
    if target == "behavioral":
        return {r.student_id: label_behavioral_crisis(r) for r in cohort}
    if target == "time":
        return label_time_crisis(cohort, fraction)
    raise ValueError(f"unknown label target {target!r}; expected one of {LABEL_TARGETS}")


def labels_csv(labels: list[LabelSet]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["student_id", "dropout", "academic_crisis", "behavioral_crisis", "time_crisis"])
    for ls in labels:
        w.writerow([ls.student_id, int(ls.dropout), int(ls.academic_crisis),
                    int(ls.behavioral_crisis), int(ls.time_crisis)])
    return buf.getvalue()
