"""Student-year records, the JSONL record format, period summaries and cohort reports."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from .errors import ParseError, SchemaError
from .text_embed import tokenize

SCHEMA_VERSION = 1
N_PERIODS = 6
SUBJECTS = ("chinese", "math", "english")
EVENT_KINDS = ("absence", "reward", "punishment", "activity")
SEVERITIES = ("major", "minor", "none")


@dataclass(frozen=True)
class SubjectScores:
    """Exam scores in [0, 100]; ``None`` marks a missing score."""

    chinese: float | None = None
    math: float | None = None
    english: float | None = None

    def __post_init__(self) -> None:
        for name in SUBJECTS:
            v = getattr(self, name)
            if v is None:
                continue
            if isinstance(v, bool) or not isinstance(v, (int, float)):
                raise SchemaError(f"score {name} must be a number or null, got {v!r}")
            if not math.isfinite(v) or not 0 <= v <= 100:
                raise SchemaError(f"score {name}={v} outside [0, 100]")

    def as_tuple(self) -> tuple[float | None, float | None, float | None]:
        return (self.chinese, self.math, self.english)

    def composite(self, weights=(1.0, 1.0, 1.0)) -> float | None:
        vals = self.as_tuple()
        if any(v is None for v in vals):
            return None
        return float(sum(w * v for w, v in zip(weights, vals)))


@dataclass(frozen=True)
class BehaviorEvent:
    kind: str
    period_index: int
    severity: str = "none"
    reason: str = ""

    def __post_init__(self) -> None:
        if self.kind not in EVENT_KINDS:
            raise SchemaError(f"unknown event kind {self.kind!r}")
        if self.severity not in SEVERITIES:
            raise SchemaError(f"unknown severity {self.severity!r}")
        if self.severity != "none" and self.kind != "punishment":
            raise SchemaError(f"severity {self.severity!r} only allowed on punishments")
        if not 1 <= self.period_index <= N_PERIODS:
            raise SchemaError(f"period_index {self.period_index} outside 1..{N_PERIODS}")
        if not isinstance(self.reason, str):
            raise SchemaError("event reason must be a string")


@dataclass(frozen=True)
class PeriodRecord:
    index: int
    scores: SubjectScores
    events: tuple[BehaviorEvent, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "events", tuple(self.events))
        if not 1 <= self.index <= N_PERIODS:
            raise SchemaError(f"period index {self.index} outside 1..{N_PERIODS}")
        for ev in self.events:
            if ev.period_index != self.index:
                raise SchemaError(f"event tagged period {ev.period_index} stored in period {self.index}")

    def events_of(self, kind: str) -> list[BehaviorEvent]:
        return [ev for ev in self.events if ev.kind == kind]


@dataclass(frozen=True)
class StudentRecord:
    student_id: str
    cohort_year: int
    grade_level: int
    periods: tuple[PeriodRecord, ...]
    dropout_next_year: bool

    def __post_init__(self) -> None:
        object.__setattr__(self, "periods", tuple(self.periods))
        if len(self.periods) != N_PERIODS:
            raise SchemaError(
                f"student {self.student_id}: expected {N_PERIODS} periods, got {len(self.periods)}")
        if [p.index for p in self.periods] != list(range(1, N_PERIODS + 1)):
            raise SchemaError(f"student {self.student_id}: periods must be indexed 1..{N_PERIODS} in order")

    def events(self, kind: str | None = None) -> list[BehaviorEvent]:
        return [ev for p in self.periods for ev in p.events if kind is None or ev.kind == kind]


@dataclass(frozen=True)
class Cohort:
    records: tuple[StudentRecord, ...] = ()
    source: str = ""

    def __post_init__(self) -> None:
        object.__setattr__(self, "records", tuple(self.records))
        seen: set[str] = set()
        for rec in self.records:
            if rec.student_id in seen:
                raise SchemaError(f"duplicate student_id {rec.student_id!r}")
            seen.add(rec.student_id)

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    @property
    def ids(self) -> list[str]:
        return [r.student_id for r in self.records]

    def subset(self, ids: Iterable[str]) -> "Cohort":
        by_id = {r.student_id: r for r in self.records}
        return Cohort(tuple(by_id[i] for i in ids), source=self.source)


# -- record file (JSONL) ------------------------------------------------------

def record_to_dict(rec: StudentRecord) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "student_id": rec.student_id,
        "cohort_year": rec.cohort_year,
        "grade_level": rec.grade_level,
        "dropout_next_year": rec.dropout_next_year,
        "periods": [
            {
                "index": p.index,
                "scores": dict(zip(SUBJECTS, p.scores.as_tuple())),
                "events": [{"kind": e.kind, "severity": e.severity, "reason": e.reason} for e in p.events],
            }
            for p in rec.periods
        ],
    }


def _expect(obj: dict, key: str, types, where: str):
    if key not in obj:
        raise SchemaError(f"{where}: missing key {key!r}")
    val = obj[key]
    if isinstance(val, bool) and bool not in (types if isinstance(types, tuple) else (types,)):
        raise SchemaError(f"{where}: {key!r} has wrong type")
    if not isinstance(val, types):
        raise SchemaError(f"{where}: {key!r} has wrong type {type(val).__name__}")
    return val


def record_from_dict(obj: dict) -> StudentRecord:
    if not isinstance(obj, dict):
        raise SchemaError("record must be a JSON object")
    version = _expect(obj, "schema_version", int, "record")
    if version != SCHEMA_VERSION:
        raise SchemaError(f"unsupported schema_version {version}")
    sid = _expect(obj, "student_id", str, "record")
    where = f"student {sid}"
    periods_raw = _expect(obj, "periods", list, where)
    if len(periods_raw) != N_PERIODS:
        raise SchemaError(f"{where}: expected {N_PERIODS} periods, got {len(periods_raw)}")
    periods = []
    for praw in periods_raw:
        if not isinstance(praw, dict):
            raise SchemaError(f"{where}: period must be an object")
        idx = _expect(praw, "index", int, where)
        sraw = _expect(praw, "scores", dict, where)
        scores = SubjectScores(**{s: sraw.get(s) for s in SUBJECTS})
        events = []
        for eraw in _expect(praw, "events", list, where):
            if not isinstance(eraw, dict):
                raise SchemaError(f"{where}: event must be an object")
            events.append(BehaviorEvent(
                kind=_expect(eraw, "kind", str, where),
                period_index=idx,
                severity=eraw.get("severity", "none"),
                reason=eraw.get("reason", ""),
            ))
        periods.append(PeriodRecord(idx, scores, tuple(events)))
    try:
        return StudentRecord(
            student_id=sid,
            cohort_year=_expect(obj, "cohort_year", int, where),
            grade_level=_expect(obj, "grade_level", int, where),
            periods=tuple(periods),
            dropout_next_year=_expect(obj, "dropout_next_year", bool, where),
        )
    except SchemaError as exc:
        msg = str(exc)
        raise SchemaError(msg if sid in msg else f"{where}: {msg}") from None


def dumps_record(rec: StudentRecord) -> str:
    return json.dumps(record_to_dict(rec), ensure_ascii=False)


def load_records(path) -> Cohort:
    """Parse a JSONL record file. Errors carry the offending line number."""
    path = Path(path)
    records = []
    seen: dict[str, int] = {}
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"malformed JSON: {exc.msg}", lineno) from None
            try:
                rec = record_from_dict(obj)
            except SchemaError as exc:
                raise ParseError(str(exc), lineno) from None
            if rec.student_id in seen:
                raise ParseError(
                    f"duplicate student_id {rec.student_id!r} (first seen on line {seen[rec.student_id]})", lineno)
            seen[rec.student_id] = lineno
            records.append(rec)
    return Cohort(tuple(records), source=str(path))


def save_records(cohort: Cohort, path) -> None:
    with Path(path).open("w", encoding="utf-8", newline="\n") as fh:
        for rec in cohort.records:
            fh.write(dumps_record(rec))
            fh.write("\n")


# -- summaries ----------------------------------------------------------------

def _reasons(events: list[BehaviorEvent]) -> str:
    return "; ".join(ev.reason for ev in events if ev.reason)


def render_period_summary(period: PeriodRecord) -> str:
    ab, rw, pu, ac = (period.events_of(k) for k in EVENT_KINDS)
    return (
        f"During this period, the student was absent {len(ab)} times, with reasons including {_reasons(ab)}, "
        f"received {len(rw)} rewards, for reasons such as {_reasons(rw)}, "
        f"faced {len(pu)} punishments, due to {_reasons(pu)}, "
        f"and participated in {len(ac)} activities, involving {_reasons(ac)}."
    )


# -- descriptive report -------------------------------------------------------

GROUPS = ("at_risk", "not_at_risk")


@dataclass(frozen=True)
class GroupStats:
    size: int
    mean: dict[str, float]
    stddev: dict[str, float]


@dataclass(frozen=True)
class DifferenceReport:
    """Per-group event-count statistics plus group-exclusive reason tokens.

    ``groups[name]`` is ``None`` when the cohort has no member of that group.
    ``exclusive[group][kind]`` lists tokens seen in ``kind`` reasons of that
    group only; the ``at_risk`` entry is the headline list.
    """

    groups: dict[str, GroupStats | None]
    exclusive: dict[str, dict[str, list[str]]] = field(default_factory=dict)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["group", "event_kind", "mean", "stddev"])
        for g in GROUPS:
            stats = self.groups.get(g)
            for kind in EVENT_KINDS:
                if stats is None:
                    w.writerow([g, kind, "NA", "NA"])
                else:
                    w.writerow([g, kind, repr(stats.mean[kind]), repr(stats.stddev[kind])])
        return buf.getvalue()

    def exclusive_text(self) -> str:
        lines = []
        for g in GROUPS:
            for kind, toks in self.exclusive.get(g, {}).items():
                lines.append(f"[{g} only: {kind}]")
                lines.append(" ".join(toks))
        return "\n".join(lines) + "\n"


def cohort_report(cohort: Cohort, labels: dict[str, bool] | None = None) -> DifferenceReport:
    """Event-count statistics and exclusive reason tokens by risk group.

    ``labels`` defaults to each record's ``dropout_next_year`` flag. Standard
    deviations are population (ddof=0) values.
    """
    if len(cohort) == 0:
        raise SchemaError("cohort_report needs a non-empty cohort")
    if labels is None:
        labels = {r.student_id: r.dropout_next_year for r in cohort}
    members = {g: [r for r in cohort if labels[r.student_id] == (g == "at_risk")] for g in GROUPS}

    groups: dict[str, GroupStats | None] = {}
    for g, recs in members.items():
        if not recs:
            groups[g] = None
            continue
        mean, std = {}, {}
        for kind in EVENT_KINDS:
            counts = np.array([len(r.events(kind)) for r in recs], dtype=np.float64)
            mean[kind] = float(counts.sum() / len(recs))
            std[kind] = float(np.sqrt(((counts - mean[kind]) ** 2).sum() / len(recs)))
        groups[g] = GroupStats(len(recs), mean, std)

    vocab = {g: {kind: set() for kind in ("punishment", "activity")} for g in GROUPS}
    for g, recs in members.items():
        for r in recs:
            for kind in ("punishment", "activity"):
                for ev in r.events(kind):
                    vocab[g][kind].update(tokenize(ev.reason))
    exclusive = {
        g: {kind: sorted(vocab[g][kind] - vocab[other][kind]) for kind in ("punishment", "activity")}
        for g, other in zip(GROUPS, reversed(GROUPS))
    }
    return DifferenceReport(groups, exclusive)
