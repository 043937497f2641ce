"""Small record builders shared by the unit tests."""

from mcpd.records import BehaviorEvent, Cohort, PeriodRecord, StudentRecord, SubjectScores


def make_record(sid, scores=None, events=None, dropout=False, year=2021):
    """``scores``: list of 6 composites split evenly or 6 (c, m, e) triples.

    ``events``: mapping period -> list of (kind, severity, reason).
    """
    scores = scores if scores is not None else [60.0] * 6
    events = events or {}
    periods = []
    for i, s in enumerate(scores, start=1):
        triple = s if isinstance(s, tuple) else (s / 3.0, s / 3.0, s / 3.0)
        evs = tuple(BehaviorEvent(kind, i, sev, reason) for kind, sev, reason in events.get(i, ()))
        periods.append(PeriodRecord(i, SubjectScores(*triple), evs))
    return StudentRecord(sid, year, 10, tuple(periods), dropout)


def make_cohort(records):
    return Cohort(tuple(records))
