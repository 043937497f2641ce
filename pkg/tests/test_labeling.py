import pytest

from helpers import make_cohort, make_record
from mcpd.labeling import (
    bottom_percentile_flags,
    label_academic_crisis,
    label_behavioral_crisis,
    label_cohort,
    label_time_crisis,
    labels_csv,
    labels_for_target,
)


def _ranked_cohort(n=10):
    return make_cohort([make_record(f"s{i}", scores=[30.0 + 6 * i] * 6) for i in range(n)])


def test_ten_students_two_flagged_per_exam():
    flags = bottom_percentile_flags(_ranked_cohort())
    per_exam = [sum(f[j] for f in flags.values()) for j in range(6)]
    assert per_exam == [2] * 6
    assert flags["s0"] == (True,) * 6 and flags["s1"] == (True,) * 6 and flags["s2"] == (False,) * 6


def test_total_tie_flags_everyone():
    cohort = make_cohort([make_record(f"s{i}") for i in range(10)])
    assert all(all(f) for f in bottom_percentile_flags(cohort).values())


def test_tie_at_cutoff_extends():
    scores = [30, 40, 40, 40, 50, 60, 70, 80, 90, 99]
    cohort = make_cohort([make_record(f"s{i}", scores=[float(s)] * 6) for i, s in enumerate(scores)])
    flagged = {sid for sid, f in bottom_percentile_flags(cohort).items() if f[0]}
    assert flagged == {"s0", "s1", "s2", "s3"}


def test_float_fraction_boundary():
    # 0.15 * 20 is 3.0000000000000004 in floating point; the cutoff must still be 3
    cohort = make_cohort([make_record(f"s{i:02d}", scores=[10.0 + 4 * i] * 6) for i in range(20)])
    flags = bottom_percentile_flags(cohort)
    assert sum(f[0] for f in flags.values()) == 3


def test_missing_subject_not_flagged_and_not_counted():
    recs = [make_record(f"s{i}", scores=[30.0 + 6 * i] * 6) for i in range(10)]
    recs[0] = make_record("s0", scores=[(None, 1.0, 1.0)] + [30.0] * 5)
    flags = bottom_percentile_flags(make_cohort(recs))
    assert flags["s0"][0] is False
    # nine participants in exam 1: ceil(1.35) = 2 flagged (s1, s2)
    assert sum(f[0] for f in flags.values()) == 2


def _academic_fixture(n_low):
    low = [10.0 if j < n_low else 95.0 for j in range(6)]
    recs = [make_record("target", scores=low)]
    recs += [make_record(f"s{i}", scores=[50.0 + i] * 6) for i in range(9)]
    return make_cohort(recs)


@pytest.mark.parametrize("n_low,expected", [(4, True), (3, False), (0, False), (6, True)])
def test_academic_more_than_three(n_low, expected):
    assert label_academic_crisis(_academic_fixture(n_low))["target"] is expected


@pytest.mark.parametrize("sevs,expected", [
    (("major", "minor"), True), (("major", "major"), False), ((), False), (("minor", "minor", "major"), True)])
def test_behavioral_conjunction(sevs, expected):
    rec = make_record("x", events={i + 1: [("punishment", s, "late")] for i, s in enumerate(sevs)})
    assert label_behavioral_crisis(rec) is expected


def _time_fixture(n_act, low):
    events = {i + 1: [("activity", "none", "club")] for i in range(n_act)}
    recs = [make_record("target", scores=[10.0 if low else 99.0] * 6, events=events)]
    recs += [make_record(f"s{i}", scores=[40.0 + 5 * i] * 6) for i in range(9)]
    return make_cohort(recs)


@pytest.mark.parametrize("n_act,low,expected", [(3, True, True), (2, True, False), (5, False, False)])
def test_time_crisis(n_act, low, expected):
    assert label_time_crisis(_time_fixture(n_act, low))["target"] is expected


def test_label_targets_and_csv():
    cohort = _academic_fixture(4)
    assert labels_for_target(cohort, "academic")["target"] is True
    assert labels_for_target(cohort, "dropout")["target"] is False
    with pytest.raises(ValueError):
        labels_for_target(cohort, "attendance")
    text = labels_csv(label_cohort(cohort))
    assert text.splitlines()[0] == "student_id,dropout,academic_crisis,behavioral_crisis,time_crisis"
    assert text.splitlines()[1] == "target,0,1,0,0"


@pytest.mark.parametrize("fraction", [0.0, 1.0, -0.1])
def test_fraction_bounds(fraction):
    with pytest.raises(ValueError):
        bottom_percentile_flags(_ranked_cohort(), fraction)
