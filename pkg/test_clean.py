import numpy as np
import pytest

from core.cleaning import (
    RULE_INTRA, RULE_KINEMATICS, RULE_START, CleaningLimits, clean_saccades, cleaning_report_from_dict,
    summarize_cleaning, violated_rules,
)
from core.events import EventKind, GazeEvent, GeometryConfig, detect_events
from core.ingest import ClassLabel, TrialRecord

LIMITS = CleaningLimits()

# Dropout positions of the intra-saccade zero-run pattern, relative to saccade onset
ZERO_RUNS = (7, 8, 14, 15, 16, 18, 19, 20)


def _steady_trial(n=400):
    x = np.full(n, 500.0)
    y = np.full(n, 500.0)
    return x, y, np.ones(n, dtype=bool)


def _trial(x, y, valid):
    return TrialRecord("E01", ClassLabel.EXPERT, 1, 1, np.arange(len(x)) * 4.0, x, y, valid)


def _saccade(start, end=None, peak_velocity=500.0, peak_acc=20000.0, peak_dec=-20000.0):
    end = start + 29 if end is None else end
    return GazeEvent(
        kind=EventKind.SACCADE,
        start_idx=start,
        end_idx=end,
        start_ms=start * 4.0,
        duration=(end - start) * 4.0,
        amplitude=10.0,
        mean_velocity=peak_velocity / 2,
        peak_velocity=peak_velocity,
        mean_acceleration=peak_acc / 2,
        peak_acceleration=peak_acc,
        mean_deceleration=peak_dec / 2,
        peak_deceleration=peak_dec,
    )


def _plant_start(x, y, valid, start):
    x[start] = 0
    y[start] = 0
    valid[start] = False


def _plant_zero_runs(x, y, valid, start):
    for offset in ZERO_RUNS:
        x[start + offset] = 0
        y[start + offset] = 0
        valid[start + offset] = False


# Test 1 - Each rule on its own

def test_saccade_starting_at_origin_breaks_start_rule():
    x, y, valid = _steady_trial()
    _plant_start(x, y, valid, 10)
    assert violated_rules(_saccade(10), _trial(x, y, valid), LIMITS) == [RULE_START]


def test_zero_run_pattern_breaks_intra_saccade_rule():
    """ Dropouts at onset + 7, 8, 14-16 and 18-20 inside a 30-sample saccade."""
    x, y, valid = _steady_trial()
    _plant_zero_runs(x, y, valid, 10)
    assert violated_rules(_saccade(10), _trial(x, y, valid), LIMITS) == [RULE_INTRA]


def test_invalid_onset_away_from_origin_breaks_intra_saccade_rule():
    """ Tracking flagged lost at the onset sample while the coordinates still look real."""
    x, y, valid = _steady_trial()
    valid[50] = False
    trial = _trial(x, y, valid)
    assert violated_rules(_saccade(50, 60), trial, LIMITS) == [RULE_INTRA]

    kept, report = clean_saccades([_saccade(50, 60)], trial, LIMITS)
    assert kept == []
    assert report.removed_by_rule == {RULE_START: 0, RULE_INTRA: 1, RULE_KINEMATICS: 0}


@pytest.mark.parametrize("kwargs", [
    {"peak_velocity": 1000.1},
    {"peak_acc": 100000.5},
    {"peak_dec": -100000.5},
])
def test_kinematic_limits(kwargs):
    trial = _trial(*_steady_trial())
    assert violated_rules(_saccade(10, **kwargs), trial, LIMITS) == [RULE_KINEMATICS]


def test_limits_themselves_are_allowed():
    """ The limits are strict: a saccade exactly at 1000 deg/s and 100.000 deg/s^2 is kept."""
    trial = _trial(*_steady_trial())
    event = _saccade(10, peak_velocity=1000.0, peak_acc=100000.0, peak_dec=-100000.0)
    assert violated_rules(event, trial, LIMITS) == []


def test_non_saccades_are_never_removed():
    x, y, valid = _steady_trial()
    valid[20:30] = False
    trial = _trial(x, y, valid)
    events = [
        GazeEvent(EventKind.FIXATION, 0, 19, 0.0, 76.0, dispersion=0.0),
        GazeEvent(EventKind.GAP, 20, 29, 80.0, 40.0, samples_valid=False),
    ]
    kept, report = clean_saccades(events, trial, LIMITS)
    assert kept == events
    assert report.total_saccades == 0
    assert report.removed_fraction == 0.0


# Test 2 - Planted corpus yields exactly the planted removal set

def test_planted_corpus_removes_exactly_the_planted_saccades():
    """ 20 trials of 10 saccades each. 11 of the 200 saccades break one or more rules (5.5%)."""
    plants = {
        (0, 1): ("start",),
        (0, 4): ("intra",),
        (2, 0): ("fast",),
        (3, 9): ("start", "fast"),
        (5, 5): ("intra", "fast"),
        (7, 2): ("start", "intra"),
        (9, 3): ("fast",),
        (11, 8): ("intra",),
        (13, 6): ("start",),
        (16, 7): ("start", "intra", "fast"),
        (19, 0): ("intra",),
    }
    reports = []
    for trial_no in range(20):
        x, y, valid = _steady_trial()
        events = []
        planted = set()
        for i in range(10):
            start = 10 + 35 * i
            kinds = plants.get((trial_no, i), ())
            if "start" in kinds:
                _plant_start(x, y, valid, start)
            if "intra" in kinds:
                _plant_zero_runs(x, y, valid, start)
            events.append(_saccade(start, peak_velocity=1500.0 if "fast" in kinds else 500.0))
            if kinds:
                planted.add(start)

        kept, report = clean_saccades(events, _trial(x, y, valid), LIMITS)
        removed = {ev.start_idx for ev in events} - {ev.start_idx for ev in kept}
        assert removed == planted
        reports.append(report)

    total = summarize_cleaning(reports)
    assert total.total_saccades == 200
    assert total.removed_total == 11
    assert total.removed_fraction == pytest.approx(0.055, abs=0.001)
    assert total.removed_by_rule == {RULE_START: 5, RULE_INTRA: 6, RULE_KINEMATICS: 5}
    assert total.removed_samples == 11 * 30
    assert total.total_samples == 20 * 400


# Test 3 - Cleaning is idempotent

def test_cleaning_twice_changes_nothing():
    x, y, valid = _steady_trial()
    _plant_start(x, y, valid, 45)
    trial = _trial(x, y, valid)
    events = [_saccade(10), _saccade(45), _saccade(80, peak_velocity=2000.0)]

    once, first = clean_saccades(events, trial, LIMITS)
    twice, second = clean_saccades(once, trial, LIMITS)
    assert twice == once
    assert first.removed_total == 2
    assert second.removed_total == 0


# Test 4 - Detection followed by cleaning removes the blink artifacts

def test_blink_inside_fixation_is_cleaned_after_detection():
    """ A (0, 0) blink produces one saccade into the origin and one out of it; both go."""
    x, y, valid = _steady_trial(60)
    x[25:35] = 0
    y[25:35] = 0
    valid[25:35] = False
    trial = _trial(x, y, valid)
    events = detect_events(trial, GeometryConfig())

    kept, report = clean_saccades(events, trial, LIMITS)
    assert report.total_saccades == 2
    assert report.removed_total == 2
    assert report.removed_by_rule[RULE_START] == 1
    assert report.removed_by_rule[RULE_INTRA] == 1
    assert report.removed_by_rule[RULE_KINEMATICS] == 2
    assert all(ev.kind != EventKind.SACCADE for ev in kept)


def test_report_survives_json_form():
    x, y, valid = _steady_trial()
    _plant_zero_runs(x, y, valid, 10)
    _, report = clean_saccades([_saccade(10), _saccade(50)], _trial(x, y, valid), LIMITS)
    data = report.to_dict()
    assert data["removed_fraction"] == 0.5
    assert cleaning_report_from_dict(data) == report
