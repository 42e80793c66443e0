import numpy as np
import pytest
from scipy.stats import truncnorm

from core.cleaning import clean_saccades
from core.events import EventKind, GeometryConfig, detect_events
from core.exceptions import ScriptError
from core.features import FEATURE_NAMES
from core.ingest import ClassLabel, apply_quality_gate, parse_gaze_log, write_gaze_log
from core.synth import (
    ClassStats, MeasureStats, ScriptSegment, SynthConfig, TraceScript, calibrated_loc, draw_truncated,
    sample_feature_rows, sample_gaze_trace, sample_gaze_trials, sample_trial_script,
)

GEOM = GeometryConfig()
SMALL = {"Novice": 2, "Intermediate": 2, "Expert": 2}


@pytest.fixture(scope="module")
def stats():
    return ClassStats.load()


# Test 1 - Bundled class statistics

def test_bundled_statistics_cover_every_measure(stats):
    assert set(stats.measures) == {"Novice", "Intermediate", "Expert"}
    for by_measure in stats.measures.values():
        assert len(by_measure) == 13
    assert stats.get(ClassLabel.NOVICE, "fixation_frequency").std is None
    assert stats.get("Expert", "saccade_peak_deceleration").max < 0


def test_inverted_envelope_is_rejected():
    data = {"classes": {"Expert": {"fixation_duration": {"avg": 5.0, "std": 1.0, "min": 9.0, "max": 1.0}}}}
    with pytest.raises(ValueError, match="min"):
        ClassStats.from_dict(data)


def test_frequency_envelope():
    m = MeasureStats(0.2).envelope()
    assert (m.std, m.min, m.max) == pytest.approx((0.05, 0.0, 0.6))


# Test 2 - Truncated normals keep the published average

def test_calibrated_location_restores_the_average(stats):
    """ Saccade amplitude is strongly skewed inside its envelope, so the location moves well below the average."""
    m = stats.get("Novice", "saccade_amplitude")
    loc = calibrated_loc(m)
    a, b = (m.min - loc) / m.std, (m.max - loc) / m.std
    assert truncnorm.mean(a, b, loc=loc, scale=m.std) == pytest.approx(m.avg, rel=1e-6)
    assert loc < m.avg

    draws = draw_truncated(m, 0.0, 20000, np.random.default_rng(0))
    assert draws.min() >= m.min and draws.max() <= m.max
    assert draws.mean() == pytest.approx(m.avg, rel=0.02)


def test_degenerate_envelope_returns_the_average():
    m = MeasureStats(3.0, 1.0, 3.0, 3.0)
    assert draw_truncated(m, 0.0, 4, np.random.default_rng(0)).tolist() == [3.0] * 4


# Test 3 - Synthetic feature rows

def test_feature_rows_layout(stats):
    matrix = sample_feature_rows(stats, SynthConfig(participants=SMALL, trials=6, seed=1))
    assert len(matrix) == 6 * 6
    assert matrix.feature_names == FEATURE_NAMES
    assert sorted(set(matrix.participants)) == ["E01", "E02", "I01", "I02", "N01", "N02"]
    assert matrix.frame["trial_key"].iloc[:3].tolist() == ["N01-s01-b1", "N01-s01-b2", "N01-s02-b1"]
    assert not np.isnan(matrix.X).any()


def test_feature_rows_stay_inside_the_envelopes(stats):
    matrix = sample_feature_rows(stats, SynthConfig(participants=SMALL, trials=10, sigma_p=2.0, seed=2))
    for label in ("Novice", "Expert"):
        rows = matrix.rows(matrix.labels == label).frame
        m = stats.get(label, "fixation_duration")
        assert rows["fixation_duration_min"].min() >= m.min
        assert rows["fixation_duration_max"].max() <= m.max
        assert (rows["saccade_peak_deceleration_max"] < 0).all()


def test_feature_rows_are_seeded(stats):
    cfg = SynthConfig(participants=SMALL, trials=3, seed=4)
    assert sample_feature_rows(stats, cfg).frame.equals(sample_feature_rows(stats, cfg).frame)
    other = sample_feature_rows(stats, SynthConfig(participants=SMALL, trials=3, seed=5))
    assert not other.frame.equals(sample_feature_rows(stats, cfg).frame)


def test_participant_offsets_separate_participants(stats):
    """ With sigma_p large, per-participant means drift apart far more than with sigma_p = 0."""
    def spread(sigma_p):
        matrix = sample_feature_rows(stats, SynthConfig(participants={"Expert": 6}, trials=20, sigma_p=sigma_p, seed=6))
        return matrix.frame.groupby("participant_id")["fixation_dispersion_avg"].mean().std()

    assert spread(2.0) > 2 * spread(0.0)


def test_synth_config_validation():
    with pytest.raises(ValueError):
        SynthConfig(participants={"Expert": 0})
    with pytest.raises(ValueError):
        SynthConfig(sigma_p=-1.0)


# Test 4 - Scripted gaze traces

def test_scripted_sweep_is_detected():
    script = TraceScript([
        ScriptSegment("fixation", 200),
        ScriptSegment("saccade", 40, dx=400),
        ScriptSegment("fixation", 200),
    ])
    trial = sample_gaze_trace(script, GEOM)
    assert trial.n_samples == 111

    events = detect_events(trial, GEOM)
    assert [ev.kind for ev in events] == [EventKind.FIXATION, EventKind.SACCADE, EventKind.FIXATION]
    assert events[1].amplitude == pytest.approx(37.5, rel=0.01)


def test_dropouts_are_zero_encoded():
    script = TraceScript([ScriptSegment("fixation", 100)], dropouts=(3, 4))
    trial = sample_gaze_trace(script, GEOM)
    assert trial.x[3] == 0 and trial.y[4] == 0
    assert trial.valid.tolist()[2:6] == [True, False, False, True]


def test_delayed_segment_holds_position():
    script = TraceScript([ScriptSegment("fixation", 100), ScriptSegment("saccade", 20, dx=200, start_ms=200)])
    trial = sample_gaze_trace(script, GEOM)
    assert trial.duration_ms == pytest.approx(220.0)
    assert trial.x[50] == pytest.approx(500.0)
    assert trial.x[-1] == pytest.approx(700.0)


@pytest.mark.parametrize("segments, message", [
    ([ScriptSegment("fixation", 100), ScriptSegment("saccade", 20, dx=50, start_ms=40)], "overlapping"),
    ([ScriptSegment("fixation", 100, dx=5)], "cannot move"),
    ([ScriptSegment("pursuit", 100, dx=500)], "exceeds"),
    ([ScriptSegment("blink", 100)], "unknown segment"),
    ([ScriptSegment("fixation", 0)], "duration"),
])
def test_invalid_scripts(segments, message):
    with pytest.raises(ScriptError, match=message):
        sample_gaze_trace(TraceScript(segments), GEOM)


def test_dropout_outside_trace():
    with pytest.raises(ScriptError):
        sample_gaze_trace(TraceScript([ScriptSegment("fixation", 20)], dropouts=(99,)), GEOM)


# Test 5 - Drawn scripts survive detection and cleaning untouched

def test_drawn_trials_are_clean(stats):
    rng = np.random.default_rng(7)
    for label in ("Novice", "Intermediate", "Expert"):
        script = sample_trial_script(stats, label, rng, GEOM)
        assert script.class_label is ClassLabel(label)
        trial = sample_gaze_trace(script, GEOM, seed=1)
        events = detect_events(trial, GEOM)
        kinds = {ev.kind for ev in events}
        assert EventKind.SACCADE in kinds and EventKind.FIXATION in kinds
        _, report = clean_saccades(events, trial)
        assert report.removed_total == 0


def test_gaze_trials_go_through_ingest(stats, tmp_path):
    trials = sample_gaze_trials(stats, SynthConfig(participants={"Novice": 1, "Expert": 1}, trials=3, seed=8), GEOM)
    assert [tr.key for tr in trials] == [
        "N01-s01-b1", "N01-s01-b2", "N01-s02-b1", "E01-s01-b1", "E01-s01-b2", "E01-s02-b1",
    ]

    parsed = parse_gaze_log(write_gaze_log(trials, tmp_path / "gaze.csv"))
    manifest = apply_quality_gate(parsed)
    assert len(manifest.trials) == 6
    assert manifest.dropped == []
