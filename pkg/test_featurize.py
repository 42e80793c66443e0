import logging

import numpy as np
import pandas as pd
import pytest

from core.events import EventKind, GazeEvent, GeometryConfig, detect_events
from core.features import (
    EXTRA_FEATURE_NAMES, FEATURE_NAMES, META_COLUMNS, FeatureMatrix, FeatureVector, Standardizer, build_matrix, describe, featurize_trial,
)
from core.ingest import ClassLabel, TrialRecord


def _sweep_trial(participant="E01", label=ClassLabel.EXPERT, stimulus=1):
    x = np.concatenate([np.full(50, 500.0), np.linspace(500, 900, 11), np.full(50, 900.0)])
    return TrialRecord(participant, label, stimulus, 1, np.arange(len(x)) * 4.0, x, np.full(len(x), 500.0), np.ones(len(x), dtype=bool))


def _pursuit_trial():
    """ A 640 ms drift across 120 by 90 px at about 32 deg/s."""
    x = np.linspace(500, 620, 161)
    y = np.linspace(500, 590, 161)
    return TrialRecord("N01", ClassLabel.NOVICE, 2, 1, np.arange(len(x)) * 4.0, x, y, np.ones(len(x), dtype=bool))


def _vector(participant, label, value, flagged=False):
    return FeatureVector(participant, label, f"{participant}-s01-b1", {name: value for name in FEATURE_NAMES}, flagged)


# Test 1 - The 46 named columns

def test_feature_names_layout():
    assert len(FEATURE_NAMES) == 46
    assert len(set(FEATURE_NAMES)) == 46
    assert FEATURE_NAMES[:3] == ["fixation_frequency", "fixation_duration_avg", "fixation_duration_std"]
    assert "saccade_frequency" in FEATURE_NAMES
    assert "pursuit_frequency" not in FEATURE_NAMES
    assert FEATURE_NAMES[-1] == "pursuit_dispersion_max"


def test_describe_uses_population_std():
    stats = describe([1.0, 2.0, 3.0, 4.0])
    assert stats == pytest.approx({"avg": 2.5, "std": np.sqrt(1.25), "min": 1.0, "max": 4.0})
    assert all(np.isnan(v) for v in describe([]).values())


# Test 2 - A trial without smooth pursuits is flagged and keeps NaN pursuit columns

def test_featurize_trial_without_pursuit():
    trial = _sweep_trial()
    vec = featurize_trial(detect_events(trial, GeometryConfig()), trial)

    assert vec.trial_key == "E01-s01-b1"
    assert vec.flagged
    assert vec.values["fixation_frequency"] == pytest.approx(2 / 0.44)
    assert vec.values["saccade_frequency"] == pytest.approx(1 / 0.44)
    assert vec.values["saccade_amplitude_avg"] == pytest.approx(37.5, rel=0.01)
    assert vec.values["saccade_duration_std"] == 0.0
    assert vec.values["fixation_duration_min"] == pytest.approx(196.0)
    assert np.isnan(vec.values["pursuit_duration_avg"])
    assert list(vec.values) == FEATURE_NAMES


def test_featurize_trial_with_pursuit():
    trial = _pursuit_trial()
    events = detect_events(trial, GeometryConfig())
    assert EventKind.SMOOTH_PURSUIT in [ev.kind for ev in events]

    vec = featurize_trial(events, trial)
    assert vec.values["pursuit_dispersion_max"] == pytest.approx(150.0)
    assert vec.values["pursuit_duration_avg"] == pytest.approx(640.0)
    assert vec.values["fixation_frequency"] == 0.0
    # Linear motion has no saccades at all, so the saccade columns are missing
    assert np.isnan(vec.values["saccade_peak_velocity_avg"])
    assert vec.values["saccade_frequency"] == 0.0


def test_deceleration_is_kept_as_an_extra():
    trial = _sweep_trial()
    vec = featurize_trial(detect_events(trial, GeometryConfig()), trial)
    assert list(vec.extras) == EXTRA_FEATURE_NAMES
    assert "saccade_mean_deceleration_avg" in vec.extras
    assert "saccade_mean_deceleration_avg" not in vec.values


def _mixed_events(scale=1.0):
    """ Three fixations, two saccades and one pursuit; durations and onsets scale with the clock."""
    def fixation(start, duration, dispersion):
        return GazeEvent(EventKind.FIXATION, 0, 1, start * scale, duration * scale, dispersion=dispersion)

    def saccade(start, duration, amplitude, velocity):
        return GazeEvent(
            EventKind.SACCADE, 0, 1, start * scale, duration * scale, amplitude=amplitude,
            mean_velocity=velocity / scale, peak_velocity=2 * velocity / scale,
            mean_acceleration=1000.0 / scale ** 2, peak_acceleration=4000.0 / scale ** 2,
            mean_deceleration=-1000.0 / scale ** 2, peak_deceleration=-4000.0 / scale ** 2,
        )

    return [
        fixation(0.0, 200.0, 20.0),
        saccade(200.0, 40.0, 8.0, 200.0),
        fixation(240.0, 220.0, 35.0),
        saccade(460.0, 48.0, 12.0, 250.0),
        fixation(508.0, 240.0, 28.0),
        GazeEvent(EventKind.SMOOTH_PURSUIT, 0, 1, 748.0 * scale, 300.0 * scale, dispersion=140.0),
    ]


def _clock_trial(scale=1.0):
    t = np.arange(251) * 4.0 * scale
    return TrialRecord("I01", ClassLabel.INTERMEDIATE, 3, 2, t, np.full(251, 500.0), np.full(251, 500.0), np.ones(251, dtype=bool))


def test_featurize_ignores_event_order():
    events = _mixed_events()
    shuffled = [events[i] for i in np.random.default_rng(0).permutation(len(events))]
    first = featurize_trial(events, _clock_trial())
    second = featurize_trial(shuffled, _clock_trial())
    np.testing.assert_allclose([second.values[n] for n in FEATURE_NAMES], [first.values[n] for n in FEATURE_NAMES], rtol=1e-12)
    assert not first.flagged


def test_doubling_the_clock_halves_frequencies_and_doubles_durations():
    base = featurize_trial(_mixed_events(), _clock_trial()).values
    slow = featurize_trial(_mixed_events(scale=2.0), _clock_trial(scale=2.0)).values
    assert base["fixation_frequency"] == pytest.approx(3 / 1.0)
    for name in ("fixation_frequency", "saccade_frequency"):
        assert slow[name] == pytest.approx(base[name] / 2)
    for name in FEATURE_NAMES:
        if name.startswith(("fixation_duration", "saccade_duration", "pursuit_duration")):
            assert slow[name] == pytest.approx(base[name] * 2), name
    assert slow["pursuit_dispersion_avg"] == base["pursuit_dispersion_avg"]
    assert slow["saccade_amplitude_max"] == base["saccade_amplitude_max"]


# Test 3 - Standardization with mean imputation

def test_standardizer_imputes_and_scales():
    X = np.array([[1.0, 5.0], [3.0, np.nan], [np.nan, 5.0]])
    scaler = Standardizer.fit(X, ["a", "b"])
    assert scaler.means == pytest.approx([2.0, 5.0])

    Z = scaler.transform(X)
    assert Z[2, 0] == 0.0
    assert Z[:, 0] == pytest.approx([-np.sqrt(1.5), np.sqrt(1.5), 0.0])
    # the constant column keeps std 1
    assert Z[:, 1] == pytest.approx([0.0, 0.0, 0.0])


def test_standardized_training_rows_have_zero_mean_and_unit_std():
    rng = np.random.default_rng(3)
    X = rng.normal(loc=[5.0, -2.0, 300.0], scale=[1.0, 0.1, 40.0], size=(60, 3))
    Z = Standardizer.fit(X, ["a", "b", "c"]).transform(X)
    np.testing.assert_allclose(Z.mean(axis=0), 0.0, atol=1e-9)
    np.testing.assert_allclose(Z.std(axis=0, ddof=0), 1.0, atol=1e-9)


def test_constant_column_warns(caplog):
    with caplog.at_level(logging.WARNING, logger="core.features"):
        Standardizer.fit(np.ones((4, 2)), ["a", "b"])
    assert "constant columns" in caplog.text


def test_standardizer_applies_training_statistics_to_new_rows():
    scaler = Standardizer.fit(np.array([[0.0], [2.0]]), ["a"])
    assert scaler.transform(np.array([[4.0], [np.nan]])) == pytest.approx(np.array([[3.0], [0.0]]))
    assert Standardizer.from_dict(scaler.to_dict()).transform(np.array([[4.0]])) == pytest.approx(np.array([[3.0]]))


# Test 4 - Matrix assembly

def test_build_matrix_is_in_canonical_order():
    matrix = build_matrix([
        _vector("N01", ClassLabel.NOVICE, 1.0),
        _vector("E01", ClassLabel.EXPERT, 3.0, flagged=True),
    ])
    assert list(matrix.frame.columns) == META_COLUMNS + FEATURE_NAMES
    assert matrix.X.shape == (2, 46)
    assert matrix.labels.tolist() == ["Novice", "Expert"]
    assert matrix.flagged.tolist() == [False, True]
    assert matrix.standardizer is not None
    assert matrix.standardized()[:, 0] == pytest.approx([-1.0, 1.0])


def test_build_matrix_needs_rows():
    with pytest.raises(ValueError):
        build_matrix([])


def test_select_keeps_canonical_order():
    matrix = build_matrix([_vector("N01", ClassLabel.NOVICE, 1.0)])
    picked = matrix.select(["pursuit_dispersion_max", "fixation_frequency"])
    assert picked.feature_names == ["fixation_frequency", "pursuit_dispersion_max"]
    assert picked.X.shape == (1, 2)
    with pytest.raises(ValueError, match="unknown features"):
        matrix.select(["blink_rate"])


def test_participants_by_class():
    matrix = build_matrix([
        _vector("N01", ClassLabel.NOVICE, 1.0),
        _vector("N01", ClassLabel.NOVICE, 1.5),
        _vector("N02", ClassLabel.NOVICE, 2.0),
        _vector("E01", ClassLabel.EXPERT, 3.0),
    ])
    assert matrix.participants_by_class() == {"Novice": {"N01", "N02"}, "Expert": {"E01"}}


# Test 5 - Feature CSV

def test_feature_csv_loads_back(tmp_path):
    matrix = build_matrix([
        _vector("007", ClassLabel.INTERMEDIATE, 1.0),
        _vector("E01", ClassLabel.EXPERT, np.nan, flagged=True),
    ])
    loaded = FeatureMatrix.from_csv(matrix.to_csv(tmp_path / "features.csv"))
    assert loaded.feature_names == FEATURE_NAMES
    assert loaded.participants.tolist() == ["007", "E01"]
    assert loaded.flagged.tolist() == [False, True]
    assert np.isnan(loaded.X[1]).all()


def test_feature_csv_requires_meta_columns(tmp_path):
    path = tmp_path / "features.csv"
    pd.DataFrame({"participant_id": ["E01"], "fixation_frequency": [1.0]}).to_csv(path, index=False)
    with pytest.raises(ValueError, match="missing required columns"):
        FeatureMatrix.from_csv(path)
