"""Per-trial feature vectors: 13 base measures, 11 of them expanded into avg/std/min/max, giving 46 columns."""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence

import numpy as np
import pandas as pd

from core.events import EventKind, GazeEvent
from core.ingest import ClassLabel, TrialRecord

logger = logging.getLogger(__name__)

DERIVATIONS = ("avg", "std", "min", "max")

# (name, event kind, event attribute); attribute None means a frequency
BASE_MEASURES = [
    ("fixation_frequency", EventKind.FIXATION, None),
    ("fixation_duration", EventKind.FIXATION, "duration"),
    ("fixation_dispersion", EventKind.FIXATION, "dispersion"),
    ("saccade_frequency", EventKind.SACCADE, None),
    ("saccade_duration", EventKind.SACCADE, "duration"),
    ("saccade_amplitude", EventKind.SACCADE, "amplitude"),
    ("saccade_mean_acceleration", EventKind.SACCADE, "mean_acceleration"),
    ("saccade_peak_acceleration", EventKind.SACCADE, "peak_acceleration"),
    ("saccade_peak_deceleration", EventKind.SACCADE, "peak_deceleration"),
    ("saccade_mean_velocity", EventKind.SACCADE, "mean_velocity"),
    ("saccade_peak_velocity", EventKind.SACCADE, "peak_velocity"),
    ("pursuit_duration", EventKind.SMOOTH_PURSUIT, "duration"),
    ("pursuit_dispersion", EventKind.SMOOTH_PURSUIT, "dispersion"),
]

# computed for inspection, not part of the model input
EXTRA_MEASURES = [
    ("saccade_mean_deceleration", EventKind.SACCADE, "mean_deceleration"),
]


def _expand(measures) -> List[str]:
    names = []
    for name, _, attr in measures:
        if attr is None:
            names.append(name)
        else:
            names.extend(f"{name}_{d}" for d in DERIVATIONS)
    return names


FEATURE_NAMES = _expand(BASE_MEASURES)
EXTRA_FEATURE_NAMES = _expand(EXTRA_MEASURES)
META_COLUMNS = ["participant_id", "class_label", "trial_key", "flagged"]


@dataclass
class FeatureVector:
    participant_id: str
    class_label: ClassLabel
    trial_key: str
    values: Dict[str, float]
    flagged: bool = False
    extras: Dict[str, float] = field(default_factory=dict)


def describe(values: Sequence[float]) -> Dict[str, float]:
    """avg/std/min/max with the population standard deviation. NaN for an empty sequence."""
    arr = np.asarray(values, dtype=float)
    if len(arr) == 0:
        return {d: np.nan for d in DERIVATIONS}
    return {"avg": float(arr.mean()), "std": float(arr.std(ddof=0)), "min": float(arr.min()), "max": float(arr.max())}


def _measure_values(measures, events: Sequence[GazeEvent], duration_s: float) -> Dict[str, float]:
    by_kind: Dict[EventKind, List[GazeEvent]] = {}
    for ev in events:
        by_kind.setdefault(ev.kind, []).append(ev)

    values = {}
    for name, kind, attr in measures:
        matching = by_kind.get(kind, [])
        if attr is None:
            values[name] = len(matching) / duration_s if duration_s > 0 else np.nan
            continue
        for d, v in describe([getattr(ev, attr) for ev in matching]).items():
            values[f"{name}_{d}"] = v
    return values


def featurize_trial(events: Iterable[GazeEvent], trial: TrialRecord) -> FeatureVector:
    """Feature row for one cleaned trial. Kinds with no events leave NaNs and flag the row."""
    events = list(events)
    duration_s = trial.duration_ms / 1000.0
    values = _measure_values(BASE_MEASURES, events, duration_s)
    extras = _measure_values(EXTRA_MEASURES, events, duration_s)
    flagged = any(np.isnan(values[name]) for name in FEATURE_NAMES)
    if flagged:
        logger.debug("trial %s lacks events of some kind; row flagged", trial.key)
    return FeatureVector(
        participant_id=trial.participant_id,
        class_label=trial.class_label,
        trial_key=trial.key,
        values={name: values[name] for name in FEATURE_NAMES},
        flagged=flagged,
        extras={name: extras[name] for name in EXTRA_FEATURE_NAMES},
    )


@dataclass
class Standardizer:
    """Mean imputation followed by z-scoring, fitted on one partition and applied to others."""

    feature_names: List[str]
    means: np.ndarray
    stds: np.ndarray

    @classmethod
    def fit(cls, X: np.ndarray, feature_names: Sequence[str]) -> "Standardizer":
        X = np.asarray(X, dtype=float)
        with np.errstate(invalid="ignore"):
            counts = (~np.isnan(X)).sum(axis=0)
            means = np.where(counts > 0, np.nansum(X, axis=0) / np.maximum(counts, 1), 0.0)
        filled = np.where(np.isnan(X), means, X)
        stds = filled.std(axis=0, ddof=0)
        constant = ~(stds > 0)
        if constant.any():
            logger.warning("constant columns standardized with std 1: %s", [feature_names[i] for i in np.flatnonzero(constant)])
            stds = np.where(constant, 1.0, stds)
        return cls(list(feature_names), means, stds)

    def transform(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        filled = np.where(np.isnan(X), self.means, X)
        return (filled - self.means) / self.stds

    def to_dict(self) -> dict:
        return {
            "feature_names": self.feature_names,
            "means": self.means.tolist(),
            "stds": self.stds.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Standardizer":
        return cls(list(data["feature_names"]), np.asarray(data["means"], dtype=float), np.asarray(data["stds"], dtype=float))


@dataclass
class FeatureMatrix:
    frame: pd.DataFrame
    feature_names: List[str] = field(default_factory=lambda: list(FEATURE_NAMES))
    standardizer: Optional[Standardizer] = None

    def __len__(self) -> int:
        return len(self.frame)

    @property
    def X(self) -> np.ndarray:
        return self.frame[self.feature_names].to_numpy(dtype=float)

    @property
    def labels(self) -> np.ndarray:
        return self.frame["class_label"].to_numpy(dtype=str)

    @property
    def participants(self) -> np.ndarray:
        return self.frame["participant_id"].to_numpy(dtype=str)

    @property
    def flagged(self) -> np.ndarray:
        return self.frame["flagged"].to_numpy(dtype=bool)

    def standardized(self) -> np.ndarray:
        standardizer = self.standardizer or Standardizer.fit(self.X, self.feature_names)
        return standardizer.transform(self.X)

    def rows(self, mask) -> "FeatureMatrix":
        return FeatureMatrix(self.frame.loc[np.asarray(mask)].reset_index(drop=True), list(self.feature_names), self.standardizer)

    def select(self, features: Iterable[str]) -> "FeatureMatrix":
        wanted = set(features)
        unknown = wanted - set(self.feature_names)
        if unknown:
            raise ValueError(f"unknown features: {sorted(unknown)}")
        names = [name for name in self.feature_names if name in wanted]
        return FeatureMatrix(self.frame[META_COLUMNS + names].copy(), names, None)

    def participants_by_class(self) -> Dict[str, set]:
        groups: Dict[str, set] = {}
        for participant, label in zip(self.participants, self.labels):
            groups.setdefault(label, set()).add(participant)
        return groups

    def to_csv(self, path) -> Path:
        path = Path(path)
        self.frame[META_COLUMNS + self.feature_names].to_csv(path, index=False)
        return path

    @classmethod
    def from_csv(cls, path) -> "FeatureMatrix":
        df = pd.read_csv(path, dtype={"participant_id": str, "class_label": str, "trial_key": str})
        missing_columns = [col for col in META_COLUMNS if col not in df.columns]
        if missing_columns:
            raise ValueError(f"feature CSV missing required columns: {missing_columns}")
        df["flagged"] = df["flagged"].astype(bool)
        names = [col for col in df.columns if col not in META_COLUMNS]
        return cls(df, names, None)

    def meta(self) -> dict:
        return {
            "feature_names": self.feature_names,
            "n_rows": len(self),
            "n_flagged": int(self.flagged.sum()),
            "standardization": self.standardizer.to_dict() if self.standardizer else None,
        }


def build_matrix(vectors: Sequence[FeatureVector]) -> FeatureMatrix:
    """Stacks vectors in canonical column order and fits the standardization on these rows."""
    if not vectors:
        raise ValueError("build_matrix needs at least one feature vector")
    records = []
    for vec in vectors:
        row = {
            "participant_id": vec.participant_id,
            "class_label": ClassLabel(vec.class_label).value,
            "trial_key": vec.trial_key,
            "flagged": bool(vec.flagged),
        }
        row.update({name: vec.values.get(name, np.nan) for name in FEATURE_NAMES})
        records.append(row)
    frame = pd.DataFrame.from_records(records, columns=META_COLUMNS + FEATURE_NAMES)
    matrix = FeatureMatrix(frame, list(FEATURE_NAMES))
    matrix.standardizer = Standardizer.fit(matrix.X, matrix.feature_names)
    return matrix

