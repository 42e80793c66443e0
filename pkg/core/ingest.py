import json
import logging
import re
from dataclasses import dataclass, field, fields
from enum import Enum
from pathlib import Path
from typing import Dict, Iterable, List, NamedTuple, Optional

import numpy as np
import pandas as pd

from core.exceptions import MalformedRowError, SchemaError

logger = logging.getLogger(__name__)

NOMINAL_PERIOD_MS = 4.0
MAX_STIMULUS = 26
BLOCKS = (1, 2)


class ClassLabel(str, Enum):
    NOVICE = "Novice"
    INTERMEDIATE = "Intermediate"
    EXPERT = "Expert"

    @classmethod
    def parse(cls, value) -> "ClassLabel":
        s = str(value).strip().lower()
        for label in cls:
            if label.value.lower() == s:
                return label
        raise ValueError(f"unknown class label {value!r}")


CLASS_ORDER = [ClassLabel.NOVICE, ClassLabel.INTERMEDIATE, ClassLabel.EXPERT]


@dataclass(frozen=True)
class GazeSchema:
    """Maps the logical gaze columns to the header names of the export."""

    participant: str = "participant"
    class_label: str = "class"
    stimulus: str = "stimulus"
    block: str = "block"
    time: str = "t_ms"
    x: str = "x_px"
    y: str = "y_px"
    validity: str = "valid"

    @classmethod
    def from_file(cls, path) -> "GazeSchema":
        with open(path, encoding="utf-8") as fh:
            mapping = json.load(fh)
        known = {f.name for f in fields(cls)}
        unknown = set(mapping) - known
        if unknown:
            raise SchemaError(f"schema sidecar has unknown keys: {sorted(unknown)}")
        return cls(**{k: str(v).strip().lower() for k, v in mapping.items()})

    def columns(self) -> Dict[str, str]:
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass(frozen=True, eq=False)
class TrialRecord:
    """One participant-trial: the raw samples in time order. Invalid samples are kept."""

    participant_id: str
    class_label: ClassLabel
    stimulus_id: int
    block: int
    t: np.ndarray
    x: np.ndarray
    y: np.ndarray
    valid: np.ndarray
    rejected_reason: Optional[str] = None

    def __post_init__(self):
        for name in ("t", "x", "y"):
            arr = np.asarray(getattr(self, name), dtype=float)
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)
        arr = np.asarray(self.valid, dtype=bool)
        arr.flags.writeable = False
        object.__setattr__(self, "valid", arr)

    @property
    def key(self) -> str:
        return f"{self.participant_id}-s{self.stimulus_id:02d}-b{self.block}"

    @property
    def n_samples(self) -> int:
        return len(self.t)

    @property
    def usable(self) -> np.ndarray:
        """Tracking flag set and not the (0, 0) error encoding."""
        return self.valid & ~((self.x == 0) & (self.y == 0))

    @property
    def tracking_ratio(self) -> float:
        if self.n_samples == 0:
            return 0.0
        return float(self.usable.sum()) / self.n_samples

    @property
    def duration_ms(self) -> float:
        if self.n_samples < 2:
            return 0.0
        return float(self.t[-1] - self.t[0])

    def __eq__(self, other) -> bool:
        if not isinstance(other, TrialRecord):
            return NotImplemented
        return (
            self.participant_id == other.participant_id
            and self.class_label == other.class_label
            and self.stimulus_id == other.stimulus_id
            and self.block == other.block
            and self.rejected_reason == other.rejected_reason
            and all(np.array_equal(getattr(self, n), getattr(other, n)) for n in ("t", "x", "y", "valid"))
        )

    __hash__ = None


class DroppedTrial(NamedTuple):
    participant_id: str
    stimulus_id: int
    block: int
    reason: str


@dataclass
class DatasetManifest:
    trials: List[TrialRecord] = field(default_factory=list)
    dropped: List[DroppedTrial] = field(default_factory=list)


def clean_column_names(df: pd.DataFrame) -> pd.DataFrame:
    """Exports differ in header case and padding. This makes column names predictable."""
    df = df.copy()
    df.columns = [str(col).strip().lower() for col in df.columns]
    return df


def parse_valid(value) -> Optional[bool]:
    """Validity can be 0/1 or true/false. Anything else is unparseable and returns None."""
    if pd.isna(value):
        return None
    s = str(value).strip().lower()
    if s in {"1", "1.0", "true", "yes"}:
        return True
    if s in {"0", "0.0", "false", "no"}:
        return False
    return None


def _read_frame(source) -> pd.DataFrame:
    try:
        return pd.read_csv(source, dtype=str, keep_default_na=False, na_values=[""], skip_blank_lines=False, encoding="utf-8")
    except pd.errors.ParserError as exc:
        match = re.search(r"line (\d+)", str(exc))
        line = int(match.group(1)) if match else 0
        raise MalformedRowError(line, f"malformed row ({exc})") from exc


def parse_gaze_log(source, schema: Optional[GazeSchema] = None) -> List[TrialRecord]:
    """Reads a gaze export and groups it into one TrialRecord per (participant, stimulus, block)."""
    schema = schema or GazeSchema()
    df = clean_column_names(_read_frame(source))
    # blank lines arrive as all-empty rows; dropping them keeps each row's file position in the index
    df = df.dropna(how="all")

    cols = schema.columns()
    missing_columns = [col for col in cols.values() if col not in df.columns]
    if missing_columns:
        raise SchemaError(f"CSV missing required columns: {missing_columns}. Found columns: {list(df.columns)}")

    df = df[list(cols.values())].rename(columns={v: k for k, v in cols.items()})
    df["participant"] = df["participant"].fillna("").astype(str).str.strip()

    for col in ("time", "x", "y", "stimulus", "block"):
        df[col] = pd.to_numeric(df[col], errors="coerce")
    df["valid_parsed"] = df["validity"].apply(parse_valid)

    # header is line 1
    for pos, row in zip(df.index, df.itertuples(index=False)):
        line = int(pos) + 2
        if row.participant == "":
            raise MalformedRowError(line, "empty participant")
        for col in ("time", "x", "y", "stimulus", "block"):
            value = getattr(row, col)
            if pd.isna(value) or not np.isfinite(value):
                raise MalformedRowError(line, f"non-numeric {cols[col]!r}")
        if row.valid_parsed is None:
            raise MalformedRowError(line, f"unparseable validity {row.validity!r}")
        if not (1 <= row.stimulus <= MAX_STIMULUS) or row.stimulus != int(row.stimulus):
            raise MalformedRowError(line, f"stimulus {row.stimulus} outside 1-{MAX_STIMULUS}")
        if row.block not in BLOCKS:
            raise MalformedRowError(line, f"block {row.block} not in {BLOCKS}")
        try:
            ClassLabel.parse(row.class_label)
        except ValueError as exc:
            raise MalformedRowError(line, str(exc)) from exc

    df["stimulus"] = df["stimulus"].astype(int)
    df["block"] = df["block"].astype(int)

    trials = []
    for (participant, stimulus, block), group in df.groupby(["participant", "stimulus", "block"], sort=True):
        t = group["time"].to_numpy(dtype=float)
        reason = None
        if len(t) > 1 and not np.all(np.diff(t) > 0):
            reason = "non-monotone time"
            logger.warning("trial %s-s%02d-b%d rejected: non-monotone timestamps", participant, stimulus, block)
        order = np.argsort(t, kind="stable")
        trial = TrialRecord(
            participant_id=participant,
            class_label=ClassLabel.parse(group["class_label"].iloc[0]),
            stimulus_id=int(stimulus),
            block=int(block),
            t=t[order],
            x=group["x"].to_numpy(dtype=float)[order],
            y=group["y"].to_numpy(dtype=float)[order],
            valid=group["valid_parsed"].to_numpy(dtype=bool)[order],
            rejected_reason=reason,
        )
        _check_sampling_rate(trial)
        trials.append(trial)

    per_participant = pd.Series([tr.participant_id for tr in trials]).value_counts()
    for participant, count in per_participant.items():
        if count > MAX_STIMULUS * len(BLOCKS):
            logger.warning("participant %s has %d trials, expected at most %d", participant, count, MAX_STIMULUS * len(BLOCKS))

    logger.info("parsed %d rows into %d trials", len(df), len(trials))
    return trials


def _check_sampling_rate(trial: TrialRecord, nominal_ms: float = NOMINAL_PERIOD_MS) -> None:
    if trial.n_samples < 2 or trial.rejected_reason:
        return
    median_dt = float(np.median(np.diff(trial.t)))
    if abs(median_dt - nominal_ms) > 0.1 * nominal_ms:
        logger.warning("trial %s: median sample period %.2f ms deviates from %.1f ms", trial.key, median_dt, nominal_ms)


def apply_quality_gate(trials: Iterable[TrialRecord], min_ratio: float = 0.75) -> DatasetManifest:
    """Keeps trials whose tracking ratio is at least min_ratio. Exactly min_ratio is kept."""
    manifest = DatasetManifest()
    for trial in trials:
        if trial.rejected_reason:
            reason = trial.rejected_reason
        elif trial.tracking_ratio < min_ratio:
            reason = "low tracking ratio"
        else:
            manifest.trials.append(trial)
            continue
        manifest.dropped.append(DroppedTrial(trial.participant_id, trial.stimulus_id, trial.block, reason))

    logger.info("quality gate kept %d trials, dropped %d", len(manifest.trials), len(manifest.dropped))
    return manifest


def trial_to_dict(trial: TrialRecord) -> dict:
    return {
        "participant_id": trial.participant_id,
        "class_label": trial.class_label.value,
        "stimulus_id": trial.stimulus_id,
        "block": trial.block,
        "tracking_ratio": trial.tracking_ratio,
        "rejected_reason": trial.rejected_reason,
        "t": trial.t.tolist(),
        "x": trial.x.tolist(),
        "y": trial.y.tolist(),
        "valid": [int(v) for v in trial.valid],
    }


def trial_from_dict(data: dict) -> TrialRecord:
    return TrialRecord(
        participant_id=data["participant_id"],
        class_label=ClassLabel.parse(data["class_label"]),
        stimulus_id=int(data["stimulus_id"]),
        block=int(data["block"]),
        t=data["t"],
        x=data["x"],
        y=data["y"],
        valid=[bool(v) for v in data["valid"]],
        rejected_reason=data.get("rejected_reason"),
    )


def manifest_to_json(manifest: DatasetManifest) -> dict:
    return {
        "trials": [trial_to_dict(tr) for tr in manifest.trials],
        "dropped": [d._asdict() for d in manifest.dropped],
    }


def manifest_from_json(data: dict) -> DatasetManifest:
    return DatasetManifest(
        trials=[trial_from_dict(tr) for tr in data.get("trials", [])],
        dropped=[DroppedTrial(d["participant_id"], int(d["stimulus_id"]), int(d["block"]), d["reason"]) for d in data.get("dropped", [])],
    )


def write_gaze_log(trials: Iterable[TrialRecord], path, schema: Optional[GazeSchema] = None) -> Path:
    """Writes trials back to the ingest CSV layout."""
    schema = schema or GazeSchema()
    frames = []
    for trial in trials:
        n = trial.n_samples
        frames.append(pd.DataFrame({
            schema.participant: [trial.participant_id] * n,
            schema.class_label: [trial.class_label.value] * n,
            schema.stimulus: [trial.stimulus_id] * n,
            schema.block: [trial.block] * n,
            schema.time: trial.t,
            schema.x: trial.x,
            schema.y: trial.y,
            schema.validity: trial.valid.astype(int),
        }))
    columns = list(schema.columns().values())
    df = pd.concat(frames, ignore_index=True) if frames else pd.DataFrame(columns=columns)
    path = Path(path)
    df[columns].to_csv(path, index=False)
    return path
