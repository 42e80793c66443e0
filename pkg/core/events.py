"""
Velocity-threshold event detection.

Saccades are maximal runs of sample-to-sample intervals at or above the peak
velocity threshold. Velocities are taken on the raw coordinates, so dropouts
encoded as (0, 0) show up as implausible jumps that the cleaning rules remove
later. Whatever lies between saccades and gaps is a fixation candidate;
candidates shorter than the minimum fixation duration are discarded and
candidates wider than the smooth pursuit dispersion are relabeled.
"""

import logging
from dataclasses import dataclass, replace
from enum import Enum
from typing import List, Optional, Sequence

import numpy as np
import pandas as pd
from scipy.spatial.distance import pdist

from core.exceptions import DegenerateSaccadeError, TrialTooShortError
from core.ingest import TrialRecord

logger = logging.getLogger(__name__)


class EventKind(str, Enum):
    FIXATION = "Fixation"
    SMOOTH_PURSUIT = "SmoothPursuit"
    SACCADE = "Saccade"
    GAP = "Gap"


@dataclass(frozen=True)
class GeometryConfig:
    px_per_deg_x: float = 2400 / 225
    px_per_deg_y: float = 1000 / 187.5

    def __post_init__(self):
        if self.px_per_deg_x <= 0 or self.px_per_deg_y <= 0:
            raise ValueError("px_per_deg must be strictly positive")


@dataclass(frozen=True)
class GazeEvent:
    kind: EventKind
    start_idx: int
    end_idx: int
    start_ms: float
    duration: float
    dispersion: Optional[float] = None
    amplitude: Optional[float] = None
    mean_velocity: Optional[float] = None
    peak_velocity: Optional[float] = None
    mean_acceleration: Optional[float] = None
    peak_acceleration: Optional[float] = None
    mean_deceleration: Optional[float] = None
    peak_deceleration: Optional[float] = None
    samples_valid: bool = True


def px_to_deg(dx, dy, geom: GeometryConfig):
    """Angular distance of a pixel displacement. Works on scalars and arrays."""
    return np.sqrt((np.asarray(dx) / geom.px_per_deg_x) ** 2 + (np.asarray(dy) / geom.px_per_deg_y) ** 2)


def dispersion(x: np.ndarray, y: np.ndarray, metric: str = "bbox") -> float:
    if len(x) == 0:
        return 0.0
    if metric == "bbox":
        return float(np.hypot(np.ptp(x), np.ptp(y)))
    if metric == "pairwise":
        if len(x) < 2:
            return 0.0
        return float(pdist(np.column_stack([x, y])).max())
    raise ValueError(f"unknown dispersion metric {metric!r}")


def interval_velocities(trial: TrialRecord, geom: GeometryConfig) -> np.ndarray:
    """Velocity in deg/s of every interval between consecutive samples (length n - 1)."""
    dt = np.diff(trial.t) / 1000.0
    dist = px_to_deg(np.diff(trial.x), np.diff(trial.y), geom)
    return dist / dt


def _runs(mask: np.ndarray) -> List[tuple]:
    """Inclusive (start, end) index pairs of the True runs in mask."""
    if len(mask) == 0:
        return []
    padded = np.concatenate([[False], mask, [False]]).astype(int)
    edges = np.flatnonzero(np.diff(padded))
    return [(int(a), int(b) - 1) for a, b in zip(edges[::2], edges[1::2])]


def _saccade_kinematics(trial: TrialRecord, start: int, end: int, geom: GeometryConfig) -> dict:
    t = trial.t[start:end + 1]
    vel = px_to_deg(np.diff(trial.x[start:end + 1]), np.diff(trial.y[start:end + 1]), geom) / (np.diff(t) / 1000.0)
    if len(vel) > 1:
        mid = (t[:-1] + t[1:]) / 2.0
        acc = np.diff(vel) / (np.diff(mid) / 1000.0)
    else:
        acc = np.zeros(0)
    pos = acc[acc > 0]
    neg = acc[acc < 0]
    return {
        "mean_velocity": float(vel.mean()),
        "peak_velocity": float(vel.max()),
        "mean_acceleration": float(pos.mean()) if len(pos) else 0.0,
        "peak_acceleration": float(pos.max()) if len(pos) else 0.0,
        "mean_deceleration": float(neg.mean()) if len(neg) else 0.0,
        "peak_deceleration": float(neg.min()) if len(neg) else 0.0,
    }


def saccade_amplitude(event: GazeEvent, trial: TrialRecord, geom: GeometryConfig) -> float:
    """Mean sample-to-sample velocity times event duration: the path length travelled, not the endpoint distance."""
    if event.kind != EventKind.SACCADE:
        raise ValueError(f"amplitude is defined for saccades, got {event.kind.value}")
    if event.end_idx <= event.start_idx:
        raise DegenerateSaccadeError("degenerate saccade")
    kin = _saccade_kinematics(trial, event.start_idx, event.end_idx, geom)
    duration_s = (trial.t[event.end_idx] - trial.t[event.start_idx]) / 1000.0
    return kin["mean_velocity"] * duration_s


def _bridge_short_dropouts(fast: np.ndarray, usable: np.ndarray, max_bridge: int) -> np.ndarray:
    # fast[k] describes the interval between samples k and k + 1
    fast = fast.copy()
    n_intervals = len(fast)
    for p, q in _runs(~usable):
        if q - p + 1 > max_bridge or p == 0 or q >= n_intervals:
            continue
        if fast[p - 1] and fast[q]:
            fast[p:q] = True
    return fast


def detect_events(
    trial: TrialRecord,
    geom: GeometryConfig,
    peak_threshold: float = 40.0,
    min_fix_dur: float = 50.0,
    sp_dispersion: float = 100.0,
    dispersion_metric: str = "bbox",
    max_bridge_samples: int = 3,
) -> List[GazeEvent]:
    """Segments a trial into saccades, gaps, fixations and smooth pursuits, ordered by onset.

    Saccade, fixation and pursuit durations are t[end] - t[start]. A gap lasts
    its number of lost samples times the median sample period, so a single lost
    sample is one period long rather than zero.
    """
    n = trial.n_samples
    if n < 2:
        raise TrialTooShortError("too short")

    usable = trial.usable
    fast = interval_velocities(trial, geom) >= peak_threshold
    fast = _bridge_short_dropouts(fast, usable, max_bridge_samples)

    period = float(np.median(np.diff(trial.t)))
    claimed = np.zeros(n, dtype=bool)
    events: List[GazeEvent] = []

    for a, b in _runs(fast):
        start, end = a, b + 1
        claimed[start:end + 1] = True
        event = GazeEvent(
            kind=EventKind.SACCADE,
            start_idx=start,
            end_idx=end,
            start_ms=float(trial.t[start]),
            duration=float(trial.t[end] - trial.t[start]),
            samples_valid=bool(usable[start:end + 1].all()),
            **_saccade_kinematics(trial, start, end, geom),
        )
        events.append(replace(event, amplitude=saccade_amplitude(event, trial, geom)))

    for start, end in _runs(~usable & ~claimed):
        claimed[start:end + 1] = True
        events.append(GazeEvent(
            kind=EventKind.GAP,
            start_idx=start,
            end_idx=end,
            start_ms=float(trial.t[start]),
            duration=(end - start + 1) * period,
            samples_valid=False,
        ))

    for start, end in _runs(~claimed):
        duration = float(trial.t[end] - trial.t[start])
        if duration < min_fix_dur:
            continue
        spread = dispersion(trial.x[start:end + 1], trial.y[start:end + 1], dispersion_metric)
        kind = EventKind.SMOOTH_PURSUIT if spread > sp_dispersion else EventKind.FIXATION
        events.append(GazeEvent(
            kind=kind,
            start_idx=start,
            end_idx=end,
            start_ms=float(trial.t[start]),
            duration=duration,
            dispersion=spread,
        ))

    events.sort(key=lambda ev: ev.start_idx)
    logger.debug("trial %s: %d events", trial.key, len(events))
    return events


EVENT_COLUMNS = [
    "trial_key", "kind", "start_ms", "duration_ms", "dispersion_px", "amplitude_deg",
    "mean_vel", "peak_vel", "mean_acc", "peak_acc", "peak_dec", "valid",
    "start_idx", "end_idx", "mean_dec",
]


def events_to_frame(trial_key: str, events: Sequence[GazeEvent]) -> pd.DataFrame:
    rows = [{
        "trial_key": trial_key,
        "kind": ev.kind.value,
        "start_ms": ev.start_ms,
        "duration_ms": ev.duration,
        "dispersion_px": ev.dispersion,
        "amplitude_deg": ev.amplitude,
        "mean_vel": ev.mean_velocity,
        "peak_vel": ev.peak_velocity,
        "mean_acc": ev.mean_acceleration,
        "peak_acc": ev.peak_acceleration,
        "peak_dec": ev.peak_deceleration,
        "valid": int(ev.samples_valid),
        "start_idx": ev.start_idx,
        "end_idx": ev.end_idx,
        "mean_dec": ev.mean_deceleration,
    } for ev in events]
    return pd.DataFrame(rows, columns=EVENT_COLUMNS)


def events_from_frame(df: pd.DataFrame) -> dict:
    """Inverse of events_to_frame for a frame holding any number of trials. Returns {trial_key: [GazeEvent]}."""

    def _opt(value):
        return None if pd.isna(value) else float(value)

    out = {}
    for row in df.itertuples(index=False):
        out.setdefault(row.trial_key, []).append(GazeEvent(
            kind=EventKind(row.kind),
            start_idx=int(row.start_idx),
            end_idx=int(row.end_idx),
            start_ms=float(row.start_ms),
            duration=float(row.duration_ms),
            dispersion=_opt(row.dispersion_px),
            amplitude=_opt(row.amplitude_deg),
            mean_velocity=_opt(row.mean_vel),
            peak_velocity=_opt(row.peak_vel),
            mean_acceleration=_opt(row.mean_acc),
            peak_acceleration=_opt(row.peak_acc),
            mean_deceleration=_opt(row.mean_dec),
            peak_deceleration=_opt(row.peak_dec),
            samples_valid=bool(row.valid),
        ))
    return out
