"""
Synthetic data seeded from published per-class statistics.

Feature rows: every measure is drawn from a normal truncated to the class's
[minimum, maximum] envelope, located so that the truncated mean equals the
class average. A participant carries one offset per measure (in units of the
class standard deviation, scaled by sigma_p) for all of their trials. Measures
are independent of each other.

Gaze traces: a script of fixation, saccade and pursuit segments is rendered
at 250 Hz, with optional jitter and (0, 0) dropouts.
"""

import json
import logging
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence

import numpy as np
from scipy.optimize import brentq
from scipy.stats import truncnorm

from core.events import GeometryConfig
from core.exceptions import ScriptError
from core.features import BASE_MEASURES, FeatureVector, FeatureMatrix, build_matrix, describe
from core.ingest import CLASS_ORDER, NOMINAL_PERIOD_MS, ClassLabel, TrialRecord

logger = logging.getLogger(__name__)

CLASS_STATS_PATH = Path(__file__).resolve().parent / "data" / "class_stats.json"

# frequencies are published as averages only
FREQUENCY_REL_STD = 0.25
FREQUENCY_MAX_FACTOR = 3.0

MAX_PURSUIT_VELOCITY = 30.0
SCREEN_PX = (2400.0, 1000.0)


@dataclass(frozen=True)
class MeasureStats:
    avg: float
    std: Optional[float] = None
    min: Optional[float] = None
    max: Optional[float] = None

    def envelope(self) -> "MeasureStats":
        """Frequencies get a synthetic spread and envelope around their average."""
        if self.std is not None:
            return self
        return MeasureStats(self.avg, FREQUENCY_REL_STD * self.avg, 0.0, FREQUENCY_MAX_FACTOR * self.avg)


@dataclass
class ClassStats:
    measures: Dict[str, Dict[str, MeasureStats]]
    provenance: str = ""

    def __post_init__(self):
        for label, by_measure in self.measures.items():
            for name, m in by_measure.items():
                if m.min is not None and m.max is not None:
                    if m.min > m.max:
                        raise ValueError(f"{label}/{name}: min {m.min} > max {m.max}")
                    if not m.min <= m.avg <= m.max:
                        raise ValueError(f"{label}/{name}: average {m.avg} outside [{m.min}, {m.max}]")
                if m.std is not None and m.std < 0:
                    raise ValueError(f"{label}/{name}: negative std")

    @classmethod
    def from_dict(cls, data: dict) -> "ClassStats":
        measures = {}
        for label, by_measure in data["classes"].items():
            measures[ClassLabel.parse(label).value] = {
                name: MeasureStats(**{k: v for k, v in values.items() if k in ("avg", "std", "min", "max")})
                for name, values in by_measure.items()
            }
        return cls(measures, data.get("provenance", ""))

    @classmethod
    def load(cls, path=None) -> "ClassStats":
        with open(path or CLASS_STATS_PATH, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def get(self, label, measure: str) -> MeasureStats:
        return self.measures[ClassLabel(label).value][measure]


@dataclass(frozen=True)
class SynthConfig:
    participants: Mapping[str, int] = field(default_factory=lambda: {"Novice": 13, "Intermediate": 10, "Expert": 12})
    trials: int = 52
    sigma_p: float = 0.5
    events_per_trial: int = 10
    seed: int = 0

    def __post_init__(self):
        if any(n < 1 for n in self.participants.values()) or self.trials < 1 or self.events_per_trial < 1:
            raise ValueError("participant, trial and event counts must be >= 1")
        if self.sigma_p < 0:
            raise ValueError("sigma_p must be >= 0")


@lru_cache(maxsize=None)
def calibrated_loc(m: MeasureStats) -> float:
    """Location whose truncation to [min, max] has mean avg."""
    def gap(loc):
        a, b = (m.min - loc) / m.std, (m.max - loc) / m.std
        return truncnorm.mean(a, b, loc=loc, scale=m.std) - m.avg

    if m.std == 0 or m.min == m.max:
        return m.avg
    lo, hi = m.min - 20 * m.std, m.max + 20 * m.std
    if gap(lo) * gap(hi) > 0:
        logger.warning("cannot locate truncated mean %.3f in [%.3f, %.3f]; using the average", m.avg, m.min, m.max)
        return m.avg
    return brentq(gap, lo, hi, xtol=1e-10)


def draw_truncated(m: MeasureStats, offset: float, size, rng: np.random.Generator) -> np.ndarray:
    if m.std == 0 or m.min == m.max:
        return np.full(size, m.avg)
    loc = calibrated_loc(m) + offset
    a, b = (m.min - loc) / m.std, (m.max - loc) / m.std
    return truncnorm.rvs(a, b, loc=loc, scale=m.std, size=size, random_state=rng)


def _trial_key(participant_id: str, trial: int) -> str:
    return f"{participant_id}-s{trial // 2 + 1:02d}-b{trial % 2 + 1}"


def sample_feature_rows(stats: ClassStats, cfg: SynthConfig = SynthConfig()) -> FeatureMatrix:
    """One feature row per synthetic trial; each derivation column comes from events_per_trial simulated events."""
    rng = np.random.default_rng(cfg.seed)
    logger.info("sampling synthetic feature rows (seed %s, sigma_p %s)", cfg.seed, cfg.sigma_p)
    vectors: List[FeatureVector] = []
    for label in CLASS_ORDER:
        count = cfg.participants.get(label.value, 0)
        for p in range(count):
            participant_id = f"{label.value[0]}{p + 1:02d}"
            columns: Dict[str, np.ndarray] = {}
            for name, _, attr in BASE_MEASURES:
                m = stats.get(label, name).envelope()
                offset = rng.normal(0.0, cfg.sigma_p * m.std) if cfg.sigma_p > 0 else 0.0
                if attr is None:
                    columns[name] = draw_truncated(m, offset, cfg.trials, rng)
                    continue
                draws = draw_truncated(m, offset, (cfg.trials, cfg.events_per_trial), rng)
                for trial in range(cfg.trials):
                    for d, v in describe(draws[trial]).items():
                        columns.setdefault(f"{name}_{d}", np.empty(cfg.trials))[trial] = v
            for trial in range(cfg.trials):
                vectors.append(FeatureVector(
                    participant_id=participant_id,
                    class_label=label,
                    trial_key=_trial_key(participant_id, trial),
                    values={name: float(col[trial]) for name, col in columns.items()},
                ))
    return build_matrix(vectors)


@dataclass(frozen=True)
class ScriptSegment:
    """kind is fixation, saccade or pursuit. dx/dy is the displacement in px over the segment."""

    kind: str
    duration_ms: float
    dx: float = 0.0
    dy: float = 0.0
    start_ms: Optional[float] = None


@dataclass(frozen=True)
class TraceScript:
    segments: Sequence[ScriptSegment]
    start: tuple = (500.0, 500.0)
    jitter_px: float = 0.0
    dropouts: Sequence[int] = ()
    participant_id: str = "S01"
    class_label: ClassLabel = ClassLabel.EXPERT
    stimulus_id: int = 1
    block: int = 1


def _keyframes(script: TraceScript, geom: GeometryConfig):
    x, y = script.start
    clock = 0.0
    frames = [(0.0, x, y)]
    for seg in script.segments:
        if seg.kind not in ("fixation", "saccade", "pursuit"):
            raise ScriptError(f"unknown segment kind {seg.kind!r}")
        if seg.duration_ms <= 0:
            raise ScriptError("segment duration must be > 0")
        if seg.start_ms is not None:
            if seg.start_ms < clock:
                raise ScriptError(f"overlapping segments: {seg.kind} starts at {seg.start_ms} ms, previous ends at {clock} ms")
            if seg.start_ms > clock:
                clock = seg.start_ms
                frames.append((clock, x, y))
        if seg.kind == "fixation" and (seg.dx or seg.dy):
            raise ScriptError("fixation segments cannot move")
        if seg.kind == "pursuit":
            speed = float(np.hypot(seg.dx / geom.px_per_deg_x, seg.dy / geom.px_per_deg_y)) / (seg.duration_ms / 1000.0)
            if speed > MAX_PURSUIT_VELOCITY:
                raise ScriptError(f"pursuit at {speed:.1f} deg/s exceeds {MAX_PURSUIT_VELOCITY} deg/s")
        clock += seg.duration_ms
        x, y = x + seg.dx, y + seg.dy
        frames.append((clock, x, y))
    return tuple(np.asarray(col) for col in zip(*frames))


def sample_gaze_trace(script: TraceScript, geom: GeometryConfig = GeometryConfig(), seed: int = 0) -> TrialRecord:
    """Renders a script at 250 Hz starting at t = 0. Dropout indices become (0, 0) with the valid flag cleared."""
    times, kx, ky = _keyframes(script, geom)
    t = np.arange(0.0, times[-1] + NOMINAL_PERIOD_MS / 2, NOMINAL_PERIOD_MS)
    x = np.interp(t, times, kx)
    y = np.interp(t, times, ky)
    if script.jitter_px > 0:
        rng = np.random.default_rng(seed)
        x = x + rng.normal(0.0, script.jitter_px, len(t))
        y = y + rng.normal(0.0, script.jitter_px, len(t))
    valid = np.ones(len(t), dtype=bool)
    drops = np.asarray(list(script.dropouts), dtype=int)
    if len(drops):
        if drops.min() < 0 or drops.max() >= len(t):
            raise ScriptError("dropout index outside the trace")
        x[drops] = 0.0
        y[drops] = 0.0
        valid[drops] = False
    return TrialRecord(
        participant_id=script.participant_id,
        class_label=ClassLabel(script.class_label),
        stimulus_id=script.stimulus_id,
        block=script.block,
        t=t,
        x=x,
        y=y,
        valid=valid,
    )


def _round_period(ms: float) -> float:
    return max(NOMINAL_PERIOD_MS, NOMINAL_PERIOD_MS * round(ms / NOMINAL_PERIOD_MS))


def _toward_screen(position, dx, dy):
    """Flips a displacement component that would leave the screen."""
    x, y = position
    w, h = SCREEN_PX
    if not 50 <= x + dx <= w - 50:
        dx = -dx
    if not 50 <= y + dy <= h - 50:
        dy = -dy
    return dx, dy


def sample_trial_script(
    stats: ClassStats,
    class_label,
    rng: np.random.Generator,
    geom: GeometryConfig = GeometryConfig(),
    trial_ms: float = 4000.0,
    pursuit_share: float = 0.2,
    **script_fields,
) -> TraceScript:
    """Fixation, saccade, fixation, ... drawn from one class's statistics.

    A pursuit is always flanked by saccades so that it never merges with a
    neighbouring fixation into one slow run.
    """
    label = ClassLabel(class_label)
    start = (SCREEN_PX[0] / 2, SCREEN_PX[1] / 2)
    position = start
    segments: List[ScriptSegment] = []

    def draw(measure: str) -> float:
        return float(draw_truncated(stats.get(label, measure), 0.0, 1, rng)[0])

    def move(kind: str, duration: float, dx: float, dy: float):
        nonlocal position
        dx, dy = _toward_screen(position, dx, dy)
        segments.append(ScriptSegment(kind, duration, dx, dy))
        position = (position[0] + dx, position[1] + dy)

    def saccade():
        duration = _round_period(draw("saccade_duration"))
        # sweep between 60 and 900 deg/s: detected, and inside the kinematic limits
        amp = float(np.clip(draw("saccade_amplitude"), 0.06 * duration, 0.9 * duration))
        angle = rng.uniform(0, 2 * np.pi)
        move("saccade", duration, amp * geom.px_per_deg_x * np.cos(angle), amp * geom.px_per_deg_y * np.sin(angle))

    clock = 0.0
    while clock < trial_ms:
        segments.append(ScriptSegment("fixation", _round_period(draw("fixation_duration"))))
        saccade()
        if rng.random() < pursuit_share:
            spread = draw("pursuit_dispersion")
            angle = rng.uniform(0, 2 * np.pi)
            dx, dy = spread * np.cos(angle), spread * np.sin(angle)
            deg = float(np.hypot(dx / geom.px_per_deg_x, dy / geom.px_per_deg_y))
            duration = _round_period(max(draw("pursuit_duration"), 1000.0 * deg / (0.9 * MAX_PURSUIT_VELOCITY)))
            move("pursuit", duration, dx, dy)
            saccade()
        clock = sum(seg.duration_ms for seg in segments)
    segments.append(ScriptSegment("fixation", _round_period(draw("fixation_duration"))))
    return TraceScript(segments, start=start, class_label=label, **script_fields)


def sample_gaze_trials(stats: ClassStats, cfg: SynthConfig = SynthConfig(), geom: GeometryConfig = GeometryConfig(),
                       jitter_px: float = 0.05) -> List[TrialRecord]:
    """Raw gaze trials for every synthetic participant, for the ingest path."""
    rng = np.random.default_rng(cfg.seed)
    trials = []
    for label in CLASS_ORDER:
        for p in range(cfg.participants.get(label.value, 0)):
            participant_id = f"{label.value[0]}{p + 1:02d}"
            for trial in range(cfg.trials):
                script = sample_trial_script(
                    stats, label, rng, geom,
                    participant_id=participant_id, stimulus_id=trial // 2 + 1, block=trial % 2 + 1, jitter_px=jitter_px,
                )
                trials.append(sample_gaze_trace(script, geom, seed=int(rng.integers(2 ** 31))))
    logger.info("rendered %d synthetic gaze trials", len(trials))
    return trials
