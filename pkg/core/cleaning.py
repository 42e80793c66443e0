import logging
from dataclasses import asdict, dataclass, field
from typing import Dict, Iterable, List, Tuple

from core.events import EventKind, GazeEvent
from core.ingest import TrialRecord

logger = logging.getLogger(__name__)

RULE_START = "invalid_start"
RULE_INTRA = "invalid_intra_saccade"
RULE_KINEMATICS = "kinematic_limits"
RULES = (RULE_START, RULE_INTRA, RULE_KINEMATICS)


@dataclass(frozen=True)
class CleaningLimits:
    max_velocity: float = 1000.0
    max_accel: float = 100000.0
    max_decel: float = 100000.0


@dataclass
class CleaningReport:
    total_saccades: int = 0
    removed_by_rule: Dict[str, int] = field(default_factory=lambda: {rule: 0 for rule in RULES})
    removed_total: int = 0
    total_samples: int = 0
    removed_samples: int = 0

    @property
    def removed_fraction(self) -> float:
        return self.removed_total / self.total_saccades if self.total_saccades else 0.0

    @property
    def sample_fraction_removed(self) -> float:
        return self.removed_samples / self.total_samples if self.total_samples else 0.0

    def to_dict(self) -> dict:
        data = asdict(self)
        data["removed_fraction"] = self.removed_fraction
        data["sample_fraction_removed"] = self.sample_fraction_removed
        return data


def violated_rules(event: GazeEvent, trial: TrialRecord, limits: CleaningLimits) -> List[str]:
    """Rules a saccade breaks. Empty for valid saccades and for every non-saccade event."""
    if event.kind != EventKind.SACCADE:
        return []
    rules = []
    s, e = event.start_idx, event.end_idx
    at_origin = trial.x[s] == 0 and trial.y[s] == 0
    if at_origin:
        rules.append(RULE_START)
    # an onset at (0, 0) is rule 1 only; any other unusable onset is rule 2
    onset_bad = not at_origin and not trial.usable[s]
    if onset_bad or not trial.usable[s + 1:e + 1].all():
        rules.append(RULE_INTRA)
    if (
        (event.peak_velocity or 0.0) > limits.max_velocity
        or abs(event.peak_acceleration or 0.0) > limits.max_accel
        or abs(event.peak_deceleration or 0.0) > limits.max_decel
    ):
        rules.append(RULE_KINEMATICS)
    return rules


def clean_saccades(
    events: Iterable[GazeEvent],
    trial: TrialRecord,
    limits: CleaningLimits = CleaningLimits(),
) -> Tuple[List[GazeEvent], CleaningReport]:
    """Drops whole saccades that break any rule. Nothing is repaired or interpolated."""
    report = CleaningReport(total_samples=trial.n_samples)
    kept = []
    for event in events:
        if event.kind == EventKind.SACCADE:
            report.total_saccades += 1
        rules = violated_rules(event, trial, limits)
        if not rules:
            kept.append(event)
            continue
        for rule in rules:
            report.removed_by_rule[rule] += 1
        report.removed_total += 1
        report.removed_samples += event.end_idx - event.start_idx + 1

    if report.removed_total:
        logger.debug("trial %s: removed %d of %d saccades %s", trial.key, report.removed_total, report.total_saccades, report.removed_by_rule)
    return kept, report


def summarize_cleaning(reports: Iterable[CleaningReport]) -> CleaningReport:
    total = CleaningReport()
    for report in reports:
        total.total_saccades += report.total_saccades
        total.removed_total += report.removed_total
        total.total_samples += report.total_samples
        total.removed_samples += report.removed_samples
        for rule, count in report.removed_by_rule.items():
            total.removed_by_rule[rule] = total.removed_by_rule.get(rule, 0) + count
    return total


def cleaning_report_from_dict(data: dict) -> CleaningReport:
    return CleaningReport(
        total_saccades=int(data["total_saccades"]),
        removed_by_rule={k: int(v) for k, v in data["removed_by_rule"].items()},
        removed_total=int(data["removed_total"]),
        total_samples=int(data["total_samples"]),
        removed_samples=int(data["removed_samples"]),
    )

