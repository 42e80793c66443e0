import logging
from dataclasses import dataclass
from typing import Dict, List, Mapping, Set, Tuple

import numpy as np

from core.exceptions import InsufficientParticipantsError
from core.features import FeatureMatrix

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SplitPlan:
    """Which participants train and which are held out, per class. Participants never appear on both sides."""

    train_participants: Dict[str, frozenset]
    holdout_participants: Dict[str, frozenset]
    seed: int = 0

    def train_ids(self) -> Set[str]:
        return set().union(*self.train_participants.values()) if self.train_participants else set()

    def holdout_ids(self) -> Set[str]:
        return set().union(*self.holdout_participants.values()) if self.holdout_participants else set()

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "train": {c: sorted(ids) for c, ids in sorted(self.train_participants.items())},
            "holdout": {c: sorted(ids) for c, ids in sorted(self.holdout_participants.items())},
        }

    @classmethod
    def from_dict(cls, data: dict) -> "SplitPlan":
        return cls(
            train_participants={c: frozenset(ids) for c, ids in data["train"].items()},
            holdout_participants={c: frozenset(ids) for c, ids in data["holdout"].items()},
            seed=int(data["seed"]),
        )


def draw_split(participants: Mapping[str, Set[str]], seed: int, n_train: int = 8, n_holdout: int = 2) -> SplitPlan:
    """Uniformly picks n_train participants per class for training and n_holdout of the rest for holdout."""
    rng = np.random.default_rng(seed)
    train, holdout = {}, {}
    for label in sorted(participants):
        ids = sorted(participants[label])
        if len(ids) < n_train + n_holdout:
            raise InsufficientParticipantsError(
                f"insufficient participants: class {label} has {len(ids)}, needs {n_train + n_holdout}"
            )
        order = rng.permutation(len(ids))
        train[label] = frozenset(ids[i] for i in order[:n_train])
        holdout[label] = frozenset(ids[i] for i in order[n_train:n_train + n_holdout])
    logger.debug("split drawn with seed %s", seed)
    return SplitPlan(train, holdout, seed)


def materialize(plan: SplitPlan, matrix: FeatureMatrix) -> Tuple[FeatureMatrix, FeatureMatrix]:
    """Routes every row by its participant. Rows of participants outside the plan go nowhere."""
    present = set(matrix.participants)
    for pid in sorted(plan.train_ids() | plan.holdout_ids()):
        if pid not in present:
            logger.warning("participant %s in split plan has no rows", pid)

    participants = matrix.participants
    train_mask = np.isin(participants, sorted(plan.train_ids()))
    holdout_mask = np.isin(participants, sorted(plan.holdout_ids()))
    return matrix.rows(train_mask), matrix.rows(holdout_mask)


def row_split(matrix: FeatureMatrix, holdout_fraction: float, seed: int) -> Tuple[FeatureMatrix, FeatureMatrix]:
    """Row-level random split. It leaks participant identity across the partition; kept for comparison only."""
    rng = np.random.default_rng(seed)
    n = len(matrix)
    holdout = np.zeros(n, dtype=bool)
    holdout[rng.permutation(n)[:int(round(holdout_fraction * n))]] = True
    return matrix.rows(~holdout), matrix.rows(holdout)


def run_seeds(seed: int, runs: int) -> List[int]:
    """Independent per-run seeds derived from one master seed."""
    return [int(child.generate_state(1)[0]) for child in np.random.SeedSequence(seed).spawn(runs)]
