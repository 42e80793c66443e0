import logging

import pytest

from core.dataset import SplitPlan, draw_split, materialize, row_split, run_seeds
from core.exceptions import InsufficientParticipantsError
from core.features import FEATURE_NAMES, FeatureVector, build_matrix
from core.ingest import ClassLabel

PARTICIPANTS = {
    "Novice": {f"N{i:02d}" for i in range(1, 14)},
    "Intermediate": {f"I{i:02d}" for i in range(1, 11)},
    "Expert": {f"E{i:02d}" for i in range(1, 13)},
}


def _matrix(participants=PARTICIPANTS, trials=3):
    vectors = []
    for label, ids in participants.items():
        for pid in sorted(ids):
            for trial in range(trials):
                vectors.append(FeatureVector(pid, ClassLabel(label), f"{pid}-s{trial + 1:02d}-b1", {n: float(trial) for n in FEATURE_NAMES}))
    return build_matrix(vectors)


# Test 1 - Train and holdout participants never overlap

def test_splits_are_disjoint_over_many_plans():
    """ 1000 plans drawn with derived seeds: every class gets 8 training and 2 holdout participants, never shared."""
    for seed in run_seeds(7, 1000):
        plan = draw_split(PARTICIPANTS, seed)
        assert not plan.train_ids() & plan.holdout_ids()
        for label in PARTICIPANTS:
            assert len(plan.train_participants[label]) == 8
            assert len(plan.holdout_participants[label]) == 2
            assert plan.train_participants[label] | plan.holdout_participants[label] <= PARTICIPANTS[label]


def test_split_is_deterministic_per_seed():
    assert draw_split(PARTICIPANTS, 3) == draw_split(PARTICIPANTS, 3)
    assert draw_split(PARTICIPANTS, 3) != draw_split(PARTICIPANTS, 4)


def test_exactly_enough_participants_uses_all_of_them():
    plan = draw_split({"Expert": {f"E{i:02d}" for i in range(10)}}, 0)
    assert plan.train_ids() | plan.holdout_ids() == {f"E{i:02d}" for i in range(10)}


# Test 2 - Not enough participants in a class

def test_insufficient_participants():
    participants = dict(PARTICIPANTS, Intermediate={f"I{i:02d}" for i in range(1, 10)})
    with pytest.raises(InsufficientParticipantsError, match="insufficient participants"):
        draw_split(participants, 0)


# Test 3 - Materializing routes whole participants

def test_materialize_routes_rows_by_participant():
    matrix = _matrix()
    plan = draw_split(matrix.participants_by_class(), 11)
    train, holdout = materialize(plan, matrix)

    assert len(train) == 24 * 3
    assert len(holdout) == 6 * 3
    assert set(train.participants) == plan.train_ids()
    assert set(holdout.participants) == plan.holdout_ids()


def test_materialize_warns_for_participant_without_rows(caplog):
    matrix = _matrix()
    plan = SplitPlan({"Expert": frozenset({"E01", "E99"})}, {"Expert": frozenset({"E02"})})
    with caplog.at_level(logging.WARNING, logger="core.dataset"):
        train, holdout = materialize(plan, matrix)
    assert "participant E99 in split plan has no rows" in caplog.text
    assert set(train.participants) == {"E01"}
    assert len(holdout) == 3


def test_plan_survives_json_form():
    plan = draw_split(PARTICIPANTS, 5)
    assert SplitPlan.from_dict(plan.to_dict()) == plan


# Test 4 - Row-level split mixes participants across partitions

def test_row_split_shares_participants():
    matrix = _matrix(trials=10)
    train, holdout = row_split(matrix, 0.2, seed=1)
    assert len(holdout) == round(0.2 * len(matrix))
    assert len(train) + len(holdout) == len(matrix)
    assert set(train.participants) & set(holdout.participants)


def test_run_seeds_are_reproducible_and_distinct():
    seeds = run_seeds(20211, 50)
    assert seeds == run_seeds(20211, 50)
    assert len(set(seeds)) == 50
    assert run_seeds(20211, 3) == seeds[:3]
