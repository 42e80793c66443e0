import logging
from typing import Dict, Iterable, Set, Tuple

from django.db import transaction
from django.utils import timezone

from core.ingest import DatasetManifest, TrialRecord
from core.models import Participant, Trial

logger = logging.getLogger(__name__)


def _trial_key(participant_id: str, stimulus_id: int, block: int) -> str:
    return f"{participant_id}-s{stimulus_id:02d}-b{block}"


def sync_registry(manifest: DatasetManifest, trials: Iterable[TrialRecord] = ()) -> Dict[str, int]:
    """Makes the registry match one ingest. Returns a small summary.

    `trials` is the full parsed list; it supplies class labels and sample
    counts for the trials the quality gate dropped. Re-ingesting a trial updates
    its row. Registered trials of the ingested participants that this ingest no
    longer contains are archived.
    """
    records = {tr.key: tr for tr in trials}
    records.update({tr.key: tr for tr in manifest.trials})

    created = 0
    updated = 0
    archived = 0
    dropped = 0

    #Track what this ingest contains so we can archive anything missing
    seen: Set[Tuple[int, int, int]] = set()
    participants: Dict[str, Participant] = {}

    entries = [(tr, None) for tr in manifest.trials]
    for d in manifest.dropped:
        record = records.get(_trial_key(d.participant_id, d.stimulus_id, d.block))
        if record is None and not Participant.objects.filter(participant_id=d.participant_id).exists():
            logger.warning("dropped trial %s-s%02d-b%d has no class label; not registered", d.participant_id, d.stimulus_id, d.block)
            continue
        entries.append((record, d))

    with transaction.atomic():
        for record, drop in entries:
            participant_id = record.participant_id if record is not None else drop.participant_id
            participant = participants.get(participant_id)
            if participant is None:
                if record is not None:
                    participant, _ = Participant.objects.update_or_create(
                        participant_id=participant_id,
                        defaults={"class_label": record.class_label.value},
                    )
                else:
                    participant = Participant.objects.get(participant_id=participant_id)
                participants[participant_id] = participant

            stimulus_id = record.stimulus_id if record is not None else drop.stimulus_id
            block = record.block if record is not None else drop.block
            _, created_new = Trial.objects.update_or_create(
                participant=participant,
                stimulus_id=stimulus_id,
                block=block,
                defaults={
                    "n_samples": record.n_samples if record is not None else 0,
                    "tracking_ratio": record.tracking_ratio if record is not None else 0.0,
                    "is_dropped": drop is not None,
                    "drop_reason": drop.reason if drop is not None else None,
                    "is_archived": False,
                    "archived_at": None,
                },
            )

            seen.add((participant.id, stimulus_id, block))
            if drop is not None:
                dropped += 1
            if created_new:
                created += 1
            else:
                updated += 1

        # Archive registered trials of these participants that this ingest does not contain
        qs = Trial.objects.filter(participant__in=participants.values(), is_archived=False).only(
            "id", "participant_id", "stimulus_id", "block"
        )
        to_archive_ids = [
            trial.id
            for trial in qs
            if (trial.participant_id, trial.stimulus_id, trial.block) not in seen
        ]
        if to_archive_ids:
            archived = Trial.objects.filter(id__in=to_archive_ids).update(
                is_archived=True,
                archived_at=timezone.now(),
            )

    summary = {"created": created, "updated": updated, "archived": archived, "dropped": dropped}
    logger.info("registry sync: %s", summary)
    return summary
