from django.db import models


class Participant(models.Model):
    """ A recorded participant and their expertise class."""

    CLASS_CHOICES = [
        ("Novice", "Novice"),
        ("Intermediate", "Intermediate"),
        ("Expert", "Expert"),
    ]

    participant_id = models.CharField(max_length=64, unique=True)
    class_label = models.CharField(max_length=16, choices=CLASS_CHOICES)

    def __str__(self) -> str:
        return f"{self.participant_id} ({self.class_label})"


class Trial(models.Model):
    """One participant-trial seen by ingest. Trials missing from a later export are archived, not deleted."""

    participant = models.ForeignKey(Participant, related_name="trials", on_delete=models.CASCADE)
    stimulus_id = models.IntegerField()
    block = models.IntegerField()

    n_samples = models.IntegerField(default=0)
    tracking_ratio = models.FloatField(default=0.0)

    #Dropped trials stay in the registry with the reason the quality gate gave
    is_dropped = models.BooleanField(default=False)
    drop_reason = models.CharField(max_length=64, null=True, blank=True)

    is_archived = models.BooleanField(default=False)
    archived_at = models.DateTimeField(null=True, blank=True)

    created_on = models.DateTimeField(auto_now_add=True)
    updated_on = models.DateTimeField(auto_now=True)

    class Meta:
        unique_together = ("participant", "stimulus_id", "block")
        indexes = [
            models.Index(fields=["participant", "is_archived"], name="core_trial_part_archived_idx"),
        ]

    def __str__(self) -> str:
        return f"{self.participant.participant_id}-s{self.stimulus_id:02d}-b{self.block}"
