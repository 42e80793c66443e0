from core.management.pipeline_command import PipelineCommand
from core.pipeline import stage_split


class Command(PipelineCommand):
    help = "Draw a participant-wise train/holdout plan."

    def run_stage(self, cfg, **options):
        return stage_split(cfg)
