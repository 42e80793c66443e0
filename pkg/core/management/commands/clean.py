from core.management.pipeline_command import PipelineCommand
from core.pipeline import stage_clean


class Command(PipelineCommand):
    help = "Remove saccades that break the onset, intra-saccade or kinematic rules."

    def run_stage(self, cfg, **options):
        return stage_clean(cfg)
