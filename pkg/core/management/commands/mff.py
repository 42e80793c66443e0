from core.management.pipeline_command import PipelineCommand
from core.pipeline import stage_mff


class Command(PipelineCommand):
    help = "Select the most frequent top-ranked features over repeated runs."

    def run_stage(self, cfg, **options):
        return stage_mff(cfg)
