from core.management.pipeline_command import PipelineCommand
from core.pipeline import stage_detect


class Command(PipelineCommand):
    help = "Detect fixations, saccades, smooth pursuits and gaps in every ingested trial."

    def run_stage(self, cfg, **options):
        return stage_detect(cfg)
