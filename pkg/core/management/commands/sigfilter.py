from core.management.pipeline_command import PipelineCommand
from core.pipeline import stage_sigfilter


class Command(PipelineCommand):
    help = "Keep features whose Mann-Whitney U test rejects for at least one class pair."

    def run_stage(self, cfg, **options):
        return stage_sigfilter(cfg)
