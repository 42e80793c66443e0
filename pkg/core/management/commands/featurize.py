from core.management.pipeline_command import PipelineCommand
from core.pipeline import stage_featurize


class Command(PipelineCommand):
    help = "Build the 46-feature matrix from cleaned events, or pass synthetic feature rows through."

    def run_stage(self, cfg, **options):
        return stage_featurize(cfg)
