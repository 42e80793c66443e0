from core.management.pipeline_command import PipelineCommand
from core.pipeline import stage_report


class Command(PipelineCommand):
    help = "Collate the evaluation, selection and flip-test results into report.json."

    def run_stage(self, cfg, **options):
        return stage_report(cfg)
