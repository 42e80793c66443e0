from core.management.pipeline_command import PipelineCommand
from core.pipeline import stage_fliptest


class Command(PipelineCommand):
    help = "Classify experts against experts relabeled as intermediates."

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument("--control", action="store_true", help="use the real expert and intermediate labels")

    def run_stage(self, cfg, **options):
        return stage_fliptest(cfg, control=options["control"])
