from core.management.pipeline_command import PipelineCommand
from core.pipeline import stage_synth


class Command(PipelineCommand):
    help = "Generate synthetic feature rows or raw gaze trials from the bundled class statistics."

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument("--kind", choices=("features", "gaze"), default="features")
        parser.add_argument("--stats", help="class statistics JSON (defaults to the bundled one)")

    def run_stage(self, cfg, **options):
        return stage_synth(cfg, kind=options["kind"], stats_path=options["stats"])
