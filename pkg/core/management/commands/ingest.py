from core.management.pipeline_command import PipelineCommand
from core.pipeline import stage_ingest


class Command(PipelineCommand):
    help = "Parse a gaze CSV, apply the tracking-ratio quality gate and write trials.json."

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument("--source", help="gaze CSV (defaults to the configured gaze_csv)")
        parser.add_argument("--registry", action="store_true", help="also sync the trial registry")

    def run_stage(self, cfg, **options):
        return stage_ingest(cfg, source=options["source"], registry=options["registry"])
