from core.management.pipeline_command import PipelineCommand
from core.pipeline import FEATURE_SETS, TASKS, stage_evaluate


class Command(PipelineCommand):
    help = "Repeat split, training and holdout scoring over the configured number of runs."

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument("--features", choices=FEATURE_SETS, default="all")
        parser.add_argument("--task", choices=TASKS, default="ternary")
        parser.add_argument("--sweep", action="store_true", help="also evaluate every C in C_sweep")

    def run_stage(self, cfg, **options):
        return stage_evaluate(cfg, feature_set=options["features"], task=options["task"], sweep=options["sweep"])
