from core.management.pipeline_command import PipelineCommand
from core.pipeline import stage_train


class Command(PipelineCommand):
    help = "Train the k-fold SVM ensemble on the training participants of split.json."

    def run_stage(self, cfg, **options):
        return stage_train(cfg)
