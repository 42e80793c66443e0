import json
import logging
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from django.core.management.base import BaseCommand, CommandError

from core.exceptions import ConfigValidationError, MissingArtifactError
from core.pipeline import PipelineConfig

logger = logging.getLogger(__name__)


class PipelineCommand(BaseCommand):
    """Shared options and exit codes of the stage commands.

    A missing upstream artifact exits with 2 and names the expected path; an
    invalid config exits with 3 and lists the offending fields.
    """

    def add_arguments(self, parser):
        parser.add_argument("--config", help="TOML file overriding the settings defaults")
        parser.add_argument("--seed", type=int)
        parser.add_argument("--jobs", type=int, help="worker cap for parallel runs")
        parser.add_argument("--out-dir", dest="out_dir")

    def run_stage(self, cfg: PipelineConfig, **options) -> dict:
        raise NotImplementedError

    def handle(self, *args, **options):
        try:
            cfg = PipelineConfig.load(options["config"], seed=options["seed"], jobs=options["jobs"], out_dir=options["out_dir"])
        except (OSError, tomllib.TOMLDecodeError) as exc:
            raise CommandError(f"unreadable config {options['config']}: {exc}", returncode=3) from exc
        problems = cfg.validate()
        if problems:
            raise CommandError(f"invalid config fields: {', '.join(problems)}", returncode=3)
        logger.info("%s: seed %s, config %s", self.stage_name, cfg.seed, cfg.config_hash()[:12])

        try:
            summary = self.run_stage(cfg, **options)
        except MissingArtifactError as exc:
            raise CommandError(f"missing artifact, expected at {exc.path}", returncode=2) from exc
        except ConfigValidationError as exc:
            raise CommandError(str(exc), returncode=3) from exc

        self.stdout.write(json.dumps(summary, sort_keys=True, default=str))

    @property
    def stage_name(self) -> str:
        return self.__module__.rsplit(".", 1)[-1]
