import logging
from functools import partial
from pathlib import Path

from django.conf import settings
from django.core.management.base import BaseCommand

from ..config import ExperimentConfig, apply_overrides, load_config, save_config
from ..constants import CONFIG_FILENAME
from ..helper.command_helper import validation_exit
from ..helper.errors import StorageError

logger = logging.getLogger(__name__)


class ExperimentCommand(BaseCommand):
    """Shared flags and output handling for the experiment commands."""

    requires_system_checks = []
    # commands that take an experiment config file
    uses_config = True
    # default subdirectory under ANGULAR_KD_OUTPUT_DIR
    output_name = "run"

    def create_parser(self, prog_name, subcommand, **kwargs):
        parser = super().create_parser(prog_name, subcommand, **kwargs)
        parser.error = partial(validation_exit, parser)
        return parser

    def add_arguments(self, parser):
        if self.uses_config:
            parser.add_argument("--config", help="Flat key=value experiment config file")
            parser.add_argument(
                "--override",
                action="append",
                default=[],
                metavar="KEY=VALUE",
                help="Config override applied after the file; repeatable",
            )
        parser.add_argument("--output-dir", help="Directory for outputs (default: ANGULAR_KD_OUTPUT_DIR/<command>)")
        parser.add_argument("--seed", type=int, help="Root seed for every random stream")
        self.add_command_arguments(parser)

    def add_command_arguments(self, parser):
        pass

    def load_experiment(self, options) -> ExperimentConfig:
        cfg = load_config(options["config"]) if options.get("config") else ExperimentConfig()
        cfg = apply_overrides(cfg, options.get("override") or [])
        if options.get("seed") is not None:
            cfg = cfg.with_train(seed=options["seed"])
        return cfg

    def output_dir(self, options) -> Path:
        if options.get("output_dir"):
            path = Path(options["output_dir"])
        else:
            path = Path(settings.ANGULAR_KD_OUTPUT_DIR) / self.output_name
        try:
            path.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise StorageError(f"cannot create output directory {path}: {exc}") from exc
        return path

    def save_experiment(self, cfg: ExperimentConfig, out: Path) -> Path:
        return save_config(cfg, out / CONFIG_FILENAME)
