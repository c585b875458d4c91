import logging

from django.conf import settings
from django.core.management.base import CommandError

from ...config import parse_override
from ...constants import COMPARISON_FILENAME, COMPARISON_SUMMARY_FILENAME, SWEEP_FILENAME
from ...harness import compare_experiment, load_experiment_data, sweep_experiment
from ...helper.command_helper import handle_command_errors, parse_csv
from ...helper.errors import EXIT_VALIDATION
from ...reporting import (
    SUMMARY_FIELDS,
    SWEEP_FIELDS,
    SWEEP_SUMMARY_FIELDS,
    summarize_comparison,
    summarize_sweep,
    write_comparison_csv,
    write_csv,
)
from ..base import ExperimentCommand

logger = logging.getLogger(__name__)

SWEEP_TYPES = {"gamma_init": float, "n_views": int}


class Command(ExperimentCommand):
    help = "Compare augmentation modes and ablations over several seeds, or sweep one hyperparameter"
    output_name = "compare"

    def add_command_arguments(self, parser):
        parser.add_argument("--modes", default="none,noise,angular")
        parser.add_argument("--seeds", default="0,1,2,3,4")
        parser.add_argument("--ablations", default="full")
        parser.add_argument("--workers", type=int, help="Worker processes (default: ANGULAR_KD_WORKERS)")
        parser.add_argument("--sweep", metavar="KEY=V1,V2", help="Sweep gamma_init or n_views instead of comparing")

    @handle_command_errors("Failed to run comparison")
    def handle(self, *args, **options):
        exp = self.load_experiment(options)
        out = self.output_dir(options)
        seeds = parse_csv(options["seeds"], int)
        workers = options["workers"] or settings.ANGULAR_KD_WORKERS
        train, test = load_experiment_data(exp)
        self.save_experiment(exp, out)

        if options["sweep"]:
            key, raw_values = parse_override(options["sweep"])
            if key not in SWEEP_TYPES:
                raise CommandError(f"cannot sweep {key}", returncode=EXIT_VALIDATION)
            values = parse_csv(raw_values, SWEEP_TYPES[key])
            rows = sweep_experiment(exp.train, train, test, key, values, seeds, workers)
            write_csv(rows, SWEEP_FIELDS, out / SWEEP_FILENAME)
            write_csv(summarize_sweep(rows), SWEEP_SUMMARY_FIELDS, out / COMPARISON_SUMMARY_FILENAME)
            logger.info("[CMD:compare] sweep over %s with %d values x %d seeds", key, len(values), len(seeds))
            self.stdout.write(f"Wrote {len(rows)} sweep rows to {out / SWEEP_FILENAME}")
            return

        rows = compare_experiment(
            exp.train,
            train,
            test,
            modes=parse_csv(options["modes"]),
            seeds=seeds,
            ablations=parse_csv(options["ablations"]),
            workers=workers,
        )
        write_comparison_csv(rows, out / COMPARISON_FILENAME)
        summary = summarize_comparison(rows)
        write_csv(summary, SUMMARY_FIELDS, out / COMPARISON_SUMMARY_FILENAME)

        logger.info("[CMD:compare] %d runs written to %s", len(rows), out)
        for entry in summary:
            self.stdout.write(
                f"{entry['mode']:>8} {entry['ablation']:>14}  "
                f"acc {entry['test_acc_mean']:.4f} +/- {entry['test_acc_std']:.4f}"
            )
