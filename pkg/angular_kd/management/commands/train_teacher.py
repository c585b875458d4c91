import logging

from ...constants import METRICS_FILENAME, SUMMARY_FILENAME
from ...harness import load_experiment_data, pretrain_teacher
from ...helper.command_helper import handle_command_errors
from ...reporting import MetricsWriter, write_json
from ..base import ExperimentCommand

logger = logging.getLogger(__name__)


class Command(ExperimentCommand):
    help = "Pretrain the teacher with cross-entropy and save teacher.ckpt"
    output_name = "teacher"

    @handle_command_errors("Failed to train teacher")
    def handle(self, *args, **options):
        exp = self.load_experiment(options)
        out = self.output_dir(options)
        train, test = load_experiment_data(exp)
        self.save_experiment(exp, out)

        with MetricsWriter(out / METRICS_FILENAME) as sink:
            run = pretrain_teacher(exp.train, train, test, sink=sink, output_dir=out)

        write_json(
            {
                "seed": exp.train.seed,
                "teacher_train_acc": run.train_acc,
                "teacher_test_acc": run.test_acc,
                "checkpoint": str(run.checkpoint),
            },
            out / SUMMARY_FILENAME,
        )
        logger.info("[CMD:train_teacher] teacher test accuracy %.4f", run.test_acc)
        self.stdout.write(f"Teacher test accuracy {run.test_acc:.4f}; checkpoint {run.checkpoint}")
