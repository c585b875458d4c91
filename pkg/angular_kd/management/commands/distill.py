import logging

from ...constants import METRICS_CSV_FILENAME, METRICS_FILENAME, SUMMARY_FILENAME
from ...harness import TeacherFlow, load_experiment_data, run_pipeline
from ...helper.command_helper import handle_command_errors
from ...reporting import MetricsWriter, write_json, write_metrics_csv
from ..base import ExperimentCommand

logger = logging.getLogger(__name__)


class Command(ExperimentCommand):
    help = "Run teacher pretraining (or load a teacher), head warm-up and joint distillation"
    output_name = "distill"

    def add_command_arguments(self, parser):
        parser.add_argument("--teacher-checkpoint", help="Reuse a pretrained teacher instead of training one")

    @handle_command_errors("Failed to run distillation")
    def handle(self, *args, **options):
        exp = self.load_experiment(options)
        out = self.output_dir(options)
        train, test = load_experiment_data(exp)
        self.save_experiment(exp, out)

        teacher = None
        if options["teacher_checkpoint"]:
            teacher = TeacherFlow.restore(exp.train, train, options["teacher_checkpoint"])

        with MetricsWriter(out / METRICS_FILENAME) as sink:
            result = run_pipeline(exp.train, train, test, teacher=teacher, sink=sink, output_dir=out)

        write_metrics_csv(result.metrics, out / METRICS_CSV_FILENAME)
        write_json(result.summary, out / SUMMARY_FILENAME)
        logger.info(
            "[CMD:distill] mode=%s student test accuracy %.4f",
            exp.train.aug_mode,
            result.summary["student_test_acc"],
        )
        self.stdout.write(f"Student test accuracy {result.summary['student_test_acc']:.4f}; outputs in {out}")
