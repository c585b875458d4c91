import logging

from ...autodiff import Rng
from ...constants import DIVERSITY_REPORT_FILENAME
from ...harness import evaluate_diversity, evaluate_top1, evaluate_views, load_experiment_data, restore_run
from ...helper.command_helper import handle_command_errors
from ...reporting import write_json
from ..base import ExperimentCommand

logger = logging.getLogger(__name__)


class Command(ExperimentCommand):
    help = "Diversity, angle and KL-bound report for a saved run checkpoint"
    output_name = "diversity"

    def add_command_arguments(self, parser):
        parser.add_argument("--checkpoint", required=True, help="run.ckpt written by distill")
        parser.add_argument("--split", choices=["train", "test"], default="test")

    @handle_command_errors("Failed to report diversity")
    def handle(self, *args, **options):
        exp = self.load_experiment(options)
        cfg = exp.train
        out = self.output_dir(options)
        train, test = load_experiment_data(exp)
        data = test if options["split"] == "test" else train

        teacher, training, student = restore_run(cfg, train, options["checkpoint"])
        report = evaluate_diversity(teacher, data, training, cfg, Rng(cfg.seed))

        payload = report.as_dict()
        payload.update(
            split=options["split"],
            checkpoint=options["checkpoint"],
            teacher_acc=evaluate_top1(teacher, data),
            student_acc=evaluate_top1(student, data),
        )
        if training is not None:
            accuracy = evaluate_views(teacher, training.heads, data, cfg.ensemble_weights)
            payload.update(ensemble_acc=accuracy.ensemble, view_accs=accuracy.views)
        path = write_json(payload, out / DIVERSITY_REPORT_FILENAME)

        logger.info("[CMD:report_diversity] diversity=%s on %s split", report.diversity_direct, options["split"])
        self.stdout.write(f"Diversity report written to {path}")
