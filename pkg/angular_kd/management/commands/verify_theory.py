import logging

from ...constants import THEORY_REPORT_FILENAME
from ...helper.command_helper import handle_command_errors
from ...helper.errors import DomainError
from ...reporting import write_json
from ...theory import verify_theory
from ..base import ExperimentCommand

logger = logging.getLogger(__name__)


class Command(ExperimentCommand):
    help = "Check the diversity identities, the ensemble KL bound and the monotone link numerically"
    uses_config = False
    output_name = "theory"

    def add_command_arguments(self, parser):
        parser.add_argument("--trials", type=int, default=1000)
        parser.add_argument(
            "--corrupt-intra-convention",
            action="store_true",
            help="Include diagonal pairs in the intra form (negative control; expected to fail)",
        )

    @handle_command_errors("Failed to verify theory")
    def handle(self, *args, **options):
        seed = options["seed"] if options["seed"] is not None else 0
        out = self.output_dir(options)
        report = verify_theory(options["trials"], seed, options["corrupt_intra_convention"])
        path = write_json(report.as_dict(), out / THEORY_REPORT_FILENAME)

        if not report.passed:
            raise DomainError(f"theory checks failed: {', '.join(report.failures)}", details=str(path))
        logger.info("[CMD:verify_theory] all checks passed over %d trials", report.trials)
        self.stdout.write(
            f"Identity deviation {max(report.max_identity_a_deviation, report.max_identity_b_deviation):.3e}, "
            f"min bound slack {report.min_bound_slack:.3e}; report {path}"
        )
