import logging
from dataclasses import replace

from ...constants import TEST_DATA_FILENAME, TRAIN_DATA_FILENAME
from ...data import save_dataset
from ...harness import load_experiment_data
from ...helper.command_helper import handle_command_errors
from ..base import ExperimentCommand

logger = logging.getLogger(__name__)


class Command(ExperimentCommand):
    help = "Build the train/test datasets (synthetic or IDX, with subsetting) and save them as .npz"
    output_name = "data"

    @handle_command_errors("Failed to generate data")
    def handle(self, *args, **options):
        exp = self.load_experiment(options)
        if options["seed"] is not None:
            exp = replace(exp, synthetic=replace(exp.synthetic, seed=options["seed"]))
        out = self.output_dir(options)

        train, test = load_experiment_data(exp)
        save_dataset(train, out / TRAIN_DATA_FILENAME)
        save_dataset(test, out / TEST_DATA_FILENAME)
        self.save_experiment(exp, out)

        logger.info("[CMD:gen_data] wrote %s (%d) and %s (%d) to %s", train.name, len(train), test.name, len(test), out)
        self.stdout.write(f"Wrote {len(train)} train and {len(test)} test samples to {out}")
