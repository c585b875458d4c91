# constants.py

from enum import Enum, IntEnum

try:
    from enum import StrEnum
except ImportError:  # Python < 3.11
    class StrEnum(str, Enum):
        """Backport of ``enum.StrEnum``: ``str()`` and ``format()`` give the value."""

        __str__ = str.__str__
        __format__ = str.__format__


# ============================================================================
# Random stream keys
# ============================================================================


class Stream(IntEnum):
    """First key of every ``Rng.child`` path derived from the root seed."""

    DATA = 0
    TEACHER_INIT = 1
    HEAD_INIT = 2
    STUDENT_INIT = 3
    BATCHES = 4
    DROPOUT = 5
    NOISE = 6
    THEORY = 7


class Phase(StrEnum):
    TEACHER = "teacher"
    WARMUP = "warmup"
    DISTILL = "distill"

    @property
    def stream_id(self) -> int:
        return _PHASE_IDS[self]


_PHASE_IDS = {Phase.TEACHER: 0, Phase.WARMUP: 1, Phase.DISTILL: 2}


class AugMode(StrEnum):
    NONE = "none"
    NOISE = "noise"
    ANGULAR = "angular"


# ============================================================================
# File formats
# ============================================================================

IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801

CHECKPOINT_HEADER = "angular-kd-checkpoint"
CHECKPOINT_FORMAT_VERSION = 1

CONFIG_FILENAME = "config.env"
METRICS_FILENAME = "metrics.jsonl"
METRICS_CSV_FILENAME = "metrics.csv"
SUMMARY_FILENAME = "summary.json"
COMPARISON_FILENAME = "comparison.csv"
COMPARISON_SUMMARY_FILENAME = "summary.csv"
SWEEP_FILENAME = "sweep.csv"
THEORY_REPORT_FILENAME = "theory_report.json"
DIVERSITY_REPORT_FILENAME = "diversity_report.json"
TEACHER_CHECKPOINT = "teacher.ckpt"
RUN_CHECKPOINT = "run.ckpt"
LAST_GOOD_CHECKPOINT = "last_good.ckpt"
TRAIN_DATA_FILENAME = "train.npz"
TEST_DATA_FILENAME = "test.npz"


# ============================================================================
# Experiment vocabulary
# ============================================================================

# TrainConfig overrides applied for each named ablation.
ABLATIONS = {
    "full": {},
    "no_inter": {"use_inter": False},
    "no_intra": {"use_intra": False},
    "gt_only": {"use_inter": False, "use_intra": False},
    "no_constraint": {"use_constraint": False},
    "no_diversity": {"use_diversity": False},
    "no_orth_init": {"orthogonal_init": False},
    "no_dropout": {"head_dropout": False},
}
NO_ABLATION = "-"

SWEEPABLE_KEYS = ("gamma_init", "n_views")
