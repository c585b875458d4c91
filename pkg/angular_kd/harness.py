# harness.py

from __future__ import annotations

import hashlib
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Callable, Dict, Iterator, List, Sequence, Tuple

import numpy as np

from .augment import (
    AugmentedViews,
    ViewHeadSet,
    augment_views,
    build_view_heads,
    combine_ensemble,
    noise_augment_baseline,
)
from .autodiff import DiffNode, Rng, Tensor, backward, zero_grad
from .checkpoints import collect_arrays, load_checkpoint, restore_arrays, save_checkpoint
from .config import ExperimentConfig, TrainConfig, to_flat
from .constants import (
    ABLATIONS,
    LAST_GOOD_CHECKPOINT,
    NO_ABLATION,
    RUN_CHECKPOINT,
    SWEEPABLE_KEYS,
    TEACHER_CHECKPOINT,
    AugMode,
    Phase,
    Stream,
)
from .data import (
    Dataset,
    batch_iter,
    gen_benchmark,
    load_idx,
    make_imbalanced,
    one_hot,
    standardize,
    take_fraction,
)
from .diversity import DiversityReport, diversity_report
from .helper.errors import ConsistencyError, NumericError, ParameterError
from .losses import (
    AngularLossConfig,
    Level,
    LossBundle,
    augmentation_loss,
    feature_contrastive_loss,
    kd_kl_loss,
    student_ce_loss,
    total_distill_loss,
)
from .nn import (
    Mode,
    StudentBundle,
    TeacherBundle,
    build_student,
    build_teacher,
    student_forward,
    teacher_forward,
    teacher_logits,
)
from .optim import SgdState, sgd_update
from .reporting import ComparisonRow, RunMetrics, metrics_row, report_metrics

logger = logging.getLogger(__name__)

Scorer = Callable[[Tensor], Tensor]
Sink = Callable[[Dict[str, Any]], None]

# stream phase id for evaluation-only noise views
EVAL_STREAM_PHASE = 3
GAMMA_BOUNDS = {"gamma": (0.0, 1.0)}


# ============================================================================
# Run state
# ============================================================================


@dataclass
class HeadTraining:
    """View heads, the learnable margin and their optimizer state."""

    heads: ViewHeadSet
    angular: AngularLossConfig
    sgd: SgdState

    def parameters(self) -> Dict[str, DiffNode]:
        params = self.heads.named_parameters()
        params.update(self.angular.named_parameters())
        return params


@dataclass
class TeacherRun:
    teacher: TeacherBundle
    metrics: RunMetrics
    train_acc: float
    test_acc: float
    checkpoint: Path | None = None


@dataclass
class ViewAccuracy:
    ensemble: float
    teacher: float
    views: List[float] = field(default_factory=list)

    @property
    def mean_view(self) -> float | None:
        return float(np.mean(self.views)) if self.views else None


@dataclass
class RunResult:
    config: TrainConfig
    teacher: TeacherBundle
    student: StudentBundle
    training: HeadTraining | None
    metrics: RunMetrics
    summary: Dict[str, Any]


class _Averager:
    """Running per-term means over the steps of one epoch."""

    def __init__(self):
        self.sums: Dict[str, float] = {}
        self.counts: Dict[str, int] = {}
        self.gate: List[float] = []

    def add(self, bundle: LossBundle, gated: bool = False) -> None:
        for name, value in bundle.terms.items():
            self.sums[name] = self.sums.get(name, 0.0) + value
            self.counts[name] = self.counts.get(name, 0) + 1
        if gated:
            self.gate.append(bundle.gate_active_fraction)

    def means(self) -> Dict[str, float]:
        return {name: total / self.counts[name] for name, total in self.sums.items()}

    def total(self) -> float | None:
        means = self.means()
        return sum(means.values()) if means else None

    def gate_fraction(self) -> float | None:
        return float(np.mean(self.gate)) if self.gate else None


def _record(metrics: RunMetrics, sink: Sink | None, row: Dict[str, Any]) -> None:
    metrics.append(row)
    if sink is not None:
        sink(row)


def parameter_checksum(bundle) -> str:
    digest = hashlib.sha256()
    for name, param in sorted(bundle.named_parameters().items()):
        digest.update(name.encode())
        digest.update(np.ascontiguousarray(param.value).tobytes())
    return digest.hexdigest()


def _assert_unchanged(teacher: TeacherBundle, checksum: str, phase: Phase) -> None:
    if parameter_checksum(teacher) != checksum:
        raise ConsistencyError(f"teacher parameters changed during {phase}")


def training_batches(
    data: Dataset,
    batch_size: int,
    rng: Rng,
    phase: Phase,
    epoch: int,
) -> Iterator[Tuple[int, Tensor, np.ndarray]]:
    """Shuffled (step, x, y) batches; single-row tails are skipped for batch norm."""
    stream = rng.child(Stream.BATCHES, phase.stream_id, epoch)
    for step, (xb, yb) in enumerate(batch_iter(data, batch_size, stream, shuffle=True)):
        if len(yb) < 2:
            logger.debug("[FLOW:%s] skipping single-sample batch at epoch %d", phase.upper(), epoch)
            continue
        yield step, xb, yb


# ============================================================================
# Evaluation
# ============================================================================


def teacher_scores(teacher: TeacherBundle) -> Scorer:
    return lambda x: teacher_forward(teacher, x)[1].value


def student_scores(student: StudentBundle) -> Scorer:
    return lambda x: student_forward(student, x).probs.value


def _eval_views(
    teacher: TeacherBundle,
    F_T: Tensor,
    training: HeadTraining | None,
    cfg: TrainConfig | None,
    rng: Rng | None,
) -> AugmentedViews:
    if training is not None and len(training.heads):
        return augment_views(training.heads, F_T, Mode.EVAL)
    if cfg is not None and cfg.aug_mode is AugMode.NOISE and rng is not None:
        return noise_augment_baseline(
            teacher, F_T, cfg.n_views, cfg.noise_sigma, rng.child(Stream.NOISE, EVAL_STREAM_PHASE)
        )
    return AugmentedViews()


def ensemble_scores(
    teacher: TeacherBundle,
    heads: ViewHeadSet,
    weights: Sequence[float] | None = None,
) -> Scorer:
    def score(x: Tensor) -> Tensor:
        features, probs = teacher_forward(teacher, x)
        views = augment_views(heads, features.value, Mode.EVAL) if len(heads) else AugmentedViews()
        return combine_ensemble(probs, features, views, weights or None).logit_ensemble

    return score


def evaluate_top1(model: Scorer | TeacherBundle | StudentBundle, data: Dataset, batch_size: int = 256) -> float:
    """Top-1 accuracy; ties resolve to the lowest class index."""
    if len(data) == 0:
        raise ParameterError("cannot evaluate on an empty dataset")
    if isinstance(model, TeacherBundle):
        model = teacher_scores(model)
    elif isinstance(model, StudentBundle):
        model = student_scores(model)
    correct = 0
    for xb, yb in batch_iter(data, batch_size):
        correct += int(np.sum(np.argmax(model(xb), axis=1) == yb))
    return correct / len(data)


def _eval_pass(
    teacher: TeacherBundle,
    data: Dataset,
    training: HeadTraining | None,
    cfg: TrainConfig | None = None,
    rng: Rng | None = None,
) -> Tuple[Tensor, Tensor, AugmentedViews]:
    features, probs = teacher_forward(teacher, data.features)
    views = _eval_views(teacher, features.value, training, cfg, rng)
    return features.value, probs.value, views


def _accuracy(probs: Tensor, labels: np.ndarray) -> float:
    return float(np.mean(np.argmax(probs, axis=1) == labels))


def evaluate_views(
    teacher: TeacherBundle,
    heads: ViewHeadSet,
    data: Dataset,
    weights: Sequence[float] | None = None,
) -> ViewAccuracy:
    """Accuracy of the ensemble, the teacher alone and each augmented view."""
    if len(data) == 0:
        raise ParameterError("cannot evaluate on an empty dataset")
    features, probs = teacher_forward(teacher, data.features)
    views = augment_views(heads, features.value, Mode.EVAL) if len(heads) else AugmentedViews()
    ensemble = combine_ensemble(probs, features, views, weights or None)
    return ViewAccuracy(
        ensemble=_accuracy(ensemble.logit_ensemble, data.labels),
        teacher=_accuracy(probs.value, data.labels),
        views=[_accuracy(view.value, data.labels) for view in views.logits],
    )


def evaluate_diversity(
    teacher: TeacherBundle,
    data: Dataset,
    training: HeadTraining | None,
    cfg: TrainConfig | None = None,
    rng: Rng | None = None,
) -> DiversityReport:
    _, probs, views = _eval_pass(teacher, data, training, cfg, rng)
    view_probs = np.stack([view.value for view in views.logits]) if len(views) else np.empty((0, *probs.shape))
    return diversity_report(probs, view_probs, data.labels, data.num_classes)


# ============================================================================
# Flows
# ============================================================================


class DataFlow:
    @staticmethod
    def load(exp: ExperimentConfig) -> Tuple[Dataset, Dataset]:
        """Train/test pair with the configured subsetting protocol and scaling."""
        data_cfg = exp.data
        if data_cfg.data_source == "idx":
            train = load_idx(data_cfg.idx_train_images, data_cfg.idx_train_labels, name="idx-train")
            test = load_idx(
                data_cfg.idx_test_images, data_cfg.idx_test_labels, train.num_classes, name="idx-test"
            )
        else:
            train, test = gen_benchmark(exp.synthetic)
        if data_cfg.imbalance_classes:
            train = make_imbalanced(train, data_cfg.imbalance_classes, data_cfg.imbalance_cap)
        if data_cfg.train_fraction < 1.0:
            train = take_fraction(train, data_cfg.train_fraction)
        if data_cfg.standardize:
            train, test = standardize(train, test)
        logger.info("[DATA] Prepared %s: %d train / %d test samples", train.name, len(train), len(test))
        return train, test


class TeacherFlow:
    @staticmethod
    def build(cfg: TrainConfig, train: Dataset) -> TeacherBundle:
        return build_teacher(
            train.input_dim,
            cfg.teacher_hidden,
            cfg.teacher_dim,
            train.num_classes,
            cfg.tau_Z,
            Rng(cfg.seed).child(Stream.TEACHER_INIT),
        )

    @staticmethod
    def restore(cfg: TrainConfig, train: Dataset, path: str | Path) -> TeacherBundle:
        """Frozen teacher rebuilt for ``cfg`` with weights read from a checkpoint."""
        teacher = TeacherFlow.build(cfg, train)
        restore_arrays([teacher], load_checkpoint(path))
        teacher.freeze()
        logger.info("[FLOW:TEACHER] restored teacher from %s", path)
        return teacher

    @staticmethod
    def pretrain(
        cfg: TrainConfig,
        train: Dataset,
        test: Dataset,
        *,
        metrics: RunMetrics | None = None,
        sink: Sink | None = None,
        output_dir: Path | None = None,
    ) -> TeacherRun:
        rng = Rng(cfg.seed)
        metrics = metrics if metrics is not None else RunMetrics()
        teacher = TeacherFlow.build(cfg, train)
        params = teacher.named_parameters()
        sgd = SgdState.from_config(cfg)

        train_acc = test_acc = 0.0
        for epoch in range(cfg.teacher_epochs):
            averager = _Averager()
            for _, xb, yb in training_batches(train, cfg.batch_size, rng, Phase.TEACHER, epoch):
                zero_grad(params.values())
                _, logits = teacher_logits(teacher, xb)
                loss = student_ce_loss(yb, logits)
                backward(loss)
                sgd_update(params, sgd, epoch)
                averager.add(LossBundle(loss, {"student_ce": loss.item()}))

            train_acc = evaluate_top1(teacher, train)
            test_acc = evaluate_top1(teacher, test)
            _record(
                metrics,
                sink,
                metrics_row(
                    epoch,
                    Phase.TEACHER,
                    lr=sgd.current_lr,
                    loss_total=averager.total(),
                    student_ce=averager.means().get("student_ce"),
                    train_acc=train_acc,
                    test_acc=test_acc,
                ),
            )
            logger.info(
                "[FLOW:TEACHER] epoch %d/%d loss=%.4f train=%.4f test=%.4f",
                epoch + 1,
                cfg.teacher_epochs,
                averager.total() or 0.0,
                train_acc,
                test_acc,
            )

        checkpoint = None
        if output_dir is not None:
            checkpoint = save_checkpoint(
                [teacher],
                Path(output_dir) / TEACHER_CHECKPOINT,
                config=to_flat(ExperimentConfig(train=cfg)),
                rng_state=rng.state(),
            )
        logger.info("[FLOW:TEACHER] finished: train=%.4f test=%.4f", train_acc, test_acc)
        return TeacherRun(teacher, metrics, train_acc, test_acc, checkpoint)


class HeadFlow:
    @staticmethod
    def build(cfg: TrainConfig, teacher: TeacherBundle) -> HeadTraining:
        heads = build_view_heads(
            cfg.n_views,
            teacher.feature_dim,
            teacher.num_classes,
            cfg.head_dropout_probs(),
            cfg.tau_Z,
            Rng(cfg.seed).child(Stream.HEAD_INIT),
            orthogonal=cfg.orthogonal_init,
        )
        angular = AngularLossConfig.create(
            cfg.gamma_init,
            contrastive_temperature=cfg.tau_C,
            level=cfg.level,
            use_constraint=cfg.use_constraint,
            use_diversity=cfg.use_diversity,
        )
        return HeadTraining(heads, angular, SgdState.from_config(cfg))

    @staticmethod
    def step(
        teacher: TeacherBundle,
        training: HeadTraining,
        cfg: TrainConfig,
        xb: Tensor,
        yb: np.ndarray,
        epoch: int,
        rng: Rng,
    ) -> Tuple[Tensor, Tensor, AugmentedViews, LossBundle]:
        """One head + margin update on a batch; returns the detached teacher reps and views."""
        features, probs = teacher_forward(teacher, xb)
        views = augment_views(training.heads, features.value, Mode.TRAIN, rng)
        bundle = augmentation_loss(
            features.value,
            probs.value,
            views,
            one_hot(yb, teacher.num_classes),
            training.angular,
            use_inter=cfg.use_inter,
            use_intra=cfg.use_intra,
        )
        params = training.parameters()
        zero_grad(params.values())
        backward(bundle.total)
        sgd_update(params, training.sgd, epoch, bounds=GAMMA_BOUNDS)
        return features.value, probs.value, views, bundle

    @staticmethod
    def warmup(
        teacher: TeacherBundle,
        training: HeadTraining,
        cfg: TrainConfig,
        train: Dataset,
        test: Dataset,
        *,
        metrics: RunMetrics | None = None,
        sink: Sink | None = None,
    ) -> ViewHeadSet:
        if not teacher.frozen:
            raise ParameterError("warm-up needs a frozen teacher")
        rng = Rng(cfg.seed)
        metrics = metrics if metrics is not None else RunMetrics()
        checksum = parameter_checksum(teacher)

        for epoch in range(cfg.warmup_epochs):
            averager = _Averager()
            for step, xb, yb in training_batches(train, cfg.batch_size, rng, Phase.WARMUP, epoch):
                dropout_rng = rng.child(Stream.DROPOUT, Phase.WARMUP.stream_id, epoch, step)
                *_, bundle = HeadFlow.step(teacher, training, cfg, xb, yb, epoch, dropout_rng)
                averager.add(bundle, gated=True)

            accuracy = evaluate_views(teacher, training.heads, test, cfg.ensemble_weights)
            report = evaluate_diversity(teacher, test, training)
            _record(
                metrics,
                sink,
                metrics_row(
                    epoch,
                    Phase.WARMUP,
                    lr=training.sgd.current_lr,
                    loss_total=averager.total(),
                    ensemble_acc=accuracy.ensemble,
                    gamma=training.angular.gamma,
                    gate_active_fraction=averager.gate_fraction(),
                    **averager.means(),
                    **report_metrics(report),
                ),
            )
            logger.info(
                "[FLOW:WARMUP] epoch %d/%d loss=%.4f ensemble=%.4f gamma=%.4f gate=%.3f",
                epoch + 1,
                cfg.warmup_epochs,
                averager.total() or 0.0,
                accuracy.ensemble,
                training.angular.gamma,
                averager.gate_fraction() or 0.0,
            )

        _assert_unchanged(teacher, checksum, Phase.WARMUP)
        return training.heads


class DistillFlow:
    @staticmethod
    def step(
        student: StudentBundle,
        sgd: SgdState,
        ensemble,
        xb: Tensor,
        yb: np.ndarray,
        cfg: TrainConfig,
        epoch: int,
    ) -> LossBundle:
        """Student update against gradient-stopped ensemble targets."""
        out = student_forward(student, xb)
        levels = cfg.distill_level.levels()
        feat = (
            feature_contrastive_loss(ensemble.feature_ensemble, out.projected, cfg.tau_feat)
            if Level.FEATURE in levels
            else None
        )
        logit = kd_kl_loss(ensemble.logit_ensemble, out.logits, cfg.tau_Z) if Level.LOGIT in levels else None
        bundle = total_distill_loss(feat, logit, student_ce_loss(yb, out.logits), cfg.distill_level)
        params = student.named_parameters()
        zero_grad(params.values())
        backward(bundle.total)
        sgd_update(params, sgd, epoch)
        return bundle

    @staticmethod
    def _bundles(teacher, student, training):
        bundles = [teacher, student]
        if training is not None:
            bundles.extend([training.heads, training.angular])
        return bundles

    @staticmethod
    def run(
        teacher: TeacherBundle,
        training: HeadTraining | None,
        student: StudentBundle,
        cfg: TrainConfig,
        train: Dataset,
        test: Dataset,
        *,
        metrics: RunMetrics | None = None,
        sink: Sink | None = None,
        output_dir: Path | None = None,
    ) -> StudentBundle:
        if not teacher.frozen:
            raise ParameterError("distillation needs a frozen teacher")
        rng = Rng(cfg.seed)
        metrics = metrics if metrics is not None else RunMetrics()
        student_sgd = SgdState.from_config(cfg)
        checksum = parameter_checksum(teacher)
        bundles = DistillFlow._bundles(teacher, student, training)
        last_good = collect_arrays(bundles)

        epoch = cfg.warmup_epochs
        try:
            for epoch in range(cfg.warmup_epochs, cfg.epochs):
                averager = _Averager()
                for step, xb, yb in training_batches(train, cfg.batch_size, rng, Phase.DISTILL, epoch):
                    if training is not None:
                        dropout_rng = rng.child(Stream.DROPOUT, Phase.DISTILL.stream_id, epoch, step)
                        features, probs, views, aug = HeadFlow.step(
                            teacher, training, cfg, xb, yb, epoch, dropout_rng
                        )
                        averager.add(aug, gated=True)
                    else:
                        features_node, probs_node = teacher_forward(teacher, xb)
                        features, probs = features_node.value, probs_node.value
                        views = AugmentedViews()
                        if cfg.aug_mode is AugMode.NOISE:
                            noise_rng = rng.child(Stream.NOISE, Phase.DISTILL.stream_id, epoch, step)
                            views = noise_augment_baseline(teacher, features, cfg.n_views, cfg.noise_sigma, noise_rng)
                    weights = cfg.ensemble_weights if len(views) else None
                    ensemble = combine_ensemble(probs, features, views, weights)
                    averager.add(DistillFlow.step(student, student_sgd, ensemble, xb, yb, cfg, epoch))

                row = DistillFlow._epoch_row(teacher, student, training, cfg, train, test, rng, epoch, averager)
                row["lr"] = student_sgd.current_lr
                _record(metrics, sink, row)
                logger.info(
                    "[FLOW:DISTILL] epoch %d/%d loss=%.4f train=%.4f test=%.4f ensemble=%s gamma=%s",
                    epoch + 1,
                    cfg.epochs,
                    row["loss_total"] or 0.0,
                    row["train_acc"],
                    row["test_acc"],
                    row["ensemble_acc"],
                    row["gamma"],
                )
                last_good = collect_arrays(bundles)
        except NumericError as exc:
            saved = None
            if output_dir is not None:
                saved = save_checkpoint(
                    last_good,
                    Path(output_dir) / LAST_GOOD_CHECKPOINT,
                    config=to_flat(ExperimentConfig(train=cfg)),
                )
            logger.error("[FLOW:DISTILL] diverged at epoch %d: %s", epoch, exc.message)
            raise NumericError(
                f"distillation diverged at epoch {epoch}: {exc.message}",
                details={"checkpoint": str(saved) if saved else None},
            ) from exc

        _assert_unchanged(teacher, checksum, Phase.DISTILL)
        return student

    @staticmethod
    def _epoch_row(teacher, student, training, cfg, train, test, rng, epoch, averager) -> Dict[str, Any]:
        ensemble_acc = None
        if training is not None:
            ensemble_acc = evaluate_views(teacher, training.heads, test, cfg.ensemble_weights).ensemble
        elif cfg.aug_mode is AugMode.NONE:
            ensemble_acc = evaluate_top1(teacher, test)
        report = evaluate_diversity(teacher, test, training, cfg, rng)
        return metrics_row(
            epoch,
            Phase.DISTILL,
            loss_total=averager.total(),
            train_acc=evaluate_top1(student, train),
            test_acc=evaluate_top1(student, test),
            ensemble_acc=ensemble_acc,
            gamma=training.angular.gamma if training is not None else None,
            gate_active_fraction=averager.gate_fraction(),
            **averager.means(),
            **report_metrics(report),
        )


# ============================================================================
# Pipelines
# ============================================================================


def _build_student(cfg: TrainConfig, train: Dataset, teacher: TeacherBundle) -> StudentBundle:
    return build_student(
        train.input_dim,
        cfg.student_hidden,
        cfg.student_dim,
        teacher.feature_dim,
        train.num_classes,
        cfg.tau_Z,
        Rng(cfg.seed).child(Stream.STUDENT_INIT),
    )


def restore_run(
    cfg: TrainConfig, train: Dataset, path: str | Path
) -> Tuple[TeacherBundle, HeadTraining | None, StudentBundle]:
    """Teacher, heads and student of a finished run, rebuilt from its checkpoint."""
    teacher = TeacherFlow.build(cfg, train)
    training = HeadFlow.build(cfg, teacher) if cfg.uses_heads else None
    student = _build_student(cfg, train, teacher)
    restore_arrays(DistillFlow._bundles(teacher, student, training), load_checkpoint(path))
    teacher.freeze()
    return teacher, training, student


def run_pipeline(
    cfg: TrainConfig,
    train: Dataset,
    test: Dataset,
    *,
    teacher: TeacherBundle | None = None,
    sink: Sink | None = None,
    output_dir: Path | None = None,
) -> RunResult:
    """Teacher pretraining (unless given), head warm-up, then joint distillation."""
    metrics = RunMetrics()
    if teacher is None:
        teacher = TeacherFlow.pretrain(cfg, train, test, metrics=metrics, sink=sink, output_dir=output_dir).teacher
    teacher.freeze()

    training = None
    initial_report = None
    if cfg.uses_heads:
        training = HeadFlow.build(cfg, teacher)
        initial_report = evaluate_diversity(teacher, test, training)
        HeadFlow.warmup(teacher, training, cfg, train, test, metrics=metrics, sink=sink)
    warmed_report = evaluate_diversity(teacher, test, training) if training is not None else None

    student = _build_student(cfg, train, teacher)
    DistillFlow.run(teacher, training, student, cfg, train, test, metrics=metrics, sink=sink, output_dir=output_dir)

    summary = _summarize_run(cfg, teacher, student, training, test, metrics)
    if initial_report is not None:
        summary["warmup_angles"] = {
            "initial_inter_deg": initial_report.mean_inter_angle_deg,
            "initial_intra_deg": initial_report.mean_intra_angle_deg,
            "warmed_inter_deg": warmed_report.mean_inter_angle_deg,
            "warmed_intra_deg": warmed_report.mean_intra_angle_deg,
        }
    if output_dir is not None:
        save_checkpoint(
            DistillFlow._bundles(teacher, student, training),
            Path(output_dir) / RUN_CHECKPOINT,
            config=to_flat(ExperimentConfig(train=cfg)),
        )
    return RunResult(cfg, teacher, student, training, metrics, summary)


def _summarize_run(cfg, teacher, student, training, test, metrics: RunMetrics) -> Dict[str, Any]:
    last = metrics.last(Phase.DISTILL) or {}
    summary: Dict[str, Any] = {
        "seed": cfg.seed,
        "aug_mode": str(cfg.aug_mode),
        "n_views": cfg.n_views if cfg.aug_mode is not AugMode.NONE else 0,
        "teacher_test_acc": evaluate_top1(teacher, test),
        "student_test_acc": evaluate_top1(student, test),
        "student_train_acc": last.get("train_acc"),
        "gate_active_fraction": last.get("gate_active_fraction"),
        "gamma": training.angular.gamma if training is not None else None,
        "diversity": evaluate_diversity(teacher, test, training, cfg, Rng(cfg.seed)).as_dict(),
    }
    if training is not None:
        accuracy = evaluate_views(teacher, training.heads, test, cfg.ensemble_weights)
        summary.update(
            ensemble_test_acc=accuracy.ensemble,
            view_test_accs=accuracy.views,
            mean_view_test_acc=accuracy.mean_view,
        )
    return summary


def _comparison_row(mode: str, ablation: str, result: RunResult) -> ComparisonRow:
    diversity = result.summary["diversity"]
    return ComparisonRow(
        mode=mode,
        ablation=ablation,
        seed=result.config.seed,
        test_acc=result.summary["student_test_acc"],
        diversity=diversity["diversity_direct"],
        mean_inter_deg=diversity["mean_inter_angle_deg"],
        mean_intra_deg=diversity["mean_intra_angle_deg"],
        gate_frac=result.summary["gate_active_fraction"],
    )


def _compare_seed(job: Tuple[TrainConfig, Dataset, Dataset, Tuple[str, ...], Tuple[str, ...], int]) -> List[ComparisonRow]:
    cfg, train, test, modes, ablations, seed = job
    seeded = replace(cfg, seed=seed)
    teacher = TeacherFlow.pretrain(seeded, train, test).teacher
    rows = []
    for mode in modes:
        for ablation in ablations if AugMode(mode) is AugMode.ANGULAR else (NO_ABLATION,):
            run_cfg = replace(seeded, aug_mode=AugMode(mode), **ABLATIONS.get(ablation, {}))
            result = run_pipeline(run_cfg, train, test, teacher=teacher)
            rows.append(_comparison_row(str(mode), ablation, result))
            logger.info(
                "[FLOW:COMPARE] seed=%d mode=%s ablation=%s student=%.4f",
                seed,
                mode,
                ablation,
                result.summary["student_test_acc"],
            )
    return rows


def _fan_out(jobs: Sequence[Any], worker: Callable[[Any], Any], workers: int) -> List[Any]:
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(worker, jobs))
    return [worker(job) for job in jobs]


def compare_experiment(
    cfg: TrainConfig,
    train: Dataset,
    test: Dataset,
    modes: Sequence[str] = ("none", "noise", "angular"),
    seeds: Sequence[int] = (0, 1),
    ablations: Sequence[str] = ("full",),
    workers: int = 1,
) -> List[ComparisonRow]:
    """One row per (seed, mode, ablation); modes none/noise carry ablation ``-``."""
    if len(seeds) < 2:
        raise ParameterError(f"compare needs at least 2 seeds, got {len(seeds)}")
    bad_modes = sorted(set(modes) - {str(mode) for mode in AugMode})
    if bad_modes:
        raise ParameterError(f"unknown modes: {', '.join(bad_modes)}")
    unknown = sorted(set(ablations) - set(ABLATIONS))
    if unknown:
        raise ParameterError(f"unknown ablations: {', '.join(unknown)}")

    logger.info("[FLOW:COMPARE] modes=%s ablations=%s seeds=%s workers=%d", list(modes), list(ablations), list(seeds), workers)
    jobs = [(cfg, train, test, tuple(modes), tuple(ablations), seed) for seed in seeds]
    return [row for rows in _fan_out(jobs, _compare_seed, workers) for row in rows]


def _sweep_seed(job: Tuple[TrainConfig, Dataset, Dataset, str, Tuple[Any, ...], int]) -> List[Dict[str, Any]]:
    cfg, train, test, key, values, seed = job
    seeded = replace(cfg, seed=seed)
    teacher = TeacherFlow.pretrain(seeded, train, test).teacher
    rows = []
    for value in values:
        if key == "n_views":
            views = int(value)
            run_cfg = replace(
                seeded,
                n_views=views,
                dropout_probs=(),
                ensemble_weights=(),
                aug_mode=AugMode.ANGULAR if views > 0 else AugMode.NONE,
            )
        else:
            run_cfg = replace(seeded, gamma_init=float(value), aug_mode=AugMode.ANGULAR)
        result = run_pipeline(run_cfg, train, test, teacher=teacher)
        rows.append(
            {
                "key": key,
                "value": value,
                "seed": seed,
                "test_acc": result.summary["student_test_acc"],
                "diversity": result.summary["diversity"]["diversity_direct"],
            }
        )
        logger.info("[FLOW:COMPARE] sweep %s=%s seed=%d student=%.4f", key, value, seed, rows[-1]["test_acc"])
    return rows


def sweep_experiment(
    cfg: TrainConfig,
    train: Dataset,
    test: Dataset,
    key: str,
    values: Sequence[Any],
    seeds: Sequence[int],
    workers: int = 1,
) -> List[Dict[str, Any]]:
    """Angular pipeline rerun per value of ``gamma_init`` or ``n_views``."""
    if key not in SWEEPABLE_KEYS:
        raise ParameterError(f"cannot sweep {key}; choose one of {', '.join(SWEEPABLE_KEYS)}")
    if not values or not seeds:
        raise ParameterError("sweep needs at least one value and one seed")
    jobs = [(cfg, train, test, key, tuple(values), seed) for seed in seeds]
    rows = [row for group in _fan_out(jobs, _sweep_seed, workers) for row in group]
    order = {value: idx for idx, value in enumerate(values)}
    return sorted(rows, key=lambda row: (order[row["value"]], row["seed"]))


# module-level names for the flows
pretrain_teacher = TeacherFlow.pretrain
warmup_heads = HeadFlow.warmup
run_distillation = DistillFlow.run
load_experiment_data = DataFlow.load
