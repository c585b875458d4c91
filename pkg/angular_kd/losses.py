# losses.py

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from .constants import StrEnum
from typing import Dict, List, Mapping, Sequence, Tuple

import numpy as np

from .autodiff import (
    NORM_EPS,
    DiffNode,
    Tensor,
    add,
    as_tensor,
    broadcast_to,
    clamp_min,
    constant,
    cosine_matrix,
    diagonal,
    log,
    log_softmax_with_temperature,
    logsumexp,
    minimum,
    mul,
    parameter,
    reduce_mean,
    reduce_sum,
    reshape,
    row_cosine,
    scale,
    sub,
)
from .data import one_hot
from .helper.errors import LabelError, NumericError, ParameterError, ShapeError

logger = logging.getLogger(__name__)


class Level(StrEnum):
    FEATURE = "feature"
    LOGIT = "logit"
    BOTH = "both"

    def levels(self) -> Tuple[Level, ...]:
        if self is Level.BOTH:
            return (Level.FEATURE, Level.LOGIT)
        return (self,)


# ============================================================================
# Types
# ============================================================================


@dataclass
class AngularLossConfig:
    margin_gamma: DiffNode
    contrastive_temperature: float = 0.07
    level: Level = Level.BOTH
    epsilon: float = NORM_EPS
    use_constraint: bool = True
    use_diversity: bool = True

    def __post_init__(self):
        if not self.contrastive_temperature > 0:
            raise ParameterError(
                f"contrastive temperature must be positive, got {self.contrastive_temperature}"
            )
        if self.margin_gamma.size != 1:
            raise ShapeError(f"margin gamma must be a scalar, got shape {self.margin_gamma.shape}")
        self.level = Level(self.level)

    @classmethod
    def create(cls, gamma_init: float = 0.2, **kwargs) -> AngularLossConfig:
        if not 0.0 <= gamma_init <= 1.0:
            raise ParameterError(f"gamma_init must be in [0, 1], got {gamma_init}")
        return cls(margin_gamma=parameter(np.array(gamma_init)), **kwargs)

    @property
    def gamma(self) -> float:
        return self.margin_gamma.item()

    def clamp_margin(self) -> None:
        np.clip(self.margin_gamma.value, 0.0, 1.0, out=self.margin_gamma.value)

    def named_parameters(self) -> Dict[str, DiffNode]:
        return {"gamma": self.margin_gamma}

    def named_buffers(self) -> Dict[str, Tensor]:
        return {}


@dataclass
class InterAngleResult:
    constraint: DiffNode
    diversity: DiffNode
    gate_active_fraction: float

    @property
    def loss(self) -> DiffNode:
        return add(self.constraint, self.diversity)


@dataclass
class OffsetSet:
    offsets: List[DiffNode]

    def __len__(self) -> int:
        return len(self.offsets)

    @property
    def width(self) -> int:
        return self.offsets[0].shape[1] if self.offsets else 0


@dataclass
class LossBundle:
    total: DiffNode
    terms: Dict[str, float] = field(default_factory=dict)
    gate_active_fraction: float = 0.0

    @property
    def value(self) -> float:
        return self.total.item()


def _sum(nodes: Sequence[DiffNode]) -> DiffNode:
    total = nodes[0]
    for node in nodes[1:]:
        total = add(total, node)
    return total


def _check_views(anchor: DiffNode, views: Sequence[DiffNode]) -> None:
    if not views:
        raise ParameterError("angular losses need at least one view")
    if anchor.ndim != 2:
        raise ShapeError(f"anchor must be [B x d], got shape {anchor.shape}")
    for view in views:
        if view.shape != anchor.shape:
            raise ShapeError(f"view shape {view.shape} does not match anchor {anchor.shape}")


# ============================================================================
# Augmentation losses
# ============================================================================


def inter_angle_loss(
    anchor: DiffNode,
    views: Sequence[DiffNode],
    cfg: AngularLossConfig,
) -> InterAngleResult:
    """Margin-constrained contrastive term plus gated pairwise view cosine.

    Negatives for view ``i`` of sample ``b`` are view ``i`` of every other sample.
    """
    _check_views(anchor, views)
    batch = anchor.shape[0]
    tau = cfg.contrastive_temperature
    eye = np.eye(batch)

    positives: List[Tensor] = []
    constraint_rows: List[DiffNode] = []
    gamma_row = broadcast_to(cfg.margin_gamma, (batch,))
    ones = constant(np.ones(batch))
    for view in views:
        sims = cosine_matrix(anchor, view, cfg.epsilon)
        positive = diagonal(sims)
        positives.append(positive.value)
        if not cfg.use_constraint:
            continue
        clipped = minimum(ones, add(gamma_row, positive))
        clipped_diag = mul(broadcast_to(reshape(clipped, (batch, 1)), (batch, batch)), constant(eye))
        logits = scale(add(mul(sims, constant(1.0 - eye)), clipped_diag), 1.0 / tau)
        constraint_rows.append(sub(logsumexp(logits, axis=1), scale(clipped, 1.0 / tau)))

    # per-sample hard gate: every view within the margin
    gate = np.all(cfg.gamma + np.stack(positives) >= 1.0, axis=0)

    constraint = reduce_mean(_sum(constraint_rows)) if constraint_rows else constant(0.0)
    diversity = constant(0.0)
    if cfg.use_diversity and len(views) > 1:
        pairs = [
            row_cosine(views[i], views[j], cfg.epsilon)
            for i in range(len(views))
            for j in range(i + 1, len(views))
        ]
        gated = mul(scale(_sum(pairs), 2.0), constant(gate.astype(np.float64)))
        diversity = reduce_mean(gated)
    return InterAngleResult(constraint, diversity, float(gate.mean()))


def compute_offsets(anchor: DiffNode, views: Sequence[DiffNode]) -> OffsetSet:
    _check_views(anchor, views)
    return OffsetSet([sub(anchor, view) for view in views])


def intra_angle_loss(
    anchor: DiffNode,
    views: Sequence[DiffNode],
    eps: float = NORM_EPS,
) -> DiffNode:
    offsets = compute_offsets(anchor, views).offsets
    if len(offsets) < 2:
        return constant(0.0)
    norms = [np.linalg.norm(delta.value, axis=1) for delta in offsets]
    pairs = []
    for i in range(len(offsets)):
        for j in range(i + 1, len(offsets)):
            valid = ((norms[i] >= eps) & (norms[j] >= eps)).astype(np.float64)
            pairs.append(mul(row_cosine(offsets[i], offsets[j], eps), constant(valid)))
    # unordered pairs counted twice for the ordered-pair sum
    return reduce_mean(scale(_sum(pairs), 2.0))


def _check_one_hot(y: Tensor) -> None:
    if y.ndim != 2:
        raise LabelError(f"targets must be one-hot [B x C], got shape {y.shape}")
    binary = np.all((y == 0.0) | (y == 1.0))
    if not binary or not np.all(y.sum(axis=1) == 1.0):
        raise LabelError("targets are not one-hot")


def aug_gt_loss(
    y_onehot: Tensor,
    view_logits: Sequence[DiffNode],
    eps: float = NORM_EPS,
) -> DiffNode:
    y = as_tensor(y_onehot)
    _check_one_hot(y)
    if not view_logits:
        return constant(0.0)
    target = constant(y)
    terms = []
    for probs in view_logits:
        if probs.shape != y.shape:
            raise ShapeError(f"view logits {probs.shape} do not match targets {y.shape}")
        terms.append(scale(reduce_sum(mul(target, log(clamp_min(probs, eps)))), -1.0 / y.shape[0]))
    return _sum(terms)


def _bundle(named: Mapping[str, DiffNode | None], gate_active_fraction: float = 0.0) -> LossBundle:
    active = {name: node for name, node in named.items() if node is not None}
    for name, node in active.items():
        if not np.all(np.isfinite(node.value)):
            raise NumericError(f"loss term {name} is not finite", details={"term": name})
    total = _sum(list(active.values())) if active else constant(0.0)
    return LossBundle(
        total=total,
        terms={name: node.item() for name, node in active.items()},
        gate_active_fraction=gate_active_fraction,
    )


def total_aug_loss(
    inter: InterAngleResult | None,
    intra: DiffNode | None,
    gt: DiffNode | None,
) -> LossBundle:
    return _bundle(
        {
            "inter_constraint": inter.constraint if inter is not None else None,
            "inter_diversity": inter.diversity if inter is not None else None,
            "intra": intra,
            "aug_gt": gt,
        },
        gate_active_fraction=inter.gate_active_fraction if inter is not None else 0.0,
    )


def augmentation_loss(
    teacher_features: Tensor,
    teacher_probs: Tensor,
    views,
    y_onehot: Tensor,
    cfg: AngularLossConfig,
    *,
    use_inter: bool = True,
    use_intra: bool = True,
) -> LossBundle:
    """Full head objective at the configured level(s); teacher reps are constants."""
    representations = {
        Level.FEATURE: (constant(teacher_features), views.features),
        Level.LOGIT: (constant(teacher_probs), views.logits),
    }
    inter_results: List[InterAngleResult] = []
    intra_terms: List[DiffNode] = []
    for level in cfg.level.levels():
        anchor, view_reps = representations[level]
        if use_inter:
            inter_results.append(inter_angle_loss(anchor, view_reps, cfg))
        if use_intra:
            intra_terms.append(intra_angle_loss(anchor, view_reps, cfg.epsilon))

    inter = None
    if inter_results:
        inter = InterAngleResult(
            constraint=_sum([result.constraint for result in inter_results]),
            diversity=_sum([result.diversity for result in inter_results]),
            gate_active_fraction=float(np.mean([r.gate_active_fraction for r in inter_results])),
        )
    intra = _sum(intra_terms) if intra_terms else None
    return total_aug_loss(inter, intra, aug_gt_loss(y_onehot, views.logits, cfg.epsilon))


# ============================================================================
# Distillation losses
# ============================================================================


def kd_kl_loss(
    Z_E: Tensor,
    student_raw_logits: DiffNode,
    tau: float,
    eps: float = NORM_EPS,
) -> DiffNode:
    if not tau > 0:
        raise ParameterError(f"KD temperature must be positive, got {tau}")
    target = as_tensor(Z_E)
    if target.shape != student_raw_logits.shape:
        raise ShapeError(f"ensemble targets {target.shape} vs student logits {student_raw_logits.shape}")
    log_student = log_softmax_with_temperature(student_raw_logits, tau, axis=1)
    target_log = constant(np.log(np.maximum(target, eps)))
    kl_sum = reduce_sum(mul(constant(target), sub(target_log, log_student)))
    return scale(kl_sum, tau * tau / target.shape[0])


def feature_contrastive_loss(
    F_E: Tensor,
    F_S_projected: DiffNode,
    tau_feat: float,
    eps: float = NORM_EPS,
) -> DiffNode:
    if not tau_feat > 0:
        raise ParameterError(f"feature temperature must be positive, got {tau_feat}")
    targets = as_tensor(F_E)
    if targets.shape != F_S_projected.shape:
        raise ShapeError(f"ensemble features {targets.shape} vs projected student {F_S_projected.shape}")
    logits = scale(cosine_matrix(F_S_projected, constant(targets), eps), 1.0 / tau_feat)
    return reduce_mean(sub(logsumexp(logits, axis=1), diagonal(logits)))


def student_ce_loss(labels, student_raw_logits: DiffNode) -> DiffNode:
    if student_raw_logits.ndim != 2:
        raise ShapeError(f"student logits must be [B x C], got shape {student_raw_logits.shape}")
    batch, num_classes = student_raw_logits.shape
    target = one_hot(labels, num_classes)
    if target.shape[0] != batch:
        raise ShapeError(f"{target.shape[0]} labels for {batch} logit rows")
    log_probs = log_softmax_with_temperature(student_raw_logits, 1.0, axis=1)
    return scale(reduce_sum(mul(constant(target), log_probs)), -1.0 / batch)


def total_distill_loss(
    feat: DiffNode | None,
    logit: DiffNode | None,
    gt: DiffNode,
    level: Level = Level.BOTH,
) -> LossBundle:
    enabled = Level(level).levels()
    return _bundle(
        {
            "feat_contrastive": feat if Level.FEATURE in enabled else None,
            "kd_kl": logit if Level.LOGIT in enabled else None,
            "student_ce": gt,
        }
    )
