# augment.py

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Dict, Iterator, List, Sequence

import numpy as np

from .autodiff import DiffNode, Rng, Tensor, as_tensor, constant, parameter, softmax_with_temperature
from .helper.errors import ParameterError, ShapeError
from .nn import (
    BatchNormState,
    LinearLayer,
    Mode,
    TeacherBundle,
    batchnorm_forward,
    dropout_forward,
    gaussian_init,
    orthogonal_init,
)

logger = logging.getLogger(__name__)


def _values(x: Tensor | DiffNode) -> Tensor:
    return x.value if isinstance(x, DiffNode) else as_tensor(x)


@dataclass
class ViewHead:
    index: int
    dropout_prob: float
    feature_linear: LinearLayer
    bn: BatchNormState
    logit_linear: LinearLayer

    def named_parameters(self, prefix: str) -> Dict[str, DiffNode]:
        params = self.feature_linear.named_parameters(f"{prefix}.feature")
        params.update(self.bn.named_parameters(f"{prefix}.bn"))
        params.update(self.logit_linear.named_parameters(f"{prefix}.logit"))
        return params

    def named_buffers(self, prefix: str) -> Dict[str, Tensor]:
        return self.bn.named_buffers(f"{prefix}.bn")


@dataclass
class ViewHeadSet:
    heads: List[ViewHead]
    logit_temperature: float
    feature_dim: int
    num_classes: int

    def __len__(self) -> int:
        return len(self.heads)

    def __iter__(self) -> Iterator[ViewHead]:
        return iter(self.heads)

    def set_mode(self, mode: Mode) -> None:
        for head in self.heads:
            head.bn.mode = mode

    def named_parameters(self) -> Dict[str, DiffNode]:
        params: Dict[str, DiffNode] = {}
        for head in self.heads:
            params.update(head.named_parameters(f"heads.{head.index}"))
        return params

    def named_buffers(self) -> Dict[str, Tensor]:
        buffers: Dict[str, Tensor] = {}
        for head in self.heads:
            buffers.update(head.named_buffers(f"heads.{head.index}"))
        return buffers


@dataclass
class AugmentedViews:
    features: List[DiffNode] = field(default_factory=list)
    logits: List[DiffNode] = field(default_factory=list)
    masks: List[Tensor] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.features)


@dataclass
class EnsembleOutput:
    logit_ensemble: Tensor
    feature_ensemble: Tensor
    weights: Tensor


def default_dropout_probs(n: int) -> List[float]:
    """0.2, 0.25, 0.3, ... one probability per head."""
    return [round(0.2 + 0.05 * idx, 10) for idx in range(n)]


def build_view_heads(
    n: int,
    feature_dim: int,
    num_classes: int,
    dropout_probs: Sequence[float],
    logit_temperature: float,
    rng: Rng,
    *,
    orthogonal: bool = True,
) -> ViewHeadSet:
    if n < 0:
        raise ParameterError(f"number of views must be >= 0, got {n}")
    if len(dropout_probs) != n:
        raise ParameterError(f"expected {n} dropout probabilities, got {len(dropout_probs)}")
    for prob in dropout_probs:
        if not 0.0 <= prob < 1.0:
            raise ParameterError(f"dropout probability must be in [0, 1), got {prob}")
    if not logit_temperature > 0:
        raise ParameterError(f"logit temperature must be positive, got {logit_temperature}")

    init = orthogonal_init if orthogonal else gaussian_init
    heads = []
    for idx, prob in enumerate(dropout_probs):
        head_rng = rng.child(idx)
        heads.append(
            ViewHead(
                index=idx,
                dropout_prob=float(prob),
                feature_linear=LinearLayer(parameter(init(feature_dim, feature_dim, head_rng.child(0)))),
                bn=BatchNormState.create(feature_dim),
                logit_linear=LinearLayer(parameter(init(num_classes, feature_dim, head_rng.child(1)))),
            )
        )
    logger.debug("[AUGMENT] built %d view heads (orthogonal=%s)", n, orthogonal)
    return ViewHeadSet(heads, float(logit_temperature), feature_dim, num_classes)


def augment_views(
    heads: ViewHeadSet,
    F_T: Tensor | DiffNode,
    mode: Mode,
    rng: Rng | None = None,
) -> AugmentedViews:
    """Run every head on the (detached) teacher features.

    Head ``i`` draws its dropout mask from ``rng.child(i)``.
    """
    anchor = constant(_values(F_T))
    if anchor.ndim != 2 or anchor.shape[1] != heads.feature_dim:
        raise ShapeError(f"view heads expect width {heads.feature_dim}, got shape {anchor.shape}")

    views = AugmentedViews()
    for head in heads:
        head.bn.mode = mode
        head_rng = rng.child(head.index) if rng is not None else None
        dropped, mask = dropout_forward(anchor, head.dropout_prob, head_rng, mode)
        features = batchnorm_forward(head.feature_linear(dropped), head.bn)
        views.features.append(features)
        views.logits.append(
            softmax_with_temperature(head.logit_linear(features), heads.logit_temperature, axis=1)
        )
        views.masks.append(mask)
    return views


def combine_ensemble(
    Z_T: Tensor | DiffNode,
    F_T: Tensor | DiffNode,
    views: AugmentedViews,
    weights: Sequence[float] | None = None,
) -> EnsembleOutput:
    """Weighted average of the teacher and every view; values only, no graph."""
    logits, features = _values(Z_T), _values(F_T)
    members = len(views) + 1
    if weights is None or len(weights) == 0:
        w = np.full(members, 1.0 / members)
    else:
        w = as_tensor(weights)
        if w.shape != (members,):
            raise ParameterError(f"expected {members} ensemble weights, got {w.shape[0] if w.ndim else 0}")
        if np.any(w < 0):
            raise ParameterError("ensemble weights must be nonnegative")
        if w.sum() == 0:
            raise ParameterError("ensemble weights are all zero")
        w = w / w.sum()

    if not len(views):
        return EnsembleOutput(logits.copy(), features.copy(), w)

    logit_ensemble = w[0] * logits
    feature_ensemble = w[0] * features
    for weight, view_logits, view_features in zip(w[1:], views.logits, views.features):
        if view_logits.shape != logits.shape or view_features.shape != features.shape:
            raise ShapeError(
                f"view shapes {view_logits.shape}/{view_features.shape} "
                f"do not match teacher {logits.shape}/{features.shape}"
            )
        logit_ensemble = logit_ensemble + weight * view_logits.value
        feature_ensemble = feature_ensemble + weight * view_features.value
    return EnsembleOutput(logit_ensemble, feature_ensemble, w)


def noise_augment_baseline(
    teacher: TeacherBundle,
    F_T: Tensor | DiffNode,
    n: int,
    sigma: float,
    rng: Rng,
) -> AugmentedViews:
    """Views made by adding Gaussian noise to the teacher features."""
    if sigma < 0:
        raise ParameterError(f"noise sigma must be >= 0, got {sigma}")
    features = _values(F_T)
    views = AugmentedViews()
    for idx in range(n):
        noisy = features + rng.child(idx).normal(features.shape, scale=sigma) if sigma > 0 else features.copy()
        node = constant(noisy)
        views.features.append(node)
        views.logits.append(
            softmax_with_temperature(teacher.classifier(node), teacher.logit_temperature, axis=1)
        )
    return views
