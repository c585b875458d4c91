# nn.py

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from .constants import StrEnum
from typing import Dict, List, NamedTuple, Sequence, Tuple

import numpy as np

from .autodiff import (
    DiffNode,
    Rng,
    Tensor,
    add,
    as_tensor,
    broadcast_to,
    constant,
    div,
    matmul,
    mul,
    parameter,
    reduce_mean,
    relu,
    reshape,
    softmax_with_temperature,
    sqrt,
    sub,
    transpose,
)
from .helper.errors import BatchSizeError, ParameterError, ShapeError

logger = logging.getLogger(__name__)


class Mode(StrEnum):
    TRAIN = "train"
    EVAL = "eval"


# ============================================================================
# Initializers
# ============================================================================


def orthogonal_init(rows: int, cols: int, rng: Rng, gain: float = 1.0) -> Tensor:
    """Semi-orthogonal matrix from the QR of a standard-normal draw.

    rows <= cols gives orthonormal rows, otherwise orthonormal columns.
    """
    if rows < 1 or cols < 1:
        raise ParameterError(f"orthogonal_init needs positive dimensions, got {rows}x{cols}")
    draw = rng.normal((max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(draw)
    # sign-correct so Q is Haar distributed
    q = q * np.where(np.diag(r) < 0.0, -1.0, 1.0)
    if rows < cols:
        q = q.T
    return np.ascontiguousarray(q * gain)


def gaussian_init(rows: int, cols: int, rng: Rng, gain: float = 1.0) -> Tensor:
    if rows < 1 or cols < 1:
        raise ParameterError(f"gaussian_init needs positive dimensions, got {rows}x{cols}")
    return rng.normal((rows, cols), scale=gain / np.sqrt(cols))


_INITIALIZERS = {
    "orthogonal": orthogonal_init,
    "gaussian": gaussian_init,
    # He scaling for relu stacks
    "he": lambda rows, cols, rng: gaussian_init(rows, cols, rng, gain=np.sqrt(2.0)),
}


# ============================================================================
# Layers
# ============================================================================


@dataclass
class LinearLayer:
    weight: DiffNode
    bias: DiffNode | None = None

    @property
    def in_features(self) -> int:
        return self.weight.shape[1]

    @property
    def out_features(self) -> int:
        return self.weight.shape[0]

    def __call__(self, x: DiffNode) -> DiffNode:
        if x.ndim != 2 or x.shape[1] != self.in_features:
            raise ShapeError(f"linear layer expects width {self.in_features}, got shape {x.shape}")
        out = matmul(x, transpose(self.weight))
        if self.bias is not None:
            row = reshape(self.bias, (1, self.out_features))
            out = add(out, broadcast_to(row, out.shape))
        return out

    def named_parameters(self, prefix: str) -> Dict[str, DiffNode]:
        params = {f"{prefix}.weight": self.weight}
        if self.bias is not None:
            params[f"{prefix}.bias"] = self.bias
        return params


def linear_layer(
    in_features: int,
    out_features: int,
    rng: Rng,
    *,
    bias: bool = True,
    init: str = "he",
) -> LinearLayer:
    initializer = _INITIALIZERS.get(init)
    if initializer is None:
        raise ParameterError(f"unknown initializer: {init}")
    weight = parameter(initializer(out_features, in_features, rng))
    return LinearLayer(weight=weight, bias=parameter(np.zeros(out_features)) if bias else None)


@dataclass
class BatchNormState:
    scale: DiffNode
    shift: DiffNode
    running_mean: Tensor
    running_var: Tensor
    eps: float = 1e-5
    momentum: float = 0.1
    mode: Mode = Mode.TRAIN

    @classmethod
    def create(cls, width: int) -> BatchNormState:
        return cls(
            scale=parameter(np.ones(width)),
            shift=parameter(np.zeros(width)),
            running_mean=np.zeros(width),
            running_var=np.ones(width),
        )

    @property
    def width(self) -> int:
        return self.scale.shape[0]

    def named_parameters(self, prefix: str) -> Dict[str, DiffNode]:
        return {f"{prefix}.scale": self.scale, f"{prefix}.shift": self.shift}

    def named_buffers(self, prefix: str) -> Dict[str, Tensor]:
        return {f"{prefix}.running_mean": self.running_mean, f"{prefix}.running_var": self.running_var}


def dropout_forward(
    x: DiffNode,
    p: float,
    rng: Rng | None,
    mode: Mode,
) -> Tuple[DiffNode, Tensor]:
    """Inverted dropout; returns the output and the 0/1 keep mask."""
    if not 0.0 <= p < 1.0:
        raise ParameterError(f"dropout probability must be in [0, 1), got {p}")
    if mode is Mode.EVAL or p == 0.0:
        return x, np.ones(x.shape)
    if rng is None:
        raise ParameterError("train-mode dropout needs a random stream")
    mask = (rng.uniform(x.shape) >= p).astype(np.float64)
    return mul(x, constant(mask / (1.0 - p))), mask


def batchnorm_forward(x: DiffNode, state: BatchNormState) -> DiffNode:
    if x.ndim != 2 or x.shape[1] != state.width:
        raise ShapeError(f"batch norm expects width {state.width}, got shape {x.shape}")
    batch = x.shape[0]

    if state.mode is Mode.TRAIN:
        if batch < 2:
            raise BatchSizeError(f"train-mode batch norm needs at least 2 rows, got {batch}")
        mean = reduce_mean(x, axis=0, keepdims=True)
        centered = sub(x, broadcast_to(mean, x.shape))
        var = reduce_mean(mul(centered, centered), axis=0, keepdims=True)
        std = sqrt(add(var, constant(np.full(var.shape, state.eps))))
        normalized = div(centered, broadcast_to(std, x.shape))
        state.running_mean *= 1.0 - state.momentum
        state.running_mean += state.momentum * mean.value[0]
        state.running_var *= 1.0 - state.momentum
        state.running_var += state.momentum * var.value[0]
    else:
        shift = constant(np.broadcast_to(state.running_mean, x.shape))
        std = constant(np.broadcast_to(np.sqrt(state.running_var + state.eps), x.shape))
        normalized = div(sub(x, shift), std)

    gain = broadcast_to(reshape(state.scale, (1, state.width)), x.shape)
    offset = broadcast_to(reshape(state.shift, (1, state.width)), x.shape)
    return add(mul(normalized, gain), offset)


# ============================================================================
# Teacher and student
# ============================================================================


def _extract(stages: Sequence[LinearLayer], x: DiffNode) -> DiffNode:
    hidden = x
    for stage in stages:
        hidden = relu(stage(hidden))
    return hidden


def _as_input(x: Tensor | DiffNode, width: int) -> DiffNode:
    node = x if isinstance(x, DiffNode) else constant(x)
    if node.ndim != 2 or node.shape[1] != width:
        raise ShapeError(f"model expects inputs of width {width}, got shape {node.shape}")
    return node


@dataclass
class TeacherBundle:
    extractor: List[LinearLayer]
    classifier: LinearLayer
    feature_dim: int
    num_classes: int
    logit_temperature: float
    frozen: bool = False

    def __post_init__(self):
        if self.classifier.in_features != self.feature_dim:
            raise ShapeError(
                f"classifier input {self.classifier.in_features} != feature dim {self.feature_dim}"
            )
        if not self.logit_temperature > 0:
            raise ParameterError(f"logit temperature must be positive, got {self.logit_temperature}")

    @property
    def input_dim(self) -> int:
        return self.extractor[0].in_features

    def named_parameters(self) -> Dict[str, DiffNode]:
        params: Dict[str, DiffNode] = {}
        for idx, stage in enumerate(self.extractor):
            params.update(stage.named_parameters(f"teacher.extractor.{idx}"))
        params.update(self.classifier.named_parameters("teacher.classifier"))
        return params

    def named_buffers(self) -> Dict[str, Tensor]:
        return {}

    def freeze(self) -> None:
        """Stop tracking gradients for every teacher parameter."""
        for param in self.named_parameters().values():
            param.requires_grad = False
            param.grad = None
        self.frozen = True


@dataclass
class StudentBundle:
    extractor: List[LinearLayer]
    classifier: LinearLayer
    projection: LinearLayer
    feature_dim: int
    num_classes: int
    logit_temperature: float

    def __post_init__(self):
        if self.classifier.in_features != self.feature_dim:
            raise ShapeError(
                f"classifier input {self.classifier.in_features} != feature dim {self.feature_dim}"
            )
        if self.projection.in_features != self.feature_dim:
            raise ShapeError(
                f"projection input {self.projection.in_features} != feature dim {self.feature_dim}"
            )

    @property
    def input_dim(self) -> int:
        return self.extractor[0].in_features

    @property
    def teacher_dim(self) -> int:
        return self.projection.out_features

    def named_parameters(self) -> Dict[str, DiffNode]:
        params: Dict[str, DiffNode] = {}
        for idx, stage in enumerate(self.extractor):
            params.update(stage.named_parameters(f"student.extractor.{idx}"))
        params.update(self.classifier.named_parameters("student.classifier"))
        params.update(self.projection.named_parameters("student.projection"))
        return params

    def named_buffers(self) -> Dict[str, Tensor]:
        return {}


class StudentOutput(NamedTuple):
    features: DiffNode
    projected: DiffNode
    logits: DiffNode
    probs: DiffNode


def _build_stages(input_dim: int, hidden: Sequence[int], feature_dim: int, rng: Rng) -> List[LinearLayer]:
    widths = [input_dim, *hidden, feature_dim]
    return [
        linear_layer(widths[idx], widths[idx + 1], rng.child(idx))
        for idx in range(len(widths) - 1)
    ]


def build_teacher(
    input_dim: int,
    hidden: Sequence[int],
    feature_dim: int,
    num_classes: int,
    logit_temperature: float,
    rng: Rng,
) -> TeacherBundle:
    extractor = _build_stages(input_dim, hidden, feature_dim, rng.child(0))
    classifier = linear_layer(feature_dim, num_classes, rng.child(1), init="gaussian")
    return TeacherBundle(extractor, classifier, feature_dim, num_classes, logit_temperature)


def build_student(
    input_dim: int,
    hidden: Sequence[int],
    feature_dim: int,
    teacher_dim: int,
    num_classes: int,
    logit_temperature: float,
    rng: Rng,
) -> StudentBundle:
    extractor = _build_stages(input_dim, hidden, feature_dim, rng.child(0))
    classifier = linear_layer(feature_dim, num_classes, rng.child(1), init="gaussian")
    projection = linear_layer(feature_dim, teacher_dim, rng.child(2), init="orthogonal")
    return StudentBundle(extractor, classifier, projection, feature_dim, num_classes, logit_temperature)


def teacher_logits(t: TeacherBundle, x: Tensor | DiffNode) -> Tuple[DiffNode, DiffNode]:
    """Teacher features and raw (pre-softmax) logits."""
    features = _extract(t.extractor, _as_input(x, t.input_dim))
    return features, t.classifier(features)


def teacher_forward(t: TeacherBundle, x: Tensor | DiffNode) -> Tuple[DiffNode, DiffNode]:
    features, logits = teacher_logits(t, x)
    return features, softmax_with_temperature(logits, t.logit_temperature, axis=1)


def student_forward(s: StudentBundle, x: Tensor | DiffNode) -> StudentOutput:
    features = _extract(s.extractor, _as_input(x, s.input_dim))
    logits = s.classifier(features)
    return StudentOutput(
        features=features,
        projected=s.projection(features),
        logits=logits,
        probs=softmax_with_temperature(logits, s.logit_temperature, axis=1),
    )
