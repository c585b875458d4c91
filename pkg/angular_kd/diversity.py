# diversity.py

"""Ensemble diversity measures over member probability vectors.

Member arrays are ``[M x C]`` for a single sample or ``[M x n x C]`` for a
dataset; every dataset-level value is the mean over the ``n`` samples.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass
from typing import Any, Dict, NamedTuple, Sequence

import numpy as np
import numpy.typing as npt

from .autodiff import NORM_EPS, Tensor, as_tensor
from .data import one_hot
from .helper.errors import ParameterError, ShapeError

logger = logging.getLogger(__name__)

SIMPLEX_TOLERANCE = 1e-10
LABEL_SMOOTHING = 1e-6


@dataclass(frozen=True)
class LogitSet:
    members: Tensor

    @classmethod
    def from_members(cls, members: Sequence[npt.ArrayLike], check_simplex: bool = True) -> LogitSet:
        stacked = _as_members(members)
        if check_simplex:
            if np.any(stacked < -SIMPLEX_TOLERANCE) or np.any(
                np.abs(stacked.sum(axis=-1) - 1.0) > SIMPLEX_TOLERANCE
            ):
                raise ParameterError("logit set members must lie on the probability simplex")
        return cls(stacked)

    @property
    def size(self) -> int:
        return self.members.shape[0]


class BoundCheck(NamedTuple):
    lhs: float
    rhs: float
    slack: float


class AngleStats(NamedTuple):
    mean_inter_angle_deg: float
    mean_intra_angle_deg: float | None


@dataclass
class DiversityReport:
    num_members: int
    diversity_direct: float | None
    inter_form: float | None
    intra_form: float | None
    raw_variance: float | None
    mean_inter_angle_deg: float | None
    mean_intra_angle_deg: float | None
    kl_bound_lhs: float | None
    kl_bound_rhs: float | None
    bound_slack: float | None
    intra_identity_applicable: bool | None

    def as_dict(self) -> Dict[str, Any]:
        return asdict(self)


def _as_members(members: Any) -> Tensor:
    if isinstance(members, LogitSet):
        return members.members
    stacked = as_tensor(members)
    if stacked.ndim == 2:
        stacked = stacked[:, None, :]
    if stacked.ndim != 3:
        raise ShapeError(f"members must be [M x C] or [M x n x C], got shape {stacked.shape}")
    return stacked


def _as_reference(vector: npt.ArrayLike, members: Tensor) -> Tensor:
    ref = as_tensor(vector)
    if ref.ndim == 1:
        ref = ref[None, :]
    if ref.shape != members.shape[1:]:
        raise ShapeError(f"reference shape {ref.shape} does not match members {members.shape[1:]}")
    return ref


def _require_members(members: Tensor, minimum: int) -> None:
    if members.shape[0] < minimum:
        raise ParameterError(f"need at least {minimum} members, got {members.shape[0]}")


def _pair_products(vectors: Tensor, eps: float) -> Tensor:
    """||a_i|| ||a_j|| cos(a_i, a_j) for every ordered pair, shape [M x M x n]."""
    norms = np.linalg.norm(vectors, axis=-1)
    unit = vectors / np.maximum(norms, eps)[..., None]
    cosines = np.einsum("inc,jnc->ijn", unit, unit)
    return norms[:, None, :] * norms[None, :, :] * cosines


# ============================================================================
# Diversity measures
# ============================================================================


def generalized_diversity(members: Any, eps: float = NORM_EPS) -> float:
    z = _as_members(members)
    _require_members(z, 2)
    peak = np.maximum(z.max(axis=0), eps)
    return float((z / peak).var(axis=0).sum(axis=-1).mean())


def total_logit_variance(members: Any) -> float:
    z = _as_members(members)
    _require_members(z, 2)
    second_moment = (z**2).sum(axis=-1).mean(axis=0)
    mean = z.mean(axis=0)
    return float((second_moment - (mean**2).sum(axis=-1)).mean())


def diversity_inter_form(members: Any, eps: float = NORM_EPS) -> float:
    z = _as_members(members)
    _require_members(z, 2)
    n = z.shape[0]
    squared = (np.linalg.norm(z, axis=-1) ** 2).mean(axis=0)
    pairs = _pair_products(z, eps).sum(axis=(0, 1)) / n**2
    return float((squared - pairs).mean())


def recenter(teacher: npt.ArrayLike, members: Any) -> Tensor:
    """Shift members so their mean equals the teacher vector."""
    z = _as_members(members)
    return z - z.mean(axis=0) + _as_reference(teacher, z)


def intra_identity_applicable(teacher: npt.ArrayLike, members: Any, tol: float = 1e-9) -> bool:
    z = _as_members(members)
    offsets = _as_reference(teacher, z)[None] - z
    return bool(np.all(np.abs(offsets.sum(axis=0)) <= tol))


def diversity_intra_form(
    teacher: npt.ArrayLike,
    members: Any,
    *,
    include_diagonal: bool = False,
    eps: float = NORM_EPS,
) -> float:
    z = _as_members(members)
    _require_members(z, 2)
    n = z.shape[0]
    offsets = _as_reference(teacher, z)[None] - z
    pairs = _pair_products(offsets, eps)
    if not include_diagonal:
        pairs = pairs * (1.0 - np.eye(n))[..., None]
    return float((-pairs.sum(axis=(0, 1)) / n).mean())


def _kl(p: Tensor, q: Tensor) -> Tensor:
    return (p * (np.log(p) - np.log(q))).sum(axis=-1)


def kl_bound_check(y: npt.ArrayLike, members: Any, eps: float = NORM_EPS) -> BoundCheck:
    """Compare KL(y || mean member) with the averaged-member bound minus its spread term."""
    z = _as_members(members)
    _require_members(z, 2)
    target = _as_reference(y, z)
    if np.any(target < eps) or np.any(z < eps):
        logger.warning("[THEORY] kl_bound_check clamped entries below %.1e", eps)
        target = np.maximum(target, eps)
        z = np.maximum(z, eps)

    mean = z.mean(axis=0)
    peak = z.max(axis=0)
    lhs = _kl(target, mean)
    member_kl = _kl(target[None], z).mean(axis=0)
    spread = (target[None] / (2.0 * peak[None] ** 2) * (z - mean[None]) ** 2).sum(axis=-1).mean(axis=0)
    rhs = member_kl - spread
    lhs_value, rhs_value = float(lhs.mean()), float(rhs.mean())
    return BoundCheck(lhs_value, rhs_value, rhs_value - lhs_value)


def _degrees(cosines: Tensor) -> Tensor:
    return np.degrees(np.arccos(np.clip(cosines, -1.0, 1.0)))


def angle_stats(teacher: npt.ArrayLike, views: Any, eps: float = NORM_EPS) -> AngleStats:
    """Mean pairwise angle between views and between teacher-to-view offsets, in degrees."""
    z = _as_members(views)
    _require_members(z, 2)
    ref = _as_reference(teacher, z)
    offsets = ref[None] - z

    view_norms = np.maximum(np.linalg.norm(z, axis=-1), eps)
    offset_norms = np.linalg.norm(offsets, axis=-1)
    inter_angles, intra_angles = [], []
    for i in range(z.shape[0]):
        for j in range(i + 1, z.shape[0]):
            cos = (z[i] * z[j]).sum(axis=-1) / (view_norms[i] * view_norms[j])
            inter_angles.append(_degrees(cos))
            valid = (offset_norms[i] >= eps) & (offset_norms[j] >= eps)
            if np.any(valid):
                dots = (offsets[i][valid] * offsets[j][valid]).sum(axis=-1)
                intra_angles.append(_degrees(dots / (offset_norms[i][valid] * offset_norms[j][valid])))

    mean_intra = None
    if intra_angles:
        mean_intra = float(np.concatenate(intra_angles).mean())
    else:
        logger.warning("[THEORY] every offset is below %.1e; intra angle undefined", eps)
    return AngleStats(float(np.concatenate(inter_angles).mean()), mean_intra)


def diversity_report(
    teacher_probs: npt.ArrayLike,
    view_probs: Any,
    labels: npt.ArrayLike,
    num_classes: int,
    smoothing: float = LABEL_SMOOTHING,
) -> DiversityReport:
    """Teacher-included diversity plus the views-only identity forms and angles.

    ``teacher_probs`` is [n x C]; ``view_probs`` is [N x n x C] (N may be 0).
    """
    teacher = as_tensor(teacher_probs)
    views = as_tensor(view_probs).reshape(-1, *teacher.shape)
    members = np.concatenate([teacher[None], views], axis=0)

    y = one_hot(np.asarray(labels), num_classes)
    y = (1.0 - smoothing * num_classes) * y + smoothing

    diversity = bound = None
    if members.shape[0] >= 2:
        diversity = generalized_diversity(members)
        bound = kl_bound_check(y, members)

    inter = intra = variance = angles = applicable = None
    if views.shape[0] >= 2:
        inter = diversity_inter_form(views)
        intra = diversity_intra_form(teacher, views)
        variance = total_logit_variance(views)
        angles = angle_stats(teacher, views)
        applicable = intra_identity_applicable(teacher, views)

    return DiversityReport(
        num_members=members.shape[0],
        diversity_direct=diversity,
        inter_form=inter,
        intra_form=intra,
        raw_variance=variance,
        mean_inter_angle_deg=angles.mean_inter_angle_deg if angles else None,
        mean_intra_angle_deg=angles.mean_intra_angle_deg if angles else None,
        kl_bound_lhs=bound.lhs if bound else None,
        kl_bound_rhs=bound.rhs if bound else None,
        bound_slack=bound.slack if bound else None,
        intra_identity_applicable=applicable,
    )
