# optim.py

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Dict, Mapping, Sequence, Tuple

import numpy as np

from .autodiff import DiffNode, Tensor
from .helper.errors import ParameterError, ShapeError

logger = logging.getLogger(__name__)


def lr_at(base_lr: float, milestones: Sequence[int], decay: float, epoch: int) -> float:
    """Step schedule: ``base_lr * decay ** (#milestones <= epoch)``."""
    passed = sum(1 for milestone in milestones if milestone <= epoch)
    return base_lr * decay**passed


@dataclass
class SgdState:
    base_lr: float
    momentum: float = 0.9
    milestones: Tuple[int, ...] = ()
    decay: float = 0.1
    velocity: Dict[str, Tensor] = field(default_factory=dict)
    current_lr: float = 0.0

    def __post_init__(self):
        if not self.base_lr > 0:
            raise ParameterError(f"learning rate must be positive, got {self.base_lr}")
        if not 0.0 <= self.momentum < 1.0:
            raise ParameterError(f"momentum must be in [0, 1), got {self.momentum}")
        self.milestones = tuple(self.milestones)
        self.current_lr = self.base_lr

    @classmethod
    def from_config(cls, cfg) -> SgdState:
        return cls(cfg.lr, cfg.momentum, tuple(cfg.lr_milestones), cfg.lr_decay)

    def lr_for(self, epoch: int) -> float:
        return lr_at(self.base_lr, self.milestones, self.decay, epoch)


def sgd_update(
    params: Mapping[str, DiffNode],
    state: SgdState,
    epoch: int,
    *,
    bounds: Mapping[str, Tuple[float, float]] | None = None,
) -> float:
    """One momentum-SGD step in place; returns the learning rate used.

    Parameters named in ``bounds`` are clipped to their interval after the step.
    """
    state.current_lr = state.lr_for(epoch)
    for name, param in params.items():
        gradient = param.grad if param.grad is not None else np.zeros_like(param.value)
        if gradient.shape != param.shape:
            raise ShapeError(f"gradient {gradient.shape} does not match parameter {name} {param.shape}")
        velocity = state.velocity.get(name)
        if velocity is None:
            velocity = state.velocity[name] = np.zeros_like(param.value)
        elif velocity.shape != param.shape:
            raise ShapeError(f"velocity {velocity.shape} does not match parameter {name} {param.shape}")
        velocity *= state.momentum
        velocity += gradient
        param.value -= state.current_lr * velocity
        if bounds and name in bounds:
            low, high = bounds[name]
            np.clip(param.value, low, high, out=param.value)
    return state.current_lr
