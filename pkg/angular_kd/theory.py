# theory.py

"""Numerical checks of the diversity identities and the ensemble KL bound."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass
from typing import Any, Dict

import numpy as np

from .autodiff import Rng, Tensor
from .constants import Stream
from .diversity import (
    diversity_inter_form,
    diversity_intra_form,
    generalized_diversity,
    kl_bound_check,
    recenter,
    total_logit_variance,
)
from .helper.errors import ParameterError

logger = logging.getLogger(__name__)

IDENTITY_TOLERANCE = 1e-9
SLACK_TOLERANCE = -1e-12
EQUALITY_TOLERANCE = 1e-12
MONOTONE_STEPS = 11
ONE_HOT_SMOOTHING = 1e-6


@dataclass
class TheoryReport:
    trials: int
    seed: int
    max_identity_a_deviation: float
    max_identity_b_deviation: float
    min_bound_slack: float
    max_equal_member_gap: float
    monotone_violations: int
    corrupt_intra_convention: bool = False

    @property
    def failures(self) -> list:
        failed = []
        if self.max_identity_a_deviation > IDENTITY_TOLERANCE:
            failed.append("identity_a")
        if self.max_identity_b_deviation > IDENTITY_TOLERANCE:
            failed.append("identity_b")
        if self.min_bound_slack < SLACK_TOLERANCE:
            failed.append("kl_bound")
        if self.max_equal_member_gap > EQUALITY_TOLERANCE:
            failed.append("kl_bound_equality")
        if self.monotone_violations:
            failed.append("monotone_link")
        return failed

    @property
    def passed(self) -> bool:
        return not self.failures

    def as_dict(self) -> Dict[str, Any]:
        payload = asdict(self)
        payload.update(passed=self.passed, failures=self.failures)
        return payload


def _simplex_members(rng: Rng, members: int, classes: int, concentration: float = 1.0) -> Tensor:
    return rng.dirichlet(np.full(classes, concentration), size=members)


def _smoothed_one_hot(rng: Rng, classes: int) -> Tensor:
    y = np.full(classes, ONE_HOT_SMOOTHING)
    y[int(rng.integers(0, classes))] = 1.0 - ONE_HOT_SMOOTHING * (classes - 1)
    return y


def _monotone_violations(rng: Rng, members: int, classes: int) -> int:
    """Count decreases of diversity along mean + t * (doubly centered perturbations)."""
    base = _simplex_members(rng.child(0), 1, classes, concentration=2.0)[0]
    perturb = rng.child(1).normal((members, classes))
    perturb -= perturb.mean(axis=0, keepdims=True)
    perturb -= perturb.mean(axis=1, keepdims=True)

    negative = perturb < 0
    if not negative.any():
        return 0
    t_max = float(np.min(base[None].repeat(members, axis=0)[negative] / -perturb[negative]))
    previous = -np.inf
    violations = 0
    for t in np.linspace(0.0, t_max, MONOTONE_STEPS)[:-1]:
        value = generalized_diversity(base[None] + t * perturb) if t > 0 else 0.0
        if value < previous - EQUALITY_TOLERANCE:
            violations += 1
        previous = value
    return violations


def verify_theory(trials: int, seed: int, corrupt_intra_convention: bool = False) -> TheoryReport:
    """Run the identity, bound and monotone checks over ``trials`` random configurations.

    ``corrupt_intra_convention`` includes the diagonal pairs in the intra form,
    which breaks the second identity; it exists as a negative control.
    """
    if trials < 1:
        raise ParameterError(f"trials must be >= 1, got {trials}")

    root = Rng(seed).child(Stream.THEORY)
    dev_a = dev_b = equal_gap = 0.0
    min_slack = np.inf
    violations = 0

    for trial in range(trials):
        rng = root.child(trial)
        views = int(rng.integers(2, 9))
        classes = int(rng.integers(2, 21))

        members = _simplex_members(rng.child(0), views, classes)
        dev_a = max(dev_a, abs(diversity_inter_form(members) - total_logit_variance(members)))

        teacher = _simplex_members(rng.child(1), 1, classes)[0]
        centered = recenter(teacher, members)
        intra = diversity_intra_form(teacher, centered, include_diagonal=corrupt_intra_convention)
        dev_b = max(dev_b, abs(intra - total_logit_variance(centered)))

        bound_members = _simplex_members(rng.child(2), int(rng.integers(2, 7)), classes)
        y = _smoothed_one_hot(rng.child(3), classes) if trial % 2 else _simplex_members(rng.child(3), 1, classes)[0]
        min_slack = min(min_slack, kl_bound_check(y, bound_members).slack)

        same = np.repeat(bound_members[:1], 3, axis=0)
        equal_gap = max(equal_gap, abs(kl_bound_check(y, same).slack))

        violations += _monotone_violations(rng.child(4), views, classes)

    report = TheoryReport(
        trials=trials,
        seed=seed,
        max_identity_a_deviation=float(dev_a),
        max_identity_b_deviation=float(dev_b),
        min_bound_slack=float(min_slack),
        max_equal_member_gap=float(equal_gap),
        monotone_violations=violations,
        corrupt_intra_convention=corrupt_intra_convention,
    )
    logger.info(
        "[THEORY] %d trials: identity A %.2e, identity B %.2e, min slack %.2e, monotone violations %d",
        trials,
        report.max_identity_a_deviation,
        report.max_identity_b_deviation,
        report.min_bound_slack,
        violations,
    )
    if not report.passed:
        logger.warning("[THEORY] failed checks: %s", ", ".join(report.failures))
    return report
