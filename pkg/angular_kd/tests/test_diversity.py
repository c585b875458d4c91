import numpy as np
from django.test import SimpleTestCase
from hypothesis import given, settings
from hypothesis import strategies as st

from angular_kd.autodiff import Rng
from angular_kd.diversity import (
    LogitSet,
    angle_stats,
    diversity_inter_form,
    diversity_intra_form,
    diversity_report,
    generalized_diversity,
    intra_identity_applicable,
    kl_bound_check,
    recenter,
    total_logit_variance,
)
from angular_kd.helper.errors import ParameterError, ShapeError

SEEDS = st.integers(0, 2**32 - 1)


def _random_members(seed):
    rng = Rng(seed)
    members = int(rng.integers(2, 9))
    classes = int(rng.integers(2, 21))
    return rng.child(0).normal((members, classes)), rng.child(1).normal(classes)


class IdentityTests(SimpleTestCase):
    @settings(max_examples=200, deadline=None)
    @given(seed=SEEDS)
    def test_inter_form_equals_variance(self, seed):
        members, _ = _random_members(seed)
        self.assertLessEqual(abs(diversity_inter_form(members) - total_logit_variance(members)), 1e-9)

    @settings(max_examples=200, deadline=None)
    @given(seed=SEEDS)
    def test_intra_form_equals_variance_after_recentering(self, seed):
        members, teacher = _random_members(seed)
        centered = recenter(teacher, members)
        self.assertTrue(intra_identity_applicable(teacher, centered))
        self.assertLessEqual(
            abs(diversity_intra_form(teacher, centered) - total_logit_variance(centered)), 1e-9
        )

    def test_dataset_members_average_over_samples(self):
        members = Rng(4).normal((3, 6, 5))
        per_sample = [total_logit_variance(members[:, idx]) for idx in range(6)]
        self.assertAlmostEqual(total_logit_variance(members), float(np.mean(per_sample)), places=12)

    def test_hand_example_inter_form(self):
        members = np.array([[1.0, 0.0], [0.0, 1.0]])
        self.assertAlmostEqual(diversity_inter_form(members), 0.5)
        self.assertAlmostEqual(total_logit_variance(members), 0.5)

    def test_violated_precondition_is_flagged(self):
        teacher = np.array([1.0, 1.0])
        members = np.array([[0.0, 1.0], [0.0, 1.0]])
        self.assertFalse(intra_identity_applicable(teacher, members))
        self.assertAlmostEqual(diversity_intra_form(teacher, members), -1.0)

    def test_needs_two_members(self):
        with self.assertRaises(ParameterError):
            total_logit_variance(np.ones((1, 3)))

    def test_reference_shape_checked(self):
        with self.assertRaises(ShapeError):
            diversity_intra_form(np.ones(4), np.ones((2, 3)))


class GeneralizedDiversityTests(SimpleTestCase):
    def test_identical_members(self):
        self.assertEqual(generalized_diversity(np.tile([0.2, 0.8], (3, 1))), 0.0)

    def test_two_disjoint_members(self):
        self.assertAlmostEqual(generalized_diversity(np.array([[1.0, 0.0], [0.0, 1.0]])), 0.5)

    @settings(max_examples=50, deadline=None)
    @given(seed=SEEDS)
    def test_nonnegative(self, seed):
        rng = Rng(seed)
        self.assertGreaterEqual(generalized_diversity(rng.dirichlet(np.ones(5), size=4)), 0.0)

    def test_simplex_check(self):
        with self.assertRaises(ParameterError):
            LogitSet.from_members([[0.5, 0.6], [0.5, 0.5]])
        self.assertEqual(LogitSet.from_members([[0.4, 0.6], [0.5, 0.5]]).size, 2)


class KlBoundTests(SimpleTestCase):
    def test_equal_members_are_tight(self):
        y = np.array([0.1, 0.3, 0.6])
        members = np.tile([0.2, 0.5, 0.3], (3, 1))
        self.assertLessEqual(abs(kl_bound_check(y, members).slack), 1e-12)

    @settings(max_examples=200, deadline=None)
    @given(seed=SEEDS)
    def test_slack_is_nonnegative(self, seed):
        rng = Rng(seed)
        classes = int(rng.integers(2, 21))
        members = rng.child(0).dirichlet(np.ones(classes), size=int(rng.integers(2, 7)))
        y = rng.child(1).dirichlet(np.ones(classes))
        self.assertGreaterEqual(kl_bound_check(y, members).slack, -1e-12)

    def test_near_one_hot_target(self):
        y = np.full(4, 1e-6)
        y[2] = 1.0 - 3e-6
        members = Rng(3).dirichlet(np.ones(4), size=5)
        self.assertGreaterEqual(kl_bound_check(y, members).slack, -1e-12)


class AngleTests(SimpleTestCase):
    def test_identical_views(self):
        teacher = np.array([0.0, 0.0, 1.0])
        stats = angle_stats(teacher, np.tile([1.0, 0.0, 0.0], (2, 1)))
        self.assertAlmostEqual(stats.mean_inter_angle_deg, 0.0)

    def test_orthogonal_views(self):
        stats = angle_stats(np.zeros(2), np.array([[1.0, 0.0], [0.0, 1.0]]))
        self.assertAlmostEqual(stats.mean_inter_angle_deg, 90.0)
        self.assertAlmostEqual(stats.mean_intra_angle_deg, 90.0)

    def test_known_cosine(self):
        views = np.array([[1.0, 0.0], [0.96, 0.28]])
        self.assertAlmostEqual(angle_stats(np.array([5.0, 5.0]), views).mean_inter_angle_deg, 16.26, places=2)

    def test_undefined_intra_angle(self):
        teacher = np.array([1.0, 0.0])
        with self.assertLogs("angular_kd.diversity", level="WARNING"):
            stats = angle_stats(teacher, np.tile(teacher, (2, 1)))
        self.assertIsNone(stats.mean_intra_angle_deg)


class ReportTests(SimpleTestCase):
    def setUp(self):
        rng = Rng(9)
        self.teacher = rng.dirichlet(np.ones(4), size=6)
        self.views = np.stack([rng.child(i).dirichlet(np.ones(4), size=6) for i in range(3)])
        self.labels = np.arange(6) % 4

    def test_full_report(self):
        report = diversity_report(self.teacher, self.views, self.labels, 4)
        self.assertEqual(report.num_members, 4)
        self.assertGreater(report.diversity_direct, 0.0)
        self.assertAlmostEqual(report.inter_form, report.raw_variance, places=9)
        self.assertGreaterEqual(report.bound_slack, -1e-12)
        self.assertIn("mean_inter_angle_deg", report.as_dict())

    def test_teacher_only(self):
        report = diversity_report(self.teacher, np.empty((0, 6, 4)), self.labels, 4)
        self.assertEqual(report.num_members, 1)
        self.assertIsNone(report.diversity_direct)
        self.assertIsNone(report.mean_inter_angle_deg)

    def test_single_view_has_no_view_forms(self):
        report = diversity_report(self.teacher, self.views[:1], self.labels, 4)
        self.assertIsNotNone(report.diversity_direct)
        self.assertIsNone(report.inter_form)
