import numpy as np
from django.test import SimpleTestCase
from hypothesis import given, settings
from hypothesis import strategies as st

from angular_kd.augment import augment_views, build_view_heads, default_dropout_probs
from angular_kd.autodiff import Rng, constant, parameter, softmax_with_temperature
from angular_kd.data import one_hot
from angular_kd.helper.errors import LabelError, ParameterError, ShapeError
from angular_kd.losses import (
    AngularLossConfig,
    Level,
    aug_gt_loss,
    augmentation_loss,
    feature_contrastive_loss,
    inter_angle_loss,
    intra_angle_loss,
    kd_kl_loss,
    student_ce_loss,
    total_aug_loss,
    total_distill_loss,
)
from angular_kd.nn import Mode
from angular_kd.tests.gradients import FD_TOLERANCE, gradient_error

SEEDS = st.integers(0, 2**32 - 1)


def _near(anchor, rng, sign=1.0, noise=0.05):
    return sign * anchor + noise * rng.normal(anchor.shape)


class InterAngleTests(SimpleTestCase):
    def test_requires_views(self):
        cfg = AngularLossConfig.create(0.2)
        with self.assertRaises(ParameterError):
            inter_angle_loss(constant(np.ones((2, 3))), [], cfg)

    def test_view_shape_checked(self):
        cfg = AngularLossConfig.create(0.2)
        with self.assertRaises(ShapeError):
            inter_angle_loss(constant(np.ones((2, 3))), [constant(np.ones((2, 4)))], cfg)

    def test_gamma_bounds(self):
        with self.assertRaises(ParameterError):
            AngularLossConfig.create(1.5)

    def test_single_sample_view_on_anchor_is_zero(self):
        anchor = constant(np.array([[1.0, 2.0, 3.0]]))
        result = inter_angle_loss(anchor, [constant(anchor.value.copy())], AngularLossConfig.create(0.2))
        self.assertEqual(result.loss.item(), 0.0)
        self.assertEqual(result.gate_active_fraction, 1.0)

    def test_two_samples_one_orthogonal_negative(self):
        anchor = constant(np.eye(2))
        result = inter_angle_loss(anchor, [constant(np.eye(2))], AngularLossConfig.create(0.2))
        expected = np.log1p(np.exp(-1.0 / 0.07))
        self.assertAlmostEqual(expected, 6.2e-7, delta=5e-8)
        np.testing.assert_allclose(result.constraint.item(), expected, rtol=1e-6)

    def test_gate_inactive_zeroes_diversity(self):
        rng = Rng(0)
        anchor = rng.normal((4, 5))
        views = [constant(_near(anchor, rng.child(i), sign=-1.0)) for i in range(3)]
        result = inter_angle_loss(constant(anchor), views, AngularLossConfig.create(0.0))
        self.assertEqual(result.gate_active_fraction, 0.0)
        self.assertEqual(result.diversity.item(), 0.0)

    def test_gate_active_when_views_inside_margin(self):
        rng = Rng(1)
        anchor = rng.normal((4, 5))
        views = [constant(_near(anchor, rng.child(i), noise=0.01)) for i in range(3)]
        result = inter_angle_loss(constant(anchor), views, AngularLossConfig.create(0.5))
        self.assertEqual(result.gate_active_fraction, 1.0)
        # near-identical views: every pair has cosine close to 1, ordered pairs 3 * 2
        self.assertAlmostEqual(result.diversity.item(), 6.0, delta=0.05)

    def test_single_view_has_no_diversity(self):
        anchor = Rng(2).normal((3, 4))
        result = inter_angle_loss(constant(anchor), [constant(anchor)], AngularLossConfig.create(0.5))
        self.assertEqual(result.diversity.item(), 0.0)

    def test_branch_toggles(self):
        rng = Rng(3)
        anchor = rng.normal((4, 5))
        views = [constant(_near(anchor, rng.child(i), noise=0.01)) for i in range(2)]
        cfg = AngularLossConfig.create(0.5, use_constraint=False, use_diversity=False)
        result = inter_angle_loss(constant(anchor), views, cfg)
        self.assertEqual(result.loss.item(), 0.0)

    @settings(max_examples=20, deadline=None)
    @given(seed=SEEDS, factor=st.floats(0.01, 100.0))
    def test_constraint_ignores_view_scale(self, seed, factor):
        rng = Rng(seed)
        anchor = constant(rng.normal((4, 5)))
        views = [rng.child(i).normal((4, 5)) for i in range(2)]
        cfg = AngularLossConfig.create(0.2)
        base = inter_angle_loss(anchor, [constant(v) for v in views], cfg)
        rescaled = inter_angle_loss(anchor, [constant(views[0] * factor), constant(views[1])], cfg)
        self.assertAlmostEqual(base.constraint.item(), rescaled.constraint.item(), places=10)
        self.assertEqual(base.gate_active_fraction, rescaled.gate_active_fraction)

    @settings(max_examples=20, deadline=None)
    @given(seed=SEEDS)
    def test_gate_never_closes_as_gamma_rises(self, seed):
        rng = Rng(seed)
        anchor = rng.normal((6, 4))
        views = [constant(_near(anchor, rng.child(i), noise=1.0)) for i in range(3)]
        fractions = [
            inter_angle_loss(constant(anchor), views, AngularLossConfig.create(gamma)).gate_active_fraction
            for gamma in np.linspace(0.0, 1.0, 11)
        ]
        self.assertEqual(fractions, sorted(fractions))

    @settings(max_examples=20, deadline=None)
    @given(seed=SEEDS, active=st.booleans())
    def test_gradients(self, seed, active):
        rng = Rng(seed)
        anchor = constant(rng.normal((4, 5)))
        sign, gamma = (1.0, 0.5) if active else (-1.0, 0.3)
        views = [parameter(_near(anchor.value, rng.child(i), sign=sign)) for i in range(3)]
        cfg = AngularLossConfig.create(gamma, contrastive_temperature=0.5)
        error = gradient_error(lambda: inter_angle_loss(anchor, views, cfg).loss, views + [cfg.margin_gamma])
        self.assertLessEqual(error, FD_TOLERANCE)

    @settings(max_examples=20, deadline=None)
    @given(seed=SEEDS, active=st.booleans())
    def test_gradients_at_training_temperature(self, seed, active):
        rng = Rng(seed)
        anchor = constant(rng.normal((3, 4)))
        sign, gamma = (1.0, 0.5) if active else (-1.0, 0.3)
        views = [parameter(_near(anchor.value, rng.child(i), sign=sign, noise=0.3)) for i in range(2)]
        cfg = AngularLossConfig.create(gamma)
        self.assertEqual(cfg.contrastive_temperature, 0.07)
        error = gradient_error(
            lambda: inter_angle_loss(anchor, views, cfg).loss, views + [cfg.margin_gamma], resolvable=1e-3
        )
        self.assertLessEqual(error, FD_TOLERANCE)


class IntraAngleTests(SimpleTestCase):
    def test_orthogonal_offsets(self):
        anchor = constant(np.zeros((1, 2)))
        views = [constant(np.array([[1.0, 0.0]])), constant(np.array([[0.0, 1.0]]))]
        self.assertAlmostEqual(intra_angle_loss(anchor, views).item(), 0.0)

    def test_opposite_offsets(self):
        anchor = constant(np.zeros((1, 2)))
        # offsets anchor - view: [1, 0] and [-1, 0]
        views = [constant(np.array([[-1.0, 0.0]])), constant(np.array([[1.0, 0.0]]))]
        self.assertAlmostEqual(intra_angle_loss(anchor, views).item(), -2.0, places=12)

    def test_parallel_offsets_count_ordered_pairs(self):
        anchor = constant(np.zeros((2, 2)))
        views = [constant(np.ones((2, 2))), constant(2.0 * np.ones((2, 2)))]
        self.assertAlmostEqual(intra_angle_loss(anchor, views).item(), 2.0)

    def test_zero_offsets_are_masked(self):
        anchor = constant(np.ones((1, 3)))
        views = [constant(np.ones((1, 3))), constant(np.zeros((1, 3)))]
        self.assertEqual(intra_angle_loss(anchor, views).item(), 0.0)

    @settings(max_examples=30, deadline=None)
    @given(seed=SEEDS, n=st.integers(2, 6))
    def test_bounded_by_ordered_pair_count(self, seed, n):
        rng = Rng(seed)
        anchor = constant(rng.normal((1, 3)))
        views = [constant(rng.child(i).normal((1, 3))) for i in range(n)]
        value = intra_angle_loss(anchor, views).item()
        bound = n * (n - 1)
        self.assertLessEqual(abs(value), bound + 1e-12)

    @settings(max_examples=20, deadline=None)
    @given(seed=SEEDS)
    def test_gradients(self, seed):
        rng = Rng(seed)
        anchor = constant(rng.normal((3, 4)))
        views = [parameter(rng.child(i).normal((3, 4))) for i in range(3)]
        self.assertLessEqual(gradient_error(lambda: intra_angle_loss(anchor, views), views), FD_TOLERANCE)


class GroundTruthTests(SimpleTestCase):
    def test_uniform_views(self):
        y = one_hot([0, 1], 2)
        views = [constant(np.full((2, 2), 0.5)) for _ in range(3)]
        self.assertAlmostEqual(aug_gt_loss(y, views).item(), 3.0 * np.log(2.0))

    def test_targets_must_be_one_hot(self):
        with self.assertRaises(LabelError):
            aug_gt_loss(np.array([[0.5, 0.5]]), [constant(np.array([[0.5, 0.5]]))])

    def test_one_hot_range(self):
        with self.assertRaises(LabelError):
            one_hot([0, 3], 3)

    @settings(max_examples=20, deadline=None)
    @given(seed=SEEDS)
    def test_gradients(self, seed):
        rng = Rng(seed)
        raw = [parameter(rng.child(i).normal((4, 3))) for i in range(2)]
        y = one_hot(rng.integers(0, 3, size=4), 3)

        def loss():
            return aug_gt_loss(y, [softmax_with_temperature(r, 2.0, axis=1) for r in raw])

        self.assertLessEqual(gradient_error(loss, raw), FD_TOLERANCE)


class AugmentationLossTests(SimpleTestCase):
    def setUp(self):
        self.heads = build_view_heads(3, 6, 4, default_dropout_probs(3), 4.0, Rng(0))
        rng = Rng(1)
        self.features = np.abs(rng.normal((8, 6)))
        self.probs = softmax_with_temperature(constant(rng.child(1).normal((8, 4))), 4.0, axis=1).value
        self.y = one_hot(rng.child(2).integers(0, 4, size=8), 4)

    def _loss(self, cfg, **toggles):
        views = augment_views(self.heads, self.features, Mode.TRAIN, Rng(5))
        return augmentation_loss(self.features, self.probs, views, self.y, cfg, **toggles)

    def test_term_names(self):
        bundle = self._loss(AngularLossConfig.create(0.2))
        self.assertEqual(set(bundle.terms), {"inter_constraint", "inter_diversity", "intra", "aug_gt"})
        self.assertAlmostEqual(bundle.value, sum(bundle.terms.values()), places=10)

    def test_gt_only(self):
        bundle = self._loss(AngularLossConfig.create(0.2), use_inter=False, use_intra=False)
        self.assertEqual(set(bundle.terms), {"aug_gt"})

    def test_both_levels_sum_single_levels(self):
        both = self._loss(AngularLossConfig.create(0.2, level=Level.BOTH))
        feature = self._loss(AngularLossConfig.create(0.2, level=Level.FEATURE))
        logit = self._loss(AngularLossConfig.create(0.2, level=Level.LOGIT))
        self.assertAlmostEqual(both.value, feature.value + logit.value - feature.terms["aug_gt"], places=9)

    def test_total_aug_loss_without_terms(self):
        self.assertEqual(total_aug_loss(None, None, None).value, 0.0)

    @settings(max_examples=10, deadline=None)
    @given(seed=SEEDS)
    def test_head_gradients(self, seed):
        rng = Rng(seed)
        heads = build_view_heads(2, 5, 3, default_dropout_probs(2), 4.0, rng.child(0))
        features = np.abs(rng.child(1).normal((6, 5)))
        probs = softmax_with_temperature(constant(rng.child(2).normal((6, 3))), 4.0, axis=1).value
        y = one_hot(rng.child(3).integers(0, 3, size=6), 3)
        cfg = AngularLossConfig.create(0.2, contrastive_temperature=0.5)

        def loss():
            views = augment_views(heads, features, Mode.TRAIN, rng.child(4))
            return augmentation_loss(features, probs, views, y, cfg).total

        params = list(heads.named_parameters().values()) + [cfg.margin_gamma]
        self.assertLessEqual(gradient_error(loss, params), FD_TOLERANCE)


class DistillLossTests(SimpleTestCase):
    def test_kl_zero_when_student_matches(self):
        raw = constant(Rng(0).normal((3, 4)))
        target = softmax_with_temperature(raw, 4.0, axis=1).value
        self.assertAlmostEqual(kd_kl_loss(target, raw, 4.0).item(), 0.0, places=12)

    def test_kl_of_one_hot_against_uniform(self):
        value = kd_kl_loss(np.array([[1.0, 0.0]]), constant(np.zeros((1, 2))), 1.0).item()
        self.assertAlmostEqual(value, np.log(2.0), places=12)

    @settings(max_examples=30, deadline=None)
    @given(seed=SEEDS, tau=st.floats(0.5, 8.0))
    def test_kl_is_nonnegative(self, seed, tau):
        rng = Rng(seed)
        target = rng.dirichlet(np.full(5, 0.3), size=4)
        raw = constant(3.0 * rng.child(1).normal((4, 5)))
        self.assertGreaterEqual(kd_kl_loss(target, raw, tau).item(), -1e-12)

    def test_kl_temperature_checked(self):
        with self.assertRaises(ParameterError):
            kd_kl_loss(np.full((1, 2), 0.5), constant(np.zeros((1, 2))), 0.0)

    def test_ce_of_uniform_logits(self):
        self.assertAlmostEqual(student_ce_loss([0, 2], constant(np.zeros((2, 3)))).item(), np.log(3.0))

    def test_contrastive_single_sample_is_zero(self):
        f = np.array([[1.0, 2.0]])
        self.assertAlmostEqual(feature_contrastive_loss(f, constant(f), 0.07).item(), 0.0)

    def test_contrastive_identical_targets_give_log_batch(self):
        rng = Rng(4)
        targets = np.tile(rng.normal((1, 6)), (5, 1))
        projected = constant(rng.child(1).normal((5, 6)))
        self.assertAlmostEqual(feature_contrastive_loss(targets, projected, 0.07).item(), np.log(5.0), places=10)

    def test_level_selection(self):
        gt = constant(1.0)
        feat, logit = constant(2.0), constant(3.0)
        self.assertEqual(total_distill_loss(feat, logit, gt, Level.BOTH).value, 6.0)
        self.assertEqual(set(total_distill_loss(feat, logit, gt, Level.LOGIT).terms), {"kd_kl", "student_ce"})
        self.assertEqual(total_distill_loss(feat, None, gt, Level.FEATURE).value, 3.0)

    @settings(max_examples=20, deadline=None)
    @given(seed=SEEDS)
    def test_gradients(self, seed):
        rng = Rng(seed)
        raw = parameter(rng.normal((5, 3)))
        target = rng.child(1).dirichlet(np.ones(3), size=5)
        labels = rng.child(2).integers(0, 3, size=5)
        projected = parameter(rng.child(3).normal((5, 4)))
        ensemble_features = rng.child(4).normal((5, 4))

        self.assertLessEqual(gradient_error(lambda: kd_kl_loss(target, raw, 4.0), [raw]), FD_TOLERANCE)
        self.assertLessEqual(gradient_error(lambda: student_ce_loss(labels, raw), [raw]), FD_TOLERANCE)
        self.assertLessEqual(
            gradient_error(lambda: feature_contrastive_loss(ensemble_features, projected, 0.5), [projected]),
            FD_TOLERANCE,
        )
