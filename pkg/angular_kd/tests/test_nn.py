import numpy as np
from django.test import SimpleTestCase

from angular_kd.autodiff import Rng, backward, constant, parameter, reduce_sum
from angular_kd.helper.errors import BatchSizeError, ParameterError, ShapeError
from angular_kd.nn import (
    BatchNormState,
    LinearLayer,
    Mode,
    batchnorm_forward,
    build_student,
    build_teacher,
    dropout_forward,
    gaussian_init,
    linear_layer,
    orthogonal_init,
    student_forward,
    teacher_forward,
    teacher_logits,
)


class OrthogonalInitTests(SimpleTestCase):
    def test_rows_are_orthonormal_for_wide_shapes(self):
        rng = Rng(11)
        for trial in range(50):
            shape_rng = rng.child(trial)
            rows = int(shape_rng.integers(1, 17))
            cols = int(shape_rng.integers(rows, 33))
            w = orthogonal_init(rows, cols, shape_rng.child(1))
            self.assertEqual(w.shape, (rows, cols))
            self.assertLessEqual(np.abs(w @ w.T - np.eye(rows)).max(), 1e-8)

    def test_columns_are_orthonormal_for_tall_shapes(self):
        w = orthogonal_init(12, 5, Rng(2))
        self.assertLessEqual(np.abs(w.T @ w - np.eye(5)).max(), 1e-8)

    def test_gain_scales(self):
        w = orthogonal_init(4, 4, Rng(3), gain=2.0)
        np.testing.assert_allclose(w @ w.T, 4.0 * np.eye(4), atol=1e-10)

    def test_invalid_dimensions(self):
        with self.assertRaises(ParameterError):
            orthogonal_init(0, 3, Rng(0))
        with self.assertRaises(ParameterError):
            gaussian_init(3, 0, Rng(0))

    def test_unknown_initializer(self):
        with self.assertRaises(ParameterError):
            linear_layer(3, 2, Rng(0), init="xavier")


class LayerTests(SimpleTestCase):
    def test_linear_layer_width_check(self):
        layer = LinearLayer(parameter(np.ones((2, 3))), parameter(np.zeros(2)))
        with self.assertRaises(ShapeError):
            layer(constant(np.ones((4, 2))))

    def test_linear_layer_applies_bias(self):
        layer = LinearLayer(parameter(np.eye(2)), parameter(np.array([1.0, -1.0])))
        out = layer(constant(np.array([[2.0, 3.0]])))
        np.testing.assert_array_equal(out.value, [[3.0, 2.0]])

    def test_dropout_eval_is_identity(self):
        x = constant(np.ones((3, 4)))
        out, mask = dropout_forward(x, 0.5, None, Mode.EVAL)
        self.assertIs(out, x)
        np.testing.assert_array_equal(mask, np.ones((3, 4)))

    def test_dropout_train_scales_survivors(self):
        x = constant(np.ones((200, 50)))
        out, mask = dropout_forward(x, 0.25, Rng(4), Mode.TRAIN)
        np.testing.assert_allclose(out.value[mask == 1.0], 1.0 / 0.75)
        np.testing.assert_array_equal(out.value[mask == 0.0], 0.0)
        self.assertAlmostEqual(mask.mean(), 0.75, delta=0.02)

    def test_dropout_train_preserves_expectation(self):
        for p in (0.1, 0.3, 0.5):
            out, _ = dropout_forward(constant(np.ones((2000, 50))), p, Rng(0), Mode.TRAIN)
            self.assertAlmostEqual(out.value.mean(), 1.0, delta=0.01)

    def test_dropout_probability_bounds(self):
        with self.assertRaises(ParameterError):
            dropout_forward(constant(np.ones(3)), 1.0, Rng(0), Mode.TRAIN)

    def test_batchnorm_train_needs_two_rows(self):
        with self.assertRaises(BatchSizeError):
            batchnorm_forward(constant(np.ones((1, 3))), BatchNormState.create(3))

    def test_batchnorm_train_normalizes_and_tracks_statistics(self):
        state = BatchNormState.create(2)
        x = constant(np.array([[1.0, 10.0], [3.0, 30.0]]))
        out = batchnorm_forward(x, state)
        np.testing.assert_allclose(out.value.mean(axis=0), 0.0, atol=1e-12)
        np.testing.assert_allclose(state.running_mean, [0.2, 2.0])
        np.testing.assert_allclose(state.running_var, [0.9 + 0.1 * 1.0, 0.9 + 0.1 * 100.0])

    def test_batchnorm_eval_uses_running_statistics(self):
        state = BatchNormState.create(2)
        state.mode = Mode.EVAL
        x = constant(np.array([[0.5, -0.5]]))
        out = batchnorm_forward(x, state)
        np.testing.assert_allclose(out.value, x.value / np.sqrt(1.0 + 1e-5))


class BundleTests(SimpleTestCase):
    def setUp(self):
        self.teacher = build_teacher(6, (8,), 5, 3, 4.0, Rng(0))
        self.student = build_student(6, (4,), 3, 5, 3, 4.0, Rng(1))
        self.x = Rng(2).normal((7, 6))

    def test_teacher_outputs(self):
        features, probs = teacher_forward(self.teacher, self.x)
        self.assertEqual(features.shape, (7, 5))
        np.testing.assert_allclose(probs.value.sum(axis=1), 1.0)

    def test_student_projects_to_teacher_width(self):
        out = student_forward(self.student, self.x)
        self.assertEqual(out.features.shape, (7, 3))
        self.assertEqual(out.projected.shape, (7, 5))
        self.assertEqual(out.logits.shape, (7, 3))

    def test_input_width_checked(self):
        with self.assertRaises(ShapeError):
            teacher_forward(self.teacher, np.ones((2, 4)))

    def test_parameter_names_are_prefixed(self):
        names = set(self.teacher.named_parameters())
        self.assertIn("teacher.extractor.0.weight", names)
        self.assertIn("teacher.classifier.weight", names)
        self.assertIn("student.projection.weight", self.student.named_parameters())

    def test_freeze_stops_gradients(self):
        self.teacher.freeze()
        _, logits = teacher_logits(self.teacher, self.x)
        self.assertFalse(logits.requires_grad)
        self.assertEqual(backward(reduce_sum(logits)), {})
        self.assertTrue(all(p.grad is None for p in self.teacher.named_parameters().values()))

    def test_same_seed_builds_same_weights(self):
        again = build_teacher(6, (8,), 5, 3, 4.0, Rng(0))
        for name, param in self.teacher.named_parameters().items():
            np.testing.assert_array_equal(param.value, again.named_parameters()[name].value)
