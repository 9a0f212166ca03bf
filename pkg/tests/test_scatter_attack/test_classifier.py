"""
Unit tests for the numpy classifier.

They validate:
  - Layer arithmetic of the default architecture
  - Softmax / cross-entropy values
  - Input gradients against finite differences
  - Training progress and the zero-epoch case
  - OTSAW1 weight files, including malformed inputs
"""

from __future__ import annotations

import math
import os
import tempfile
import unittest

import numpy as np

from scatter_attack.classifier import (
    Classifier,
    ConvClassifier,
    LinearSoftmaxModel,
    ModelSpec,
    TrainConfig,
    Weights,
    cross_entropy_loss,
    evaluate_accuracy,
    init_weights,
    input_gradient,
    input_gradient_batch,
    load_weights,
    predict,
    predict_batch,
    save_weights,
    softmax,
    train,
)
from scatter_attack.dataio import SynthConfig, generate_synthetic_dataset, prepare_split
from scatter_attack.errors import FormatError, ParameterError
from scatter_attack.gradient_engine import finite_difference


SLOW = os.environ.get("OTSA_SLOW_TESTS") == "1"

SMALL = ModelSpec(input_size=24, num_classes=3)


def _toy_dataset(count: int = 16, size: int = 24):
    """Dark images are class 0, bright images class 1."""
    rng = np.random.default_rng(5)
    labels = np.arange(count) % 2
    images = labels[:, None, None] * 1.0 + 0.05 * rng.standard_normal((count, size, size))
    return images, labels


class TestModelSpec(unittest.TestCase):

    def test_default_layer_sizes(self):
        spec = ModelSpec()
        self.assertEqual(spec.input_shape, (88, 88))
        self.assertEqual(spec.conv1_output, 42)
        self.assertEqual(spec.conv2_output, 19)

    def test_too_small_input(self):
        with self.assertRaises(ParameterError):
            ModelSpec(input_size=8)

    def test_needs_two_classes(self):
        with self.assertRaises(ParameterError):
            ModelSpec(num_classes=1)

    def test_layer_shapes_match_init(self):
        weights = init_weights(SMALL, seed=1)
        for layer, shape in zip(weights.layers(), SMALL.layer_shapes()):
            self.assertEqual(layer.shape, shape)


class TestProbabilities(unittest.TestCase):

    def test_softmax_sums_to_one(self):
        probs = softmax(np.array([1000.0, 1001.0, -5.0]))
        self.assertAlmostEqual(probs.sum(), 1.0)
        self.assertTrue(np.all(np.isfinite(probs)))

    def test_uniform_prediction_loss(self):
        model = LinearSoftmaxModel(np.zeros((10, 4, 4)))
        self.assertAlmostEqual(model.loss(np.ones((4, 4)), 3), math.log(10), places=6)
        self.assertAlmostEqual(model.loss(np.ones((4, 4)), 3), 2.302585, places=6)

    def test_label_out_of_range(self):
        model = LinearSoftmaxModel(np.zeros((2, 4, 4)))
        with self.assertRaises(ParameterError):
            model.loss(np.zeros((4, 4)), 2)

    def test_conv_prediction_is_distribution(self):
        weights = init_weights(SMALL, seed=2)
        prediction = predict(weights, np.random.default_rng(0).random((24, 24)))
        self.assertEqual(prediction.probabilities.shape, (3,))
        self.assertAlmostEqual(float(prediction.probabilities.sum()), 1.0)
        self.assertEqual(prediction.label, int(np.argmax(prediction.probabilities)))

    def test_batch_matches_single(self):
        weights = init_weights(SMALL, seed=2)
        images = np.random.default_rng(1).random((3, 24, 24))
        batch = predict_batch(weights, images)
        for image, row in zip(images, batch):
            np.testing.assert_allclose(predict(weights, image).probabilities, row, atol=1e-12)

    def test_wrong_input_shape(self):
        weights = init_weights(SMALL, seed=2)
        with self.assertRaises(ParameterError):
            predict(weights, np.zeros((20, 20)))


class TestInputGradient(unittest.TestCase):

    def test_conv_gradient_matches_finite_differences(self):
        weights = init_weights(SMALL, seed=3)
        rng = np.random.default_rng(4)
        image = rng.random((24, 24))
        grad = input_gradient(weights, image, 1)
        for _ in range(8):
            i, j = rng.integers(0, 24, size=2)

            def f(v, i=i, j=j):
                shifted = image.copy()
                shifted[i, j] = v[0]
                return cross_entropy_loss(weights, shifted, 1)

            numeric = finite_difference(f, [image[i, j]], 1e-6)[0]
            self.assertLessEqual(abs(grad[i, j] - numeric), 1e-3 * abs(numeric) + 1e-7)

    def test_batch_gradients_use_each_label(self):
        weights = init_weights(SMALL, seed=3)
        images = np.random.default_rng(6).random((2, 24, 24))
        batch = input_gradient_batch(weights, images, [0, 2])
        np.testing.assert_allclose(batch[0], input_gradient(weights, images[0], 0), atol=1e-12)
        np.testing.assert_allclose(batch[1], input_gradient(weights, images[1], 2), atol=1e-12)

    def test_linear_gradient_closed_form(self):
        rng = np.random.default_rng(7)
        weight = rng.standard_normal((3, 5, 5))
        model = LinearSoftmaxModel(weight, np.array([0.1, -0.2, 0.3]))
        image = rng.random((5, 5))
        probs = model.predict(image).probabilities
        expected = np.einsum("k,khw->hw", probs - np.eye(3)[2], weight)
        np.testing.assert_allclose(model.input_gradient(image, 2), expected, atol=1e-12)

    def test_models_satisfy_protocol(self):
        self.assertIsInstance(ConvClassifier(init_weights(SMALL)), Classifier)
        self.assertIsInstance(LinearSoftmaxModel(np.zeros((2, 3, 3))), Classifier)


class TestTraining(unittest.TestCase):

    def test_loss_decreases_on_separable_data(self):
        images, labels = _toy_dataset()
        spec = ModelSpec(input_size=24, num_classes=2)
        weights = train(images, labels, spec, TrainConfig(epochs=30, learning_rate=0.05, batch_size=4))
        self.assertEqual(len(weights.loss_history), 31)
        self.assertLess(weights.loss_history[-1], weights.loss_history[0])
        self.assertGreaterEqual(evaluate_accuracy(ConvClassifier(weights), images, labels), 0.9)

    def test_zero_epochs_returns_initialization(self):
        images, labels = _toy_dataset(4)
        spec = ModelSpec(input_size=24, num_classes=2)
        weights = train(images, labels, spec, TrainConfig(epochs=0, seed=9))
        reference = init_weights(spec, seed=9)
        for a, b in zip(weights.layers(), reference.layers()):
            np.testing.assert_array_equal(a, b)

    def test_training_is_deterministic(self):
        images, labels = _toy_dataset(8)
        spec = ModelSpec(input_size=24, num_classes=2)
        config = TrainConfig(epochs=2, seed=1)
        a, b = train(images, labels, spec, config), train(images, labels, spec, config)
        for x, y in zip(a.layers(), b.layers()):
            np.testing.assert_array_equal(x, y)

    def test_empty_dataset(self):
        with self.assertRaises(ParameterError):
            train(np.zeros((0, 24, 24)), [], SMALL)

    def test_label_outside_classes(self):
        with self.assertRaises(ParameterError):
            train(np.zeros((2, 24, 24)), [0, 5], SMALL)

    def test_invalid_train_config(self):
        with self.assertRaises(ParameterError):
            TrainConfig(learning_rate=0.0)

    def test_negative_seed_rejected(self):
        with self.assertRaises(ParameterError):
            TrainConfig(seed=-1)

    def test_accuracy_of_empty_set(self):
        with self.assertRaises(ParameterError):
            evaluate_accuracy(ConvClassifier(init_weights(SMALL)), [], [])

    @unittest.skipUnless(SLOW, "set OTSA_SLOW_TESTS=1 to run")
    def test_default_synthetic_accuracy(self):
        train_set, test_set = prepare_split(generate_synthetic_dataset(SynthConfig()), seed=0)
        weights = train(
            np.stack([s.image for s in train_set]), [s.label for s in train_set], ModelSpec()
        )
        accuracy = evaluate_accuracy(
            ConvClassifier(weights), [s.image for s in test_set], [s.label for s in test_set]
        )
        self.assertGreaterEqual(len(test_set), 100)
        self.assertGreaterEqual(accuracy, 0.9)


class TestWeightFiles(unittest.TestCase):

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.path = os.path.join(self.tmp.name, "model.otsaw")
        self.weights = init_weights(SMALL, seed=11)

    def tearDown(self):
        self.tmp.cleanup()

    def test_round_trip(self):
        save_weights(self.weights, self.path)
        loaded = load_weights(self.path)
        self.assertEqual(loaded.spec, SMALL)
        self.assertEqual(loaded.seed, 11)
        for a, b in zip(self.weights.layers(), loaded.layers()):
            np.testing.assert_array_equal(a, b)

    def test_bad_magic(self):
        with open(self.path, "wb") as handle:
            handle.write(b"NOTAW1" + b"\0" * 64)
        with self.assertRaises(FormatError) as ctx:
            load_weights(self.path)
        self.assertEqual(ctx.exception.field, "magic")

    def test_truncated_files(self):
        save_weights(self.weights, self.path)
        with open(self.path, "rb") as handle:
            data = handle.read()
        for cut in (3, 10, 40, len(data) - 1):
            with open(self.path, "wb") as handle:
                handle.write(data[:cut])
            with self.assertRaises(FormatError):
                load_weights(self.path)

    def test_trailing_bytes(self):
        save_weights(self.weights, self.path)
        with open(self.path, "ab") as handle:
            handle.write(b"\0")
        with self.assertRaises(FormatError) as ctx:
            load_weights(self.path)
        self.assertEqual(ctx.exception.field, "data")

    def test_non_finite_weights_rejected(self):
        broken = self.weights.copy()
        broken.dense_b[0] = np.nan
        save_weights(broken, self.path)
        with self.assertRaises(FormatError):
            load_weights(self.path)

    def test_copy_is_independent(self):
        clone = self.weights.copy()
        clone.conv1_w[0, 0, 0, 0] += 1.0
        self.assertNotEqual(clone.conv1_w[0, 0, 0, 0], self.weights.conv1_w[0, 0, 0, 0])
        self.assertIsInstance(clone, Weights)


if __name__ == "__main__":
    unittest.main()
