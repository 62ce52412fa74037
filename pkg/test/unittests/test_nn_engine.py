import os
import tempfile
import unittest

import numpy as np

from liner_blc_transfer.blc_module import build_blc_network
from liner_blc_transfer.exceptions import ConfigError, InvalidInputError, \
    ModelFormatError, StateError, TrainingError
from liner_blc_transfer.nn_engine import ChannelSqueeze, Conv1d, Dense, InstanceNorm1d, \
    LeakyReLU, Linear, MAELoss, MSELoss, OptimizerState, ReLU, Sequential, adam_update, \
    fit, flatten_parameters, instance_norm, leaky_relu, linear, load_parameters, \
    loss_mae, loss_mse, plateau_scheduler_update, read_weight_bundle, relu, \
    write_weight_bundle
from liner_blc_transfer.param_module import build_param_network

STEP = 1e-5


def rel_error(a, b):
    a, b = np.ravel(a), np.ravel(b)
    return np.linalg.norm(a - b) / max(np.linalg.norm(a) + np.linalg.norm(b), 1e-12)


def numeric_grad(f, array):
    grad = np.zeros_like(array)
    for idx in np.ndindex(array.shape):
        old = array[idx]
        array[idx] = old + STEP
        up = f()
        array[idx] = old - STEP
        down = f()
        array[idx] = old
        grad[idx] = (up - down) / (2 * STEP)
    return grad


class GradCheck:
    def assertGradClose(self, analytic, numeric):
        # true-zero gradients leave only finite-difference noise
        if np.max(np.abs(analytic - numeric), initial=0.0) <= 1e-8:
            return
        self.assertLessEqual(rel_error(analytic, numeric), 1e-4)

    def check_module(self, module, x, rng):
        weights = rng.normal(size=module.apply(x).shape)

        def loss():
            return float(np.sum(weights * module.apply(x)))

        module.forward(x)
        dx = module.backward(weights)
        self.assertGradClose(dx, numeric_grad(loss, x))
        for p, g in zip(module.parameters(), module.gradients()):
            analytic = g.copy()
            self.assertGradClose(analytic, numeric_grad(loss, p))


def away_from_zero(rng, shape):
    x = rng.normal(size=shape)
    return x + np.sign(x) * 0.05


class TestArchitectureCounts(unittest.TestCase):
    def test_param_network(self):
        net = build_param_network()
        self.assertEqual(net.layer_counts(), [832, 8320, 33024, 65792, 771])
        self.assertEqual(net.param_count, 108739)

    def test_blc_network(self):
        net = build_blc_network()
        self.assertEqual(net.layer_counts(), [2304, 20544, 41088, 82048, 164096, 327936,
                                              655872, 1311232, 2561])
        self.assertEqual(net.param_count, 2607681)

    def test_layer_counts(self):
        self.assertEqual(Dense(12, 64).param_count, 832)
        self.assertEqual(Dense(128, 256).param_count, 33024)
        self.assertEqual(Conv1d(7, 64, 5).param_count, 2304)
        self.assertEqual(Conv1d(512, 1, 5).param_count, 2561)


class TestLayers(unittest.TestCase):
    def test_dense_identity(self):
        layer = Dense(2, 2)
        layer.weight[...] = np.eye(2)
        self.assertTrue(np.array_equal(layer.apply(np.array([1.0, 2.0])), [1.0, 2.0]))
        with self.assertRaises(InvalidInputError):
            layer.apply(np.ones(3))

    def test_conv_identity_kernel(self):
        layer = Conv1d(1, 1, 3)
        layer.weight[...] = np.array([0.0, 1.0, 0.0]).reshape(1, 1, 3)
        x = np.random.default_rng(0).normal(size=(9, 1))
        self.assertTrue(np.allclose(layer.apply(x), x))

    def test_conv_same_padding(self):
        x = np.random.default_rng(1).normal(size=(2, 11, 3))
        for k in (1, 3, 5, 7):
            self.assertEqual(Conv1d(3, 4, k).apply(x).shape, (2, 11, 4))
        with self.assertRaises(ConfigError):
            Conv1d(3, 4, 4)
        with self.assertRaises(ConfigError):
            Conv1d(3, 4, 3, padding="circular")

    def test_conv_matches_direct_sum(self):
        rng = np.random.default_rng(2)
        layer = Conv1d(2, 3, 5, rng=rng)
        layer.bias[...] = rng.normal(size=3)
        x = rng.normal(size=(8, 2))
        xp = np.pad(x, ((2, 2), (0, 0)))
        expected = np.zeros((8, 3))
        for pos in range(8):
            for o in range(3):
                expected[pos, o] = layer.bias[o] + np.sum(layer.weight[o].T * xp[pos:pos + 5])
        self.assertTrue(np.allclose(layer.apply(x), expected))

    def test_instance_norm(self):
        out = instance_norm(np.array([[1.0], [2.0], [3.0]]))
        self.assertTrue(np.allclose(out[:, 0], [-1.2247, 0.0, 1.2247], atol=1e-4))
        self.assertTrue(np.allclose(instance_norm(np.full((3, 1), 4.2)), 0.0))
        x = np.random.default_rng(3).normal(3.0, 2.0, size=(4, 50, 6))
        out = instance_norm(x)
        self.assertLessEqual(np.max(np.abs(out.mean(axis=1))), 1e-6)
        self.assertLessEqual(np.max(np.abs(out.var(axis=1) - 1.0)), 1e-3)
        with self.assertRaises(InvalidInputError):
            instance_norm(np.ones((1, 3)))

    def test_activations(self):
        self.assertAlmostEqual(float(leaky_relu(-1.0)), -0.2)
        self.assertEqual(float(relu(-3.0)), 0.0)
        x = np.array([-1.0, 0.5])
        self.assertTrue(np.array_equal(linear(x), x))

    def test_squeeze(self):
        self.assertEqual(ChannelSqueeze().apply(np.ones((2, 5, 1))).shape, (2, 5))
        with self.assertRaises(InvalidInputError):
            ChannelSqueeze().apply(np.ones((2, 5, 2)))


class TestLosses(unittest.TestCase):
    def test_examples(self):
        self.assertEqual(loss_mae([1.0, 2.0], [1.0, 2.0]), 0.0)
        self.assertAlmostEqual(loss_mae([2.0, 0.0], [0.0, 0.0]), 1.0)
        self.assertAlmostEqual(loss_mse([2.0, 0.0], [0.0, 0.0]), 2.0)
        with self.assertRaises(InvalidInputError):
            loss_mae([1.0], [1.0, 2.0])

    def test_scalar_oracle(self):
        rng = np.random.default_rng(4)
        p, t = rng.normal(size=5), rng.normal(size=5)
        mae = sum(abs(a - b) for a, b in zip(p, t)) / 5
        mse = sum((a - b) ** 2 for a, b in zip(p, t)) / 5
        self.assertAlmostEqual(loss_mae(p, t), mae, places=12)
        self.assertAlmostEqual(loss_mse(p, t), mse, places=12)

    def test_backward_needs_forward(self):
        with self.assertRaises(StateError):
            MAELoss().backward()


class TestGradients(GradCheck, unittest.TestCase):
    def setUp(self):
        self.rng = np.random.default_rng(5)

    def shape(self):
        return int(self.rng.integers(1, 4)), int(self.rng.integers(3, 8)), \
            int(self.rng.integers(1, 4))

    def test_dense(self):
        for _ in range(20):
            b, k, c = self.shape()
            out = int(self.rng.integers(1, 5))
            self.check_module(Dense(c, out, rng=self.rng), self.rng.normal(size=(b, c)),
                              self.rng)

    def test_conv(self):
        for _ in range(20):
            b, k, c = self.shape()
            size = int(self.rng.choice([1, 3, 5]))
            layer = Conv1d(c, int(self.rng.integers(1, 4)), size, rng=self.rng)
            layer.bias[...] = self.rng.normal(size=layer.bias.shape)
            self.check_module(layer, self.rng.normal(size=(b, k, c)), self.rng)

    def test_conv_reflect(self):
        for _ in range(5):
            b, k, c = self.shape()
            layer = Conv1d(c, 2, 3, padding="reflect", rng=self.rng)
            self.check_module(layer, self.rng.normal(size=(b, k, c)), self.rng)

    def test_instance_norm(self):
        for _ in range(20):
            b, k, c = self.shape()
            self.check_module(InstanceNorm1d(), self.rng.normal(size=(b, k, c)), self.rng)

    def test_instance_norm_constant_channel(self):
        layer = InstanceNorm1d()
        layer.forward(np.full((1, 5, 1), 2.5))
        self.assertTrue(np.allclose(layer.backward(np.ones((1, 5, 1))), 0.0))

    def test_activations(self):
        for _ in range(20):
            b, k, c = self.shape()
            for module in (ReLU(), LeakyReLU(0.2), Linear()):
                self.check_module(module, away_from_zero(self.rng, (b, k, c)), self.rng)

    def test_losses(self):
        for _ in range(20):
            b, k, c = self.shape()
            pred = self.rng.normal(size=(b, k))
            target = pred + self.rng.choice([-1.0, 1.0], size=(b, k)) * \
                self.rng.uniform(0.05, 1.0, size=(b, k))
            for loss in (MAELoss(), MSELoss()):
                loss.forward(pred, target)
                analytic = loss.backward()
                numeric = numeric_grad(lambda: loss.__class__().forward(pred, target), pred)
                self.assertLessEqual(rel_error(analytic, numeric), 1e-4)

    def test_sequential(self):
        net = Sequential(Conv1d(3, 4, 3, rng=self.rng), InstanceNorm1d(), LeakyReLU(),
                         Conv1d(4, 1, 3, rng=self.rng), ChannelSqueeze())
        self.check_module(net, self.rng.normal(size=(2, 6, 3)), self.rng)

    def test_bias_before_instance_norm_has_no_gradient(self):
        conv = Conv1d(3, 4, 3, rng=self.rng)
        net = Sequential(conv, InstanceNorm1d(), LeakyReLU(), Conv1d(4, 1, 3, rng=self.rng),
                         ChannelSqueeze())
        out = net.forward(self.rng.normal(size=(2, 6, 3)))
        net.backward(self.rng.normal(size=out.shape))
        self.assertLessEqual(np.max(np.abs(conv.grad_bias)), 1e-10)
        self.assertGreater(np.max(np.abs(conv.grad_weight)), 1e-6)

    def test_dense_mse_closed_form(self):
        layer = Dense(3, 2, rng=self.rng)
        x = self.rng.normal(size=(1, 3))
        t = self.rng.normal(size=(1, 2))
        loss = MSELoss()
        loss.forward(layer.forward(x), t)
        layer.backward(loss.backward())
        residual = (x @ layer.weight.T + layer.bias - t)[0]
        expected = 2 * np.outer(residual, x[0]) / 2
        self.assertTrue(np.allclose(layer.grad_weight, expected))

    def test_backward_without_forward(self):
        with self.assertRaises(StateError):
            Dense(2, 2).backward(np.ones(2))


class TestOptimizer(unittest.TestCase):
    def test_first_step(self):
        p = [np.array([1.0])]
        state = OptimizerState.create(p, 0.01)
        adam_update(state, p, [np.array([1.0])])
        self.assertAlmostEqual(p[0][0], 1.0 - 0.01 / (1 + 1e-8), places=12)
        self.assertEqual(state.step, 1)

    def test_zero_gradient(self):
        p = [np.array([0.3, -0.2])]
        state = OptimizerState.create(p, 0.1)
        for _ in range(5):
            adam_update(state, p, [np.zeros(2)])
        self.assertTrue(np.array_equal(p[0], [0.3, -0.2]))

    def test_scalar_oracle(self):
        p = [np.array([0.0])]
        state = OptimizerState.create(p, 0.1)
        x, m, v = 0.0, 0.0, 0.0
        for t in (1, 2):
            adam_update(state, p, [np.array([1.0])])
            m = 0.9 * m + (1 - 0.9)
            v = 0.999 * v + (1 - 0.999)
            x -= 0.1 * (m / (1 - 0.9 ** t)) / ((v / (1 - 0.999 ** t)) ** 0.5 + 1e-8)
        self.assertAlmostEqual(p[0][0], x, places=12)

    def test_non_finite_gradient(self):
        p = [np.zeros(2)]
        state = OptimizerState.create(p, 0.1)
        with self.assertRaises(TrainingError):
            adam_update(state, p, [np.array([np.nan, 0.0])])
        self.assertEqual(state.step, 0)

    def test_shape_mismatch(self):
        p = [np.zeros(2)]
        with self.assertRaises(InvalidInputError):
            adam_update(OptimizerState.create(p, 0.1), p, [np.zeros(3)])


class TestScheduler(unittest.TestCase):
    def run_losses(self, losses, lr=0.09):
        state = OptimizerState.create([], lr)
        for loss in losses:
            plateau_scheduler_update(state, loss)
        return state.lr

    def test_decreasing(self):
        self.assertEqual(self.run_losses([1.0, 0.9, 0.8, 0.7, 0.6, 0.5, 0.4, 0.3]), 0.09)

    def test_one_plateau(self):
        self.assertAlmostEqual(self.run_losses([1.0] + [1.0] * 4), 0.09)
        self.assertAlmostEqual(self.run_losses([1.0] + [1.0] * 5), 0.03)

    def test_two_plateaus(self):
        self.assertAlmostEqual(self.run_losses([1.0] + [1.0] * 10), 0.01)

    def test_non_finite(self):
        with self.assertRaises(TrainingError):
            self.run_losses([float("nan")])


class TestFit(unittest.TestCase):
    def make_data(self):
        rng = np.random.default_rng(6)
        x = rng.normal(size=(24, 3))
        y = x @ np.array([[1.0], [-2.0], [0.5]])
        return x, y

    def make_net(self):
        rng = np.random.default_rng(0)
        return Sequential(Dense(3, 8, rng=rng), LeakyReLU(), Dense(8, 1, rng=rng))

    def test_loss_decreases(self):
        x, y = self.make_data()
        net = self.make_net()
        history = fit(net, x, y, epochs=60, lr=2e-2, batch_size=4, loss="mse")
        self.assertLess(history.losses[-1], 0.25 * history.losses[0])
        self.assertEqual(len(history.lrs), 60)

    def test_deterministic(self):
        x, y = self.make_data()
        a, b = self.make_net(), self.make_net()
        fit(a, x, y, epochs=3, lr=1e-2, batch_size=5, seed=3)
        fit(b, x, y, epochs=3, lr=1e-2, batch_size=5, seed=3)
        self.assertTrue(np.array_equal(flatten_parameters([a]), flatten_parameters([b])))

    def test_validation_drives_history(self):
        x, y = self.make_data()
        history = fit(self.make_net(), x, y, epochs=2, lr=1e-3, validation=(x[:4], y[:4]))
        self.assertEqual(len(history.val_losses), 2)

    def test_bad_arguments(self):
        x, y = self.make_data()
        with self.assertRaises(InvalidInputError):
            fit(self.make_net(), x, y[:5], epochs=1, lr=1e-3)
        with self.assertRaises(ConfigError):
            fit(self.make_net(), x, y, epochs=1, lr=1e-3, loss="huber")


class TestWeightBundle(unittest.TestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.path = os.path.join(self.tmp.name, "w.htwt")

    def tearDown(self):
        self.tmp.cleanup()

    def test_round_trip(self):
        net = build_param_network(hidden=(4,), seed=2)
        write_weight_bundle(self.path, {"architecture": "x", "std": [0.1, 1e-7]},
                            flatten_parameters([net]))
        header, flat = read_weight_bundle(self.path)
        self.assertEqual(header["architecture"], "x")
        self.assertEqual(header["std"], [0.1, 1e-7])
        other = build_param_network(hidden=(4,), seed=9)
        load_parameters([other], flat)
        self.assertTrue(np.array_equal(flatten_parameters([other]), flatten_parameters([net])))
        with open(self.path, "rb") as f:
            self.assertIn(b"\nHTWT", f.read())

    def test_errors(self):
        write_weight_bundle(self.path, {}, np.arange(4.0))
        with open(self.path, "rb") as f:
            data = f.read()
        with open(self.path, "wb") as f:
            f.write(data[:-3])
        with self.assertRaises(ModelFormatError):
            read_weight_bundle(self.path)
        with open(self.path, "wb") as f:
            f.write(data.replace(b"HTWT", b"XXXX"))
        with self.assertRaises(ModelFormatError):
            read_weight_bundle(self.path)
        with self.assertRaises(ModelFormatError):
            load_parameters([Dense(2, 2)], np.zeros(5))
