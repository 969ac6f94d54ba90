import os
import shutil
import tempfile
import unittest

import numpy as np

from autodiff import Tape, Tensor, backward, no_grad
from autodiff import functional as F
from autodiff.checkpoint import MAGIC, load_checkpoint, save_checkpoint
from autodiff.gradcheck import gradcheck
from core.errors import CheckpointFormatError, DisconnectedLoss, NonDeterministicFunction, ShapeMismatch


class TestPrimitives(unittest.TestCase):
    def setUp(self):
        self.rng = np.random.default_rng(0)
    def test_relu(self):
        np.testing.assert_array_equal(F.relu(Tensor([-1.0, 2.0])).data, [0.0, 2.0])
    def test_softmax_uniform(self):
        np.testing.assert_allclose(F.softmax(Tensor([0.0, 0.0, 0.0])).data, [1 / 3] * 3, atol=1e-15)
        rows = F.softmax(Tensor(self.rng.normal(size=(5, 7))), axis=-1).data
        np.testing.assert_allclose(rows.sum(axis=-1), 1.0, atol=1e-12)
    def test_delta_kernel(self):
        x = Tensor(self.rng.normal(size=(1, 1, 4, 4)))
        w = np.zeros((1, 1, 3, 3))
        w[0, 0, 1, 1] = 1.0
        np.testing.assert_allclose(F.conv2d(x, Tensor(w), padding=1).data, x.data)
    def test_conv_transpose_adjoint(self):
        for stride, k, pad, size in ((1, 3, 1, 5), (2, 3, 1, 7), (2, 3, 1, 8), (2, 1, 0, 6)):
            x = self.rng.normal(size=(2, 3, size, size))
            w = self.rng.normal(size=(4, 3, k, k))
            y = F.conv2d(Tensor(x), Tensor(w), stride=stride, padding=pad).data
            r = self.rng.normal(size=y.shape)
            back = F.conv_transpose2d(Tensor(r), Tensor(w), stride=stride, padding=pad,
                                      output_size=(size, size)).data
            self.assertEqual(back.shape, x.shape)
            self.assertAlmostEqual(float(np.sum(y * r)), float(np.sum(x * back)), delta=1e-10 * np.sum(np.abs(y * r)))
    def test_group_norm_statistics(self):
        x = Tensor(self.rng.normal(3.0, 2.0, size=(2, 8, 4, 4)))
        out = F.group_norm(x, 4, Tensor(np.ones(8)), Tensor(np.zeros(8))).data.reshape(2, 4, -1)
        np.testing.assert_allclose(out.mean(axis=2), 0.0, atol=1e-8)
        np.testing.assert_allclose(out.var(axis=2), 1.0, atol=1e-4)
    def test_max_pool_sizes(self):
        for size, expected in ((30, 15), (15, 7), (7, 3), (6, 3), (3, 1), (1, 1)):
            out = F.max_pool2d(Tensor(self.rng.normal(size=(1, 2, size, size))))
            self.assertEqual(out.shape, (1, 2, expected, expected))
    def test_shape_errors(self):
        with self.assertRaises(ShapeMismatch):
            F.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))
        with self.assertRaises(ShapeMismatch):
            F.conv2d(Tensor(np.ones((1, 2, 4, 4))), Tensor(np.ones((1, 3, 3, 3))))
        with self.assertRaises(ShapeMismatch):
            F.group_norm(Tensor(np.ones((1, 6, 2, 2))), 4, Tensor(np.ones(6)), Tensor(np.zeros(6)))


class TestBackward(unittest.TestCase):
    def setUp(self):
        self.rng = np.random.default_rng(1)
    def test_sum_gradient(self):
        x = Tensor(self.rng.normal(size=(3, 4)), requires_grad=True)
        with Tape() as tape:
            loss = F.sum(x)
        backward(tape, loss)
        np.testing.assert_array_equal(x.grad, np.ones((3, 4)))
    def test_square_norm_gradient(self):
        x = Tensor(self.rng.normal(size=5), requires_grad=True)
        with Tape() as tape:
            loss = F.sum(F.square(x))
        backward(tape, loss)
        np.testing.assert_allclose(x.grad, 2 * x.data)
    def test_disconnected(self):
        x = Tensor(np.ones(3), requires_grad=True)
        with Tape() as tape:
            F.sum(x)
        with self.assertRaises(DisconnectedLoss):
            backward(tape, Tensor(1.0))
    def test_no_grad_records_nothing(self):
        x = Tensor(np.ones(3), requires_grad=True)
        with Tape() as tape:
            with no_grad():
                F.sum(x)
        self.assertEqual(len(tape), 0)
    def test_two_layer_conv_net(self):
        x = Tensor(self.rng.normal(size=(1, 2, 5, 5)))
        w1 = Tensor(0.5 * self.rng.normal(size=(2, 2, 3, 3)), name='w1')
        w2 = Tensor(0.5 * self.rng.normal(size=(1, 2, 3, 3)), name='w2')
        b1 = Tensor(0.1 * self.rng.normal(size=2), name='b1')

        def net(params):
            h = F.leaky_relu(F.conv2d(x, params[0], params[2], stride=1, padding=1))
            return F.mean(F.square(F.conv2d(h, params[1], stride=2, padding=1)))
        report = gradcheck(net, [w1, w2, b1], eps=1e-5, tol=1e-4)
        self.assertEqual(report.checked_elements, 36 + 18 + 2)
        self.assertTrue(report.passed, report.per_input)


class TestGradcheck(unittest.TestCase):
    def setUp(self):
        self.rng = np.random.default_rng(2)
    def test_linear_map(self):
        x = Tensor(self.rng.normal(size=(4, 3)), name='x')
        w = Tensor(self.rng.normal(size=(2, 3)), name='w')
        c = Tensor(self.rng.normal(size=(4, 2)))
        report = gradcheck(lambda p: F.sum(F.mul(F.linear(p[0], p[1]), c)), [x, w])
        self.assertLess(report.max_rel_error, 1e-8)
    def test_group_norm(self):
        x = Tensor(self.rng.normal(size=(2, 8, 4, 4)), name='x')
        gamma = Tensor(self.rng.normal(1.0, 0.1, size=8), name='gamma')
        beta = Tensor(self.rng.normal(size=8), name='beta')
        c = Tensor(self.rng.normal(size=(2, 8, 4, 4)))
        report = gradcheck(lambda p: F.sum(F.mul(F.group_norm(p[0], 4, p[1], p[2]), c)), [x, gamma, beta])
        self.assertTrue(report.passed, report.per_input)
    def test_attention_pieces(self):
        q = Tensor(self.rng.normal(size=(2, 3, 4)), name='q')
        k = Tensor(self.rng.normal(size=(2, 5, 4)), name='k')
        c = Tensor(self.rng.normal(size=(2, 3, 5)))

        def fn(p):
            scores = F.matmul(p[0], F.transpose(p[1], (0, 2, 1)))
            return F.sum(F.mul(F.softmax(scores, axis=-1), c))
        self.assertTrue(gradcheck(fn, [q, k]).passed)
    def test_transposed_conv_and_norms(self):
        x = Tensor(self.rng.normal(size=(1, 2, 3, 3)), name='x')
        w = Tensor(self.rng.normal(size=(2, 3, 3, 3)), name='w')
        g = Tensor(self.rng.normal(1.0, 0.1, size=3), name='g')
        b = Tensor(self.rng.normal(size=3), name='b')
        c = Tensor(self.rng.normal(size=(1, 3, 6, 6)))

        def fn(p):
            up = F.conv_transpose2d(p[0], p[1], stride=2, padding=1, output_size=(6, 6))
            normed = F.layer_norm(F.transpose(up, (0, 2, 3, 1)), p[2], p[3])
            return F.sum(F.mul(F.transpose(normed, (0, 3, 1, 2)), c))
        self.assertTrue(gradcheck(fn, [x, w, g, b]).passed)
    def test_non_deterministic(self):
        rng = np.random.default_rng(3)
        x = Tensor(np.ones(3))
        with self.assertRaises(NonDeterministicFunction):
            gradcheck(lambda p: F.sum(F.scale(p[0], float(rng.normal()))), [x])


class TestCheckpoint(unittest.TestCase):
    def setUp(self):
        self.test_dir = tempfile.mkdtemp()
        self.filename = os.path.join(self.test_dir, 'model.ckpt')
    def tearDown(self):
        shutil.rmtree(self.test_dir)
    def test_round_trip(self):
        rng = np.random.default_rng(4)
        params = {'a.weight': Tensor(rng.normal(size=(3, 2))), 'a.bias': Tensor(np.zeros(3))}
        save_checkpoint(self.filename, params, {'epoch': 7})
        loaded, meta = load_checkpoint(self.filename)
        self.assertEqual(list(loaded), ['a.weight', 'a.bias'])
        np.testing.assert_array_equal(loaded['a.weight'], params['a.weight'].data)
        self.assertEqual(meta, {'epoch': 7})
        with open(self.filename, 'rb') as f:
            self.assertTrue(f.read().startswith(MAGIC))
    def test_bad_files(self):
        with open(self.filename, 'wb') as f:
            f.write(b'not a checkpoint')
        with self.assertRaises(CheckpointFormatError):
            load_checkpoint(self.filename)
        save_checkpoint(self.filename, {'w': Tensor(np.ones(4))})
        with open(self.filename, 'rb') as f:
            raw = f.read()
        with open(self.filename, 'wb') as f:
            f.write(raw[:-8])
        with self.assertRaises(CheckpointFormatError):
            load_checkpoint(self.filename)


if __name__ == '__main__':
    unittest.main()
