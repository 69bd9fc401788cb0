"""Tests for the primitive operations."""

from unittest import TestCase

import numpy as np

from misf_inpaint.lib import ops
from misf_inpaint.lib.errors import ContractError
from misf_inpaint.lib.tensor import Tensor


def naive_conv(x, w, b, stride, padding):
    top, left, bottom, right = ops.as_padding(padding)
    xp = np.pad(x, ((0, 0), (0, 0), (top, bottom), (left, right)))
    batch, _, height, width = xp.shape
    c_out, _, k, _ = w.shape
    out_h = (height - k) // stride + 1
    out_w = (width - k) // stride + 1
    out = np.zeros((batch, c_out, out_h, out_w))
    for n in range(batch):
        for o in range(c_out):
            for i in range(out_h):
                for j in range(out_w):
                    patch = xp[n, :, i * stride : i * stride + k, j * stride : j * stride + k]
                    out[n, o, i, j] = np.sum(patch * w[o]) + (b[o] if b is not None else 0.0)
    return out


class TestConvolution(TestCase):
    """Unit test cases for conv2d and conv_transpose2d."""

    def setUp(self):
        self.rng = np.random.default_rng(3)

    def test_conv2d_matches_loop(self):
        for stride, padding in ((1, 0), (1, 3), (2, 1), (1, (1, 1, 2, 2))):
            x = self.rng.standard_normal((2, 3, 9, 8))
            w = self.rng.standard_normal((4, 3, 4, 4))
            b = self.rng.standard_normal(4)
            out = ops.conv2d(Tensor(x), Tensor(w), Tensor(b), stride, padding)
            np.testing.assert_allclose(
                out.numpy(), naive_conv(x, w, b, stride, padding), atol=1e-12
            )

    def test_conv_transpose_is_adjoint_of_conv(self):
        x = self.rng.standard_normal((2, 3, 8, 8))
        w = self.rng.standard_normal((5, 3, 4, 4))
        y = self.rng.standard_normal((2, 5, 4, 4))
        forward = ops.conv2d(Tensor(x), Tensor(w), None, 2, 1).numpy()
        transposed = ops.conv_transpose2d(Tensor(y), Tensor(w), None, 2, 1).numpy()
        self.assertEqual(transposed.shape, x.shape)
        self.assertAlmostEqual(float(np.sum(forward * y)), float(np.sum(x * transposed)), places=9)

    def test_conv_transpose_output_size(self):
        out = ops.conv_transpose2d(
            Tensor(np.zeros((1, 2, 16, 16))), Tensor(np.zeros((2, 1, 4, 4))), None, 2, 1
        )
        self.assertEqual(out.shape, (1, 1, 32, 32))

    def test_channel_mismatch(self):
        with self.assertRaises(ContractError):
            ops.conv2d(Tensor(np.zeros((1, 2, 4, 4))), Tensor(np.zeros((1, 3, 3, 3))))

    def test_as_padding(self):
        self.assertEqual(ops.as_padding(2), (2, 2, 2, 2))
        self.assertEqual(ops.as_padding((1, 2)), (1, 2, 1, 2))
        with self.assertRaises(ContractError):
            ops.as_padding((1, 2, 3))


class TestNormalisation(TestCase):
    """Unit test cases for pooling, instance norm and the Gram matrix."""

    def test_avg_pool(self):
        x = np.arange(16, dtype=np.float64).reshape(1, 1, 4, 4)
        out = ops.avg_pool2d(Tensor(x)).numpy()
        np.testing.assert_allclose(out[0, 0], [[2.5, 4.5], [10.5, 12.5]])

    def test_avg_pool_odd_size(self):
        with self.assertRaises(ContractError):
            ops.avg_pool2d(Tensor(np.zeros((1, 1, 5, 4))))

    def test_instance_norm_statistics(self):
        x = np.random.default_rng(0).normal(3.0, 2.0, size=(2, 3, 6, 6))
        out = ops.instance_norm(Tensor(x)).numpy()
        np.testing.assert_allclose(out.mean(axis=(2, 3)), 0.0, atol=1e-12)
        np.testing.assert_allclose(out.var(axis=(2, 3)), 1.0, atol=1e-3)

    def test_gram(self):
        f = np.random.default_rng(1).standard_normal((2, 3, 4, 5))
        out = ops.gram(Tensor(f)).numpy()
        flat = f.reshape(2, 3, 20)
        expected = np.einsum("bcn,bdn->bcd", flat, flat) / 60
        np.testing.assert_allclose(out, expected, atol=1e-12)
        np.testing.assert_allclose(out, out.transpose(0, 2, 1))

    def test_unknown_activation(self):
        with self.assertRaises(ContractError):
            ops.activation(Tensor(np.zeros(2)), "gelu")

    def test_softplus_is_stable(self):
        out = ops.softplus(Tensor(np.array([-800.0, 0.0, 800.0]))).numpy()
        np.testing.assert_allclose(out, [0.0, np.log(2.0), 800.0])

    def test_activation_values(self):
        x = Tensor(np.array([-10.0, 0.0, 3.0]))
        np.testing.assert_allclose(ops.activation(x, "relu").numpy(), [0.0, 0.0, 3.0])
        np.testing.assert_allclose(ops.activation(x, "leaky_relu").numpy(), [-2.0, 0.0, 3.0])
        self.assertEqual(ops.activation(x, "tanh").numpy()[1], 0.0)
        self.assertEqual(ops.activation(x, "sigmoid").numpy()[1], 0.5)

    def test_concat_channels_order(self):
        a = Tensor(np.zeros((2, 3, 4, 4)))
        b = Tensor(np.ones((2, 5, 4, 4)))
        out = ops.concat_channels(a, b).numpy()
        self.assertEqual(out.shape, (2, 8, 4, 4))
        self.assertTrue(np.all(out[:, :3] == 0))
        self.assertTrue(np.all(out[:, 3:] == 1))
        with self.assertRaises(ContractError):
            ops.concat_channels(a, Tensor(np.ones((2, 5, 4, 3))))

    def test_gram_of_constant_map(self):
        out = ops.gram(Tensor(np.full((1, 1, 6, 7), 0.5))).numpy()
        self.assertEqual(out.shape, (1, 1, 1))
        np.testing.assert_allclose(out, 0.25)
