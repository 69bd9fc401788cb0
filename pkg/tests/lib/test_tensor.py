"""Tests for the tape and gradient bookkeeping."""

from unittest import TestCase

import numpy as np

from misf_inpaint.lib import ops
from misf_inpaint.lib.errors import ContractError, NumericError
from misf_inpaint.lib.tensor import Parameter, Tensor, backward, frozen, no_grad, resolve_dtype


class TestTensor(TestCase):
    """Unit test cases for Tensor and backward."""

    def test_shared_input_accumulates(self):
        """x used twice must receive both contributions exactly once each."""
        x = Tensor(np.array([1.0, -2.0, 3.0]), requires_grad=True)
        loss = ops.total(ops.add(ops.mul(x, x), ops.mul(x, 3.0)))
        backward(loss)
        np.testing.assert_allclose(x.grad, 2 * x.data + 3.0)

    def test_diamond_graph(self):
        x = Tensor(np.array([0.5, 1.5]), requires_grad=True)
        y = ops.square(x)
        loss = ops.total(ops.add(ops.activation(y, "tanh"), ops.mul(y, 2.0)))
        backward(loss)
        expected = (1 - np.tanh(x.data**2) ** 2) * 2 * x.data + 4 * x.data
        np.testing.assert_allclose(x.grad, expected)

    def test_backward_twice_is_rejected(self):
        x = Tensor(np.ones(3), requires_grad=True)
        loss = ops.total(ops.square(x))
        backward(loss)
        with self.assertRaises(ContractError):
            backward(loss)

    def test_backward_needs_scalar(self):
        x = Tensor(np.ones(3), requires_grad=True)
        with self.assertRaises(ContractError):
            backward(ops.square(x))

    def test_no_grad_records_nothing(self):
        x = Tensor(np.ones(2), requires_grad=True)
        with no_grad():
            y = ops.square(x)
        self.assertTrue(y.is_leaf)
        self.assertFalse(y.requires_grad)

    def test_frozen_blocks_parameter_gradient(self):
        """The freeze applies to ops recorded inside the block, even if backward runs later."""
        w = Parameter(np.array([2.0]), "w")
        x = Tensor(np.array([3.0]), requires_grad=True)
        with frozen([w]):
            loss = ops.total(ops.mul(x, w))
        self.assertTrue(w.trainable)
        backward(loss)
        self.assertIsNone(w.grad)
        np.testing.assert_allclose(x.grad, [2.0])

    def test_mixed_precision_is_rejected(self):
        a = Tensor(np.ones(2, dtype=np.float32))
        b = Tensor(np.ones(2, dtype=np.float64))
        with self.assertRaises(ContractError):
            ops.add(a, b)

    def test_non_finite_result_raises(self):
        x = Tensor(np.array([1e308]))
        with self.assertRaises(NumericError):
            ops.mul(x, 1e10)

    def test_resolve_dtype(self):
        self.assertEqual(resolve_dtype("float64"), np.dtype(np.float64))
        with self.assertRaises(ContractError):
            resolve_dtype("float16")

    def test_detach_cuts_graph(self):
        x = Tensor(np.array([1.0, 2.0]), requires_grad=True)
        y = ops.square(x).detach()
        self.assertTrue(y.is_leaf)
        self.assertFalse(y.requires_grad)

    def test_grad_of_sum_is_ones(self):
        x = Tensor(np.random.default_rng(0).standard_normal((2, 3)), requires_grad=True)
        backward(ops.total(x))
        np.testing.assert_array_equal(x.grad, np.ones((2, 3)))

    def test_grad_of_half_square_is_input(self):
        x = Tensor(np.random.default_rng(1).standard_normal((4,)), requires_grad=True)
        backward(ops.mul(ops.total(ops.square(x)), 0.5))
        np.testing.assert_allclose(x.grad, x.data)
