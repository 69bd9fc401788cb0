"""Tests for the Adam optimizer."""

from unittest import TestCase

import numpy as np

from misf_inpaint.lib import ops
from misf_inpaint.lib.errors import ContractError
from misf_inpaint.lib.optim import AdamConfig, AdamState, adam_step
from misf_inpaint.lib.tensor import Parameter, backward


class TestAdam(TestCase):
    """Unit test cases for adam_step."""

    def test_first_step_moves_by_lr(self):
        p = Parameter(np.array([0.5]), "p")
        p.grad = np.array([3.0])
        adam_step([p], AdamState(), AdamConfig())
        self.assertAlmostEqual(float(p.data[0]), 0.5 - 1e-4, places=10)

    def test_zero_gradient(self):
        p = Parameter(np.array([0.5]), "p")
        p.grad = np.zeros(1)
        state = AdamState()
        adam_step([p], state, AdamConfig())
        self.assertEqual(float(p.data[0]), 0.5)
        self.assertEqual(state.step, 1)

    def test_gradients_zeroed(self):
        p = Parameter(np.array([1.0, 2.0]), "p")
        p.grad = np.array([1.0, -1.0])
        adam_step([p], AdamState(), AdamConfig())
        np.testing.assert_array_equal(p.grad, 0.0)

    def test_quadratic_descends(self):
        p = Parameter(np.array([1.0]), "x")
        state = AdamState()
        config = AdamConfig(lr=0.01)
        history = [abs(float(p.data[0]))]
        for _ in range(50):
            backward(ops.total(ops.square(p)))
            adam_step([p], state, config)
            history.append(abs(float(p.data[0])))
        self.assertTrue(all(b < a for a, b in zip(history, history[1:])))

    def test_missing_gradient(self):
        with self.assertRaises(ContractError):
            adam_step([Parameter(np.zeros(1), "p")], AdamState(), AdamConfig())

    def test_config_validation(self):
        with self.assertRaises(ContractError):
            AdamConfig(lr=0.0)
        with self.assertRaises(ContractError):
            AdamConfig(beta1=1.0)
