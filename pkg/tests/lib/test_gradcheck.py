"""Tests for finite-difference checking and the registered check suite."""

import os
from unittest import TestCase, skipUnless

import numpy as np

from misf_inpaint.lib import ops
from misf_inpaint.lib.gradcheck import grad_check, grad_check_parameters, projection_weights
from misf_inpaint.lib.gradsuite import REGISTRY, run_suite
from misf_inpaint.lib.tensor import Parameter, Tensor, record

SLOW = os.environ.get("MISF_SLOW") == "1"


def wrong_square(x: Tensor) -> Tensor:
    """x**2 with a gradient that is off by a factor of two."""
    return record("bad_square", x.data * x.data, (x,), lambda g: (g * x.data,))


class TestGradCheck(TestCase):
    """Unit test cases for grad_check."""

    def test_correct_gradient_passes(self):
        x = Tensor(np.random.default_rng(0).standard_normal((3, 4)))
        report = grad_check(lambda t: ops.activation(ops.square(t), "tanh"), x)
        self.assertTrue(report.passed, str(report))
        self.assertEqual(report.checked, 12)

    def test_wrong_gradient_fails(self):
        x = Tensor(np.random.default_rng(0).uniform(0.5, 1.0, size=5))
        report = grad_check(wrong_square, x)
        self.assertFalse(report.passed)
        self.assertGreater(report.max_rel_err, 0.1)

    def test_max_coords_subsamples(self):
        x = Tensor(np.random.default_rng(0).standard_normal(50))
        report = grad_check(ops.square, x, max_coords=7)
        self.assertEqual(report.checked, 7)

    def test_parameters(self):
        w = Parameter(np.array([0.3, -0.7, 1.1]), "w")
        x = Tensor(np.array([1.0, 2.0, 3.0]))
        report = grad_check_parameters(lambda: ops.total(ops.square(ops.mul(x, w))), [w])
        self.assertTrue(report.passed, str(report))

    def test_tiny_tolerance_fails(self):
        x = Tensor(np.random.default_rng(0).standard_normal((2, 3)))
        report = grad_check(lambda t: ops.activation(t, "sigmoid"), x, tol=1e-15)
        self.assertFalse(report.passed)

    def test_projection_independent_of_seeded_inputs(self):
        for seed in range(4):
            x = np.random.default_rng(seed).standard_normal((2, 3, 5, 5))
            weights = projection_weights(x.shape, seed)
            self.assertFalse(np.allclose(weights, x))
            self.assertLess(abs(float(np.corrcoef(weights.ravel(), x.ravel())[0, 1])), 0.5)
        np.testing.assert_array_equal(projection_weights((4,), 3), projection_weights((4,), 3))

    def test_instance_norm_passes_across_seeds(self):
        for seed in range(4):
            x = Tensor(np.random.default_rng(seed).standard_normal((2, 3, 5, 5)))
            report = grad_check(ops.instance_norm, x, seed=seed)
            self.assertTrue(report.passed, f"seed {seed}: {report}")


class TestGradSuite(TestCase):
    """Unit test cases for the registered checks."""

    FAST = (
        "conv2d",
        "conv2d.weight",
        "conv_transpose2d",
        "conv_transpose2d.weight",
        "avg_pool2d",
        "instance_norm",
        "gram",
        "pixel_filter.input",
        "pixel_filter.kernels",
        "feature_filter.input",
        "feature_filter.kernels",
        "loss.l1",
    )

    def test_registry_covers_every_site(self):
        for name in (*self.FAST, "loss.gan", "loss.perceptual", "loss.style", "loss.total"):
            self.assertIn(name, REGISTRY)
        self.assertIn("model.misf-tiny", REGISTRY)
        for kind in ops.ACTIVATIONS:
            self.assertIn(f"activation.{kind}", REGISTRY)

    def test_fast_checks_pass(self):
        results = run_suite(names=list(self.FAST))
        self.assertEqual([name for name, _ in results], list(self.FAST))
        for name, report in results:
            self.assertTrue(report.passed, f"{name}: {report}")

    def test_unknown_check(self):
        with self.assertRaises(KeyError):
            run_suite(names=["no-such-op"])

    @skipUnless(SLOW, "set MISF_SLOW=1 to run the full gradient suite")
    def test_full_suite_passes(self):
        for name, report in run_suite():
            self.assertTrue(report.passed, f"{name}: {report}")
