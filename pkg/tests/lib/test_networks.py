"""Tests for the network wiring, shapes and ablation variants."""

import os
from unittest import TestCase, skipUnless

import numpy as np

from misf_inpaint.lib.errors import ContractError
from misf_inpaint.lib.layers import chain_shapes, conv, count_parameters
from misf_inpaint.lib.losses import FeatureExtractor, LossWeights, total_loss
from misf_inpaint.lib.networks import (
    PRESETS,
    MisfModel,
    ModelConfig,
    Variant,
    composite,
    discriminator_specs,
    sifb_specs,
)
from misf_inpaint.lib.tensor import Tensor, backward, no_grad

SLOW = os.environ.get("MISF_SLOW") == "1"

FULL_SHAPES = {
    "F1": (64, 256, 256),
    "F2": (128, 128, 128),
    "F2p": (128, 64, 64),
    "F3": (256, 64, 64),
    "F4": (256, 64, 64),
    "F5": (128, 128, 128),
    "F6": (64, 256, 256),
    "F7": (3, 256, 256),
    "E3": (256, 64, 64),
    "K3": (256 * 9, 64, 64),
    "K": (27, 256, 256),
    "I_hat": (3, 256, 256),
}


def tiny(variant=Variant.MISF, **kwargs) -> MisfModel:
    return MisfModel(ModelConfig(variant, precision="float64", **kwargs))


def image(size=64, batch=1, seed=0) -> Tensor:
    return Tensor(np.random.default_rng(seed).uniform(0, 1, size=(batch, 3, size, size)))


class TestArchitecture(TestCase):
    """Unit test cases for the layer tables."""

    def test_full_sifb_chain_shapes(self):
        config = ModelConfig(Variant.MISF, PRESETS["full-256"])
        shapes = dict(chain_shapes(sifb_specs(config), 3, 256, 256))
        self.assertEqual(shapes["enc1"], FULL_SHAPES["F1"])
        self.assertEqual(shapes["enc2"], FULL_SHAPES["F2"])
        self.assertEqual(shapes["pool"], FULL_SHAPES["F2p"])
        self.assertEqual(shapes["enc3"], FULL_SHAPES["F3"])
        self.assertEqual(shapes["mid8"], FULL_SHAPES["F4"])
        self.assertEqual(shapes["dec1"], FULL_SHAPES["F5"])
        self.assertEqual(shapes["dec2"], FULL_SHAPES["F6"])
        self.assertEqual(shapes["out"], FULL_SHAPES["F7"])

    def test_layer_parameter_counts(self):
        self.assertEqual(conv("c", 7, 3, 64, padding=3).parameter_count(), 9472)
        self.assertEqual(conv("m", 1, 256, 256).parameter_count(), 65792)

    def test_discriminator_patch_size(self):
        shapes = chain_shapes(discriminator_specs(PRESETS["full-256"]), 3, 256, 256)
        self.assertEqual(shapes[-1][1], (1, 8, 8))

    def test_parameter_count_matches_specs(self):
        for variant in Variant:
            model = tiny(variant)
            self.assertEqual(model.parameter_count(), model.spec_parameter_count(), variant)

    def test_variant_parameters(self):
        counts = {v: tiny(v).parameter_count() for v in Variant}
        self.assertLess(counts[Variant.EN_DECODER], counts[Variant.SEM_FILTER])
        self.assertLess(counts[Variant.SEM_FILTER], counts[Variant.MISF])
        self.assertNotIn("kpb.enc1.weight", tiny(Variant.IMG_FILTER).named_parameters())

    def test_filter_layer_knob(self):
        model = tiny(filter_layer=1)
        trace = model.forward_trace(image())
        self.assertEqual(trace.shapes()["K1"], (1, 16 * 9, 64, 64))
        self.assertIn("F1_hat", trace.tensors)

    def test_filter_layer_range(self):
        with self.assertRaises(ContractError):
            ModelConfig(filter_layer=4)


class TestForward(TestCase):
    """Unit test cases for MisfModel.forward."""

    def test_tiny_shapes(self):
        with no_grad():
            shapes = tiny().forward_trace(image(batch=2)).shapes()
        self.assertEqual(shapes["F1"], (2, 16, 64, 64))
        self.assertEqual(shapes["F2p"], (2, 32, 16, 16))
        self.assertEqual(shapes["F3"], (2, 64, 16, 16))
        self.assertEqual(shapes["K3"], (2, 64 * 9, 16, 16))
        self.assertEqual(shapes["K"], (2, 27, 64, 64))
        self.assertEqual(shapes["I_hat"], (2, 3, 64, 64))

    def test_every_variant_outputs_an_image(self):
        x = image(size=32)
        for variant in Variant:
            with no_grad():
                out = tiny(variant)(x).numpy()
            self.assertEqual(out.shape, (1, 3, 32, 32), variant)
            self.assertGreaterEqual(out.min(), 0.0)
            self.assertLessEqual(out.max(), 1.0)

    def test_delta_kernels_reduce_to_encoder_decoder(self):
        model = tiny(Variant.MISF)
        plain = model.with_variant(Variant.EN_DECODER)
        x = image(seed=4)
        with no_grad():
            forced = model.forward(x, delta=True).numpy()
            reference = plain.forward(x).numpy()
        np.testing.assert_array_equal(forced, reference)

    def test_delta_kernels_skip_image_kernel_decoder(self):
        model = tiny(Variant.MISF)
        with no_grad():
            trace = model.forward_trace(image(seed=4), delta=True)
        for name in ("E4", "E5", "E6"):
            self.assertNotIn(name, trace.tensors)
        taps = trace.kernels["K"].taps()
        np.testing.assert_array_equal(taps[:, :, taps.shape[2] // 2], 1.0)

    def test_kpb_sees_semantic_features(self):
        model = tiny()
        x = image(seed=5)
        with no_grad():
            f2p = model.sifb_encode(x)["F2p"]
            k3, _ = model.kpb_forward(x, f2p)
            moved, _ = model.kpb_forward(x, Tensor(f2p.numpy() + 0.1))
        self.assertGreater(np.abs(k3.data.numpy() - moved.data.numpy()).max(), 0.0)
        np.testing.assert_allclose(k3.taps().sum(axis=2), 1.0)

    def test_composite_restores_known_pixels(self):
        model = tiny()
        x = image(seed=6)
        with no_grad():
            out = model.forward(x, np.zeros((1, 1, 64, 64))).numpy()
        np.testing.assert_array_equal(out, x.numpy())

    def test_composite_shape_checked(self):
        x = image()
        with self.assertRaises(ContractError):
            composite(x, x, np.zeros((1, 1, 32, 32)))

    def test_input_checks(self):
        model = tiny()
        with self.assertRaises(ContractError):
            model(Tensor(np.zeros((1, 3, 30, 30))))
        with self.assertRaises(ContractError):
            model(Tensor(np.zeros((1, 1, 32, 32))))
        with self.assertRaises(ContractError):
            model(Tensor(np.zeros((1, 3, 32, 32), dtype=np.float32)))

    def test_seeded_init_is_deterministic(self):
        a, b = tiny(seed=3), tiny(seed=3)
        for name, param in a.named_parameters().items():
            np.testing.assert_array_equal(param.data, b.named_parameters()[name].data)

    def test_middle_blocks_identity(self):
        model = tiny()
        for i in range(2):
            layer = model.sifb[f"mid{i + 1}"]
            layer.weight.data[...] = np.eye(64).reshape(64, 64, 1, 1)
            layer.bias.data[...] = 0.0
        x = Tensor(np.random.default_rng(0).standard_normal((1, 64, 8, 8)))
        out = model.middle_blocks(x, activate=False)
        np.testing.assert_allclose(out.numpy(), x.numpy())

    def test_every_generator_parameter_gets_a_gradient(self):
        model = tiny()
        fx = FeatureExtractor(dtype=np.float64)
        x = image(size=32, seed=7)
        target = image(size=32, seed=8)
        loss, _ = total_loss(model(x), target, LossWeights(), model.disc, fx)
        backward(loss)
        for param in model.generator_parameters():
            self.assertIsNotNone(param.grad, param.name)
            self.assertGreater(float(np.abs(param.grad).sum()), 0.0, param.name)
        for param in model.discriminator_parameters():
            self.assertIsNone(param.grad, param.name)

    def test_discriminator_logits(self):
        model = tiny()
        with no_grad():
            logits = model.discriminator_forward(image()).numpy()
        self.assertEqual(logits.shape, (1, 1, 2, 2))
        self.assertTrue(np.all(np.isfinite(logits)))

    @skipUnless(SLOW, "set MISF_SLOW=1 to run the full-size forward pass")
    def test_full_size_shapes(self):
        model = MisfModel(ModelConfig(Variant.MISF, PRESETS["full-256"]))
        with no_grad():
            shapes = model.forward_trace(Tensor(np.zeros((1, 3, 256, 256), dtype=np.float32))).shapes()
        for name, shape in FULL_SHAPES.items():
            self.assertEqual(shapes[name], (1, *shape), name)
        self.assertEqual(count_parameters(model.sifb_specs[:1]), 9472)
