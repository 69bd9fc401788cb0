"""Named finite-difference checks run by ``misf-inpaint gradcheck``.

Every check runs in 64-bit on small random inputs. Checks are registered in
the order they are reported.
"""

from __future__ import annotations

import logging
from collections.abc import Callable

import numpy as np

from misf_inpaint.lib import ops
from misf_inpaint.lib.filtering import (
    Boundary,
    FilterConfig,
    KernelField,
    Normalize,
    feature_filter,
    normalize_kernels,
    pixel_filter,
)
from misf_inpaint.lib.gradcheck import GradCheckReport, grad_check, grad_check_parameters
from misf_inpaint.lib.losses import (
    FeatureExtractor,
    LossWeights,
    generator_adversarial_loss,
    l1_loss,
    perceptual_loss,
    style_loss,
    total_loss,
)
from misf_inpaint.lib.networks import MisfModel, ModelConfig, PatchDiscriminator, Variant
from misf_inpaint.lib.tensor import Tensor

Check = Callable[[float, float, int], GradCheckReport]

REGISTRY: dict[str, Check] = {}


def register(name: str) -> Callable[[Check], Check]:
    def wrap(check: Check) -> Check:
        REGISTRY[name] = check
        return check

    return wrap


def _rand(rng: np.random.Generator, *shape: int, scale: float = 1.0) -> np.ndarray:
    return rng.standard_normal(shape) * scale


def _unit(rng: np.random.Generator, *shape: int) -> np.ndarray:
    return rng.uniform(0.05, 0.95, size=shape)


@register("conv2d")
def _conv2d(eps: float, tol: float, seed: int) -> GradCheckReport:
    rng = np.random.default_rng(seed)
    w = Tensor(_rand(rng, 3, 2, 3, 3))
    b = Tensor(_rand(rng, 3))
    return grad_check(lambda x: ops.conv2d(x, w, b, 2, (1, 1, 2, 2)), Tensor(_rand(rng, 2, 2, 7, 7)), eps, tol, seed=seed)


@register("conv2d.weight")
def _conv2d_weight(eps: float, tol: float, seed: int) -> GradCheckReport:
    rng = np.random.default_rng(seed)
    x = Tensor(_rand(rng, 2, 2, 6, 6))
    return grad_check(lambda w: ops.conv2d(x, w, None, 1, 1), Tensor(_rand(rng, 3, 2, 3, 3)), eps, tol, seed=seed)


@register("conv_transpose2d")
def _convt(eps: float, tol: float, seed: int) -> GradCheckReport:
    rng = np.random.default_rng(seed)
    w = Tensor(_rand(rng, 2, 3, 4, 4))
    b = Tensor(_rand(rng, 3))
    return grad_check(lambda x: ops.conv_transpose2d(x, w, b, 2, 1), Tensor(_rand(rng, 2, 2, 4, 4)), eps, tol, seed=seed)


@register("conv_transpose2d.weight")
def _convt_weight(eps: float, tol: float, seed: int) -> GradCheckReport:
    rng = np.random.default_rng(seed)
    x = Tensor(_rand(rng, 1, 2, 4, 4))
    return grad_check(lambda w: ops.conv_transpose2d(x, w, None, 2, 1), Tensor(_rand(rng, 2, 3, 4, 4)), eps, tol, seed=seed)


@register("avg_pool2d")
def _avg_pool(eps: float, tol: float, seed: int) -> GradCheckReport:
    rng = np.random.default_rng(seed)
    return grad_check(ops.avg_pool2d, Tensor(_rand(rng, 2, 3, 8, 8)), eps, tol, seed=seed)


@register("instance_norm")
def _instance_norm(eps: float, tol: float, seed: int) -> GradCheckReport:
    rng = np.random.default_rng(seed)
    return grad_check(ops.instance_norm, Tensor(_rand(rng, 2, 3, 5, 5)), eps, tol, seed=seed)


def _activation_check(kind: str) -> Check:
    def check(eps: float, tol: float, seed: int) -> GradCheckReport:
        rng = np.random.default_rng(seed)
        return grad_check(lambda x: ops.activation(x, kind), Tensor(_rand(rng, 2, 2, 4, 4)), eps, tol, seed=seed)

    return check


for _kind in ops.ACTIVATIONS:
    register(f"activation.{_kind}")(_activation_check(_kind))


@register("softplus")
def _softplus(eps: float, tol: float, seed: int) -> GradCheckReport:
    rng = np.random.default_rng(seed)
    return grad_check(ops.softplus, Tensor(_rand(rng, 2, 1, 4, 4, scale=3.0)), eps, tol, seed=seed)


@register("concat_channels")
def _concat(eps: float, tol: float, seed: int) -> GradCheckReport:
    rng = np.random.default_rng(seed)
    other = Tensor(_rand(rng, 2, 3, 4, 4))
    return grad_check(lambda x: ops.concat_channels(x, other), Tensor(_rand(rng, 2, 2, 4, 4)), eps, tol, seed=seed)


@register("gram")
def _gram(eps: float, tol: float, seed: int) -> GradCheckReport:
    rng = np.random.default_rng(seed)
    return grad_check(ops.gram, Tensor(_rand(rng, 2, 3, 4, 5)), eps, tol, seed=seed)


@register("normalize_kernels")
def _normalize(eps: float, tol: float, seed: int) -> GradCheckReport:
    rng = np.random.default_rng(seed)
    config = FilterConfig(3, 2)
    return grad_check(lambda raw: normalize_kernels(raw, config).data, Tensor(_rand(rng, 1, 18, 4, 4)), eps, tol, seed=seed)


def _filter_case(rng: np.random.Generator, groups: int, channels: int, boundary: Boundary):
    config = FilterConfig(3, groups, Normalize.SOFTMAX, boundary)
    x = _rand(rng, 2, channels, 5, 6)
    raw = _rand(rng, 2, groups * 9, 5, 6)
    return config, x, raw


@register("pixel_filter.input")
def _pixel_input(eps: float, tol: float, seed: int) -> GradCheckReport:
    config, x, raw = _filter_case(np.random.default_rng(seed), 3, 3, Boundary.REPLICATE)
    kernels = normalize_kernels(Tensor(raw), config)
    return grad_check(lambda t: pixel_filter(t, kernels), Tensor(x), eps, tol, seed=seed)


@register("pixel_filter.kernels")
def _pixel_kernels(eps: float, tol: float, seed: int) -> GradCheckReport:
    config, x, raw = _filter_case(np.random.default_rng(seed), 1, 3, Boundary.REPLICATE)
    image = Tensor(x)
    return grad_check(
        lambda k: pixel_filter(image, normalize_kernels(k, config)), Tensor(raw), eps, tol, seed=seed
    )


@register("feature_filter.input")
def _feature_input(eps: float, tol: float, seed: int) -> GradCheckReport:
    config, x, raw = _filter_case(np.random.default_rng(seed), 4, 4, Boundary.ZERO)
    kernels = normalize_kernels(Tensor(raw), config)
    return grad_check(lambda t: feature_filter(t, kernels), Tensor(x), eps, tol, seed=seed)


@register("feature_filter.kernels")
def _feature_kernels(eps: float, tol: float, seed: int) -> GradCheckReport:
    config, x, raw = _filter_case(np.random.default_rng(seed), 4, 4, Boundary.ZERO)
    features = Tensor(x)
    return grad_check(
        lambda k: feature_filter(features, KernelField(k, FilterConfig(3, 4, Normalize.NONE, Boundary.ZERO))),
        Tensor(raw),
        eps,
        tol,
        seed=seed,
    )


def _loss_fixture(seed: int) -> tuple[np.ndarray, Tensor]:
    rng = np.random.default_rng(seed)
    return _unit(rng, 1, 3, 32, 32), Tensor(_unit(rng, 1, 3, 32, 32))


def _tiny_disc(seed: int) -> PatchDiscriminator:
    return PatchDiscriminator(ModelConfig(seed=seed, precision="float64"))


@register("loss.l1")
def _l1(eps: float, tol: float, seed: int) -> GradCheckReport:
    output, target = _loss_fixture(seed)
    return grad_check(lambda x: l1_loss(x, target), Tensor(output), eps, tol, seed=seed)


@register("loss.gan")
def _gan(eps: float, tol: float, seed: int) -> GradCheckReport:
    output, _ = _loss_fixture(seed)
    disc = _tiny_disc(seed)
    return grad_check(lambda x: generator_adversarial_loss(disc, x), Tensor(output), eps, tol, max_coords=64, seed=seed)


@register("loss.perceptual")
def _perceptual(eps: float, tol: float, seed: int) -> GradCheckReport:
    output, target = _loss_fixture(seed)
    fx = FeatureExtractor(seed, np.float64)
    return grad_check(lambda x: perceptual_loss(x, target, fx), Tensor(output), eps, tol, max_coords=64, seed=seed)


@register("loss.style")
def _style(eps: float, tol: float, seed: int) -> GradCheckReport:
    output, target = _loss_fixture(seed)
    fx = FeatureExtractor(seed, np.float64)
    return grad_check(lambda x: style_loss(x, target, fx), Tensor(output), eps, tol, max_coords=64, seed=seed)


@register("loss.total")
def _total(eps: float, tol: float, seed: int) -> GradCheckReport:
    output, target = _loss_fixture(seed)
    disc = _tiny_disc(seed)
    fx = FeatureExtractor(seed, np.float64)
    return grad_check(
        lambda x: total_loss(x, target, LossWeights(), disc, fx)[0],
        Tensor(output),
        eps,
        tol,
        max_coords=64,
        seed=seed,
    )


@register("model.misf-tiny")
def _model(eps: float, tol: float, seed: int) -> GradCheckReport:
    rng = np.random.default_rng(seed)
    model = MisfModel(ModelConfig(Variant.MISF, seed=seed, precision="float64"))
    fx = FeatureExtractor(seed, np.float64)
    image = Tensor(_unit(rng, 1, 3, 32, 32))
    target = Tensor(_unit(rng, 1, 3, 32, 32))

    def loss() -> Tensor:
        return total_loss(model(image), target, LossWeights(), model.disc, fx)[0]

    return grad_check_parameters(loss, model.generator_parameters(), eps, tol, max_coords=2, seed=seed)


def run_suite(
    eps: float = 1e-5, tol: float = 1e-4, seed: int = 0, names: list[str] | None = None
) -> list[tuple[str, GradCheckReport]]:
    """Run the named checks (all when `names` is None) in registry order."""
    selected = list(REGISTRY) if names is None else names
    unknown = [n for n in selected if n not in REGISTRY]
    if unknown:
        raise KeyError(f"unknown checks: {', '.join(unknown)}")
    results = []
    for name in selected:
        report = REGISTRY[name](eps, tol, seed)
        logging.info("%s: %s", name, report)
        results.append((name, report))
    return results
