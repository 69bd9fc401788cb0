"""The four-term training objective and the frozen feature extractor."""

from __future__ import annotations

import logging
import pathlib
from collections.abc import Sequence
from dataclasses import asdict, dataclass

import numpy as np

from misf_inpaint.lib import mtf, ops
from misf_inpaint.lib.errors import ContractError
from misf_inpaint.lib.layers import ConvLayer, conv
from misf_inpaint.lib.networks import PatchDiscriminator
from misf_inpaint.lib.tensor import Parameter, Tensor, frozen, no_grad


@dataclass(frozen=True)
class LossWeights:
    """Multipliers of the L1, adversarial, perceptual and style terms."""

    l1: float = 1.0
    gan: float = 0.1
    perc: float = 0.1
    style: float = 250.0

    def __post_init__(self) -> None:
        for name, value in asdict(self).items():
            if value < 0:
                raise ContractError(f"loss weight {name} must be >= 0, got {value}")


@dataclass(frozen=True)
class LossBreakdown:
    l1: float
    gan: float
    perc: float
    style: float
    total: float


EXTRACTOR_WIDTHS = (16, 32, 64, 128)


class FeatureExtractor:
    """A frozen stack of stride-2 3x3 convs standing in for a pretrained network.

    Weights are seeded-random unless `weights_path` names an MTF1 file holding
    every stage's weight then bias, flattened and concatenated in stage order.
    """

    def __init__(
        self,
        seed: int = 0,
        dtype: np.dtype | type = np.float32,
        taps: Sequence[int] = (0, 1, 2, 3),
        weights_path: str | pathlib.Path | None = None,
    ):
        if not taps or any(t < 0 or t >= len(EXTRACTOR_WIDTHS) for t in taps):
            raise ContractError(f"extractor taps must index 0..3, got {list(taps)}")
        self.taps = tuple(sorted(set(taps)))
        widths = (3, *EXTRACTOR_WIDTHS)
        self.layers = [
            ConvLayer.build(
                conv(f"stage{i + 1}", 3, widths[i], widths[i + 1], stride=2, padding=1),
                "fx",
                seed,
                np.dtype(dtype),
                trainable=False,
            )
            for i in range(len(EXTRACTOR_WIDTHS))
        ]
        if weights_path is not None:
            self.load_weights(weights_path)

    def parameters(self) -> list[Parameter]:
        return [p for layer in self.layers for p in layer.parameters()]

    def load_weights(self, path: str | pathlib.Path) -> None:
        flat = mtf.load(path)
        params = self.parameters()
        expected = sum(p.size for p in params)
        if flat.ndim != 1 or flat.size != expected:
            raise ContractError(
                f"extractor weights need a flat vector of {expected} values, "
                f"got shape {flat.shape}"
            )
        offset = 0
        for p in params:
            p.data[...] = flat[offset : offset + p.size].reshape(p.shape)
            offset += p.size
        logging.info("loaded feature extractor weights from %s", path)

    def __call__(self, image: Tensor) -> list[Tensor]:
        """Outputs of the tapped stages."""
        features = []
        x = image
        for i, layer in enumerate(self.layers[: self.taps[-1] + 1]):
            x = layer(x)
            if i in self.taps:
                features.append(x)
        return features


def _check_pair(output: Tensor, target: Tensor) -> None:
    if output.shape != target.shape:
        raise ContractError(f"shape mismatch: {output.shape} vs {target.shape}")


def l1_loss(output: Tensor, target: Tensor, mask: np.ndarray | None = None) -> Tensor:
    """Mean absolute error, over the hole region only when `mask` is given."""
    _check_pair(output, target)
    diff = ops.absolute(ops.sub(output, target.detach()))
    if mask is None:
        return ops.mean(diff)
    hole = np.broadcast_to(np.asarray(mask, dtype=output.dtype), output.shape)
    count = float(hole.sum())
    if count == 0:
        return ops.mul(ops.total(diff), 0.0)
    return ops.mul(ops.total(ops.mul(diff, hole)), 1.0 / count)


def discriminator_loss(disc: PatchDiscriminator, output: Tensor, target: Tensor) -> Tensor:
    """softplus(-D(real)) + softplus(D(fake)), the fake detached from the generator."""
    real = ops.mean(ops.softplus(ops.neg(disc(target.detach()))))
    fake = ops.mean(ops.softplus(disc(output.detach())))
    return ops.add(real, fake)


def generator_adversarial_loss(disc: PatchDiscriminator, output: Tensor) -> Tensor:
    """Non-saturating softplus(-D(fake)); the discriminator receives no gradient."""
    with frozen(disc.parameters()):
        return ops.mean(ops.softplus(ops.neg(disc(output))))


def adversarial_losses(
    disc: PatchDiscriminator, output: Tensor, target: Tensor
) -> tuple[Tensor, Tensor]:
    """(generator loss, discriminator loss)."""
    return (
        generator_adversarial_loss(disc, output),
        discriminator_loss(disc, output, target),
    )


def _target_features(fx: FeatureExtractor, target: Tensor) -> list[Tensor]:
    with no_grad():
        return fx(target.detach())


def perceptual_loss(output: Tensor, target: Tensor, fx: FeatureExtractor) -> Tensor:
    """Sum over the tapped stages of the mean absolute feature difference."""
    _check_pair(output, target)
    terms = [
        ops.mean(ops.absolute(ops.sub(a, b)))
        for a, b in zip(fx(output), _target_features(fx, target), strict=True)
    ]
    loss = terms[0]
    for term in terms[1:]:
        loss = ops.add(loss, term)
    return loss


def style_loss(output: Tensor, target: Tensor, fx: FeatureExtractor) -> Tensor:
    """Sum over the tapped stages of the mean absolute Gram-matrix difference."""
    _check_pair(output, target)
    terms = [
        ops.mean(ops.absolute(ops.sub(ops.gram(a), ops.gram(b))))
        for a, b in zip(fx(output), _target_features(fx, target), strict=True)
    ]
    loss = terms[0]
    for term in terms[1:]:
        loss = ops.add(loss, term)
    return loss


def total_loss(
    output: Tensor,
    target: Tensor,
    weights: LossWeights,
    disc: PatchDiscriminator,
    fx: FeatureExtractor,
    mask: np.ndarray | None = None,
) -> tuple[Tensor, LossBreakdown]:
    """Weighted sum of the four terms; `mask` makes the L1 term hole-only.

    Terms whose weight is zero are skipped entirely.
    """
    _check_pair(output, target)
    parts: dict[str, Tensor] = {}
    parts["l1"] = l1_loss(output, target, mask)
    if weights.gan > 0:
        parts["gan"] = generator_adversarial_loss(disc, output)
    if weights.perc > 0:
        parts["perc"] = perceptual_loss(output, target, fx)
    if weights.style > 0:
        parts["style"] = style_loss(output, target, fx)

    loss = ops.mul(parts["l1"], weights.l1)
    for name in ("gan", "perc", "style"):
        if name in parts:
            loss = ops.add(loss, ops.mul(parts[name], getattr(weights, name)))
    breakdown = LossBreakdown(
        l1=parts["l1"].item(),
        gan=parts["gan"].item() if "gan" in parts else 0.0,
        perc=parts["perc"].item() if "perc" in parts else 0.0,
        style=parts["style"].item() if "style" in parts else 0.0,
        total=loss.item(),
    )
    logging.debug("loss breakdown: %s", breakdown)
    return loss, breakdown
