"""The two-branch filtering network and its ablation variants.

The semantic & image filtering branch (SIFB) is an encoder-decoder whose
features are filtered at layer `filter_layer` and whose output image is
filtered once more. The kernel prediction branch (KPB) runs a sibling encoder
on the raw image, joins the SIFB features after the pooling stage and predicts
both kernel fields.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

from misf_inpaint.lib import ops
from misf_inpaint.lib.errors import ContractError
from misf_inpaint.lib.filtering import (
    Boundary,
    FilterConfig,
    KernelField,
    Normalize,
    delta_kernels,
    feature_filter,
    normalize_kernels,
    pixel_filter,
)
from misf_inpaint.lib.layers import (
    SAME_4,
    ConvLayer,
    LayerKind,
    LayerSpec,
    conv,
    count_parameters,
)
from misf_inpaint.lib.tensor import Parameter, Tensor, resolve_dtype

IMAGE_CHANNELS = 3


class Variant(Enum):
    """Which filter sites are active."""

    IMG_FILTER = "img-filter"
    SEM_FILTER = "sem-filter"
    MISF = "misf"
    EN_DECODER = "en-decoder"
    EN_DECODER_FILTER = "en-decoder-filter"

    @property
    def filters_features(self) -> bool:
        return self in (Variant.SEM_FILTER, Variant.MISF)

    @property
    def filters_decoded_image(self) -> bool:
        return self in (Variant.MISF, Variant.EN_DECODER_FILTER)

    @property
    def filters_image(self) -> bool:
        """True when some image-level pixel filtering happens."""
        return self.filters_decoded_image or self is Variant.IMG_FILTER

    @property
    def has_kpb(self) -> bool:
        return self in (Variant.SEM_FILTER, Variant.MISF, Variant.EN_DECODER_FILTER)


@dataclass(frozen=True)
class Preset:
    """Resolution and width of a model size."""

    name: str
    resolution: int
    divisor: int
    middle_blocks: int

    def widths(self) -> tuple[int, int, int]:
        return (64 // self.divisor, 128 // self.divisor, 256 // self.divisor)

    def disc_widths(self) -> tuple[int, int, int, int]:
        return (
            64 // self.divisor,
            128 // self.divisor,
            256 // self.divisor,
            512 // self.divisor,
        )


PRESETS: dict[str, Preset] = {
    "full-256": Preset("full-256", 256, 1, 8),
    "misf-tiny": Preset("misf-tiny", 64, 4, 2),
}


@dataclass(frozen=True)
class ModelConfig:
    """Everything that determines a model's parameters and wiring."""

    variant: Variant = Variant.MISF
    preset: Preset = PRESETS["misf-tiny"]
    kernel_size: int = 3
    normalize: Normalize = Normalize.SOFTMAX
    image_boundary: Boundary = Boundary.REPLICATE
    feature_boundary: Boundary = Boundary.ZERO
    filter_layer: int = 3
    seed: int = 0
    precision: str = "float32"

    def __post_init__(self) -> None:
        if self.filter_layer not in (1, 2, 3):
            raise ContractError(f"filter_layer must be 1, 2 or 3, got {self.filter_layer}")

    @property
    def dtype(self) -> np.dtype:
        return resolve_dtype(self.precision)

    def feature_channels(self) -> int:
        return self.preset.widths()[self.filter_layer - 1]

    def image_filter(self) -> FilterConfig:
        return FilterConfig(
            self.kernel_size, IMAGE_CHANNELS, self.normalize, self.image_boundary
        )

    def feature_filter(self) -> FilterConfig:
        return FilterConfig(
            self.kernel_size,
            self.feature_channels(),
            self.normalize,
            self.feature_boundary,
        )


def sifb_specs(config: ModelConfig) -> list[LayerSpec]:
    """SIFB layers in execution order, filter sites included."""
    c1, c2, c3 = config.preset.widths()
    variant = config.variant
    taps = config.kernel_size**2
    head_ch = IMAGE_CHANNELS * taps if variant is Variant.IMG_FILTER else IMAGE_CHANNELS
    encoder = [
        conv("enc1", 7, IMAGE_CHANNELS, c1, padding=3),
        conv("enc2", 4, c1, c2, stride=2, padding=1, norm=True),
        LayerSpec("pool", LayerKind.AVGPOOL),
        conv("enc3", 4, c2, c3, padding=SAME_4, norm=True),
    ]
    if variant.filters_features:
        site = {1: 1, 2: 2, 3: 4}[config.filter_layer]
        encoder.insert(site, LayerSpec("feature_filter", LayerKind.FILTER_SITE))
    middle = [
        LayerSpec(f"mid{i + 1}", LayerKind.MIDDLE_BLOCK, 1, c3, c3)
        for i in range(config.preset.middle_blocks)
    ]
    decoder = [
        conv("dec1", 4, c3, c2, stride=2, padding=1, norm=True, transposed=True),
        conv("dec2", 4, c2, c1, stride=2, padding=1, norm=True, transposed=True),
        conv(
            "out",
            7,
            c1,
            head_ch,
            padding=3,
            activation=None if variant is Variant.IMG_FILTER else "tanh",
        ),
    ]
    if variant.filters_image:
        decoder.append(LayerSpec("image_filter", LayerKind.FILTER_SITE))
    return encoder + middle + decoder


def kpb_specs(config: ModelConfig) -> list[LayerSpec]:
    """KPB layers; empty for variants without a kernel prediction branch."""
    variant = config.variant
    if not variant.has_kpb:
        return []
    c1, c2, c3 = config.preset.widths()
    taps = config.kernel_size**2
    specs = [
        conv("enc1", 7, IMAGE_CHANNELS, c1, padding=3),
        conv("enc2", 4, c1, c2, stride=2, padding=1, norm=True),
        LayerSpec("pool", LayerKind.AVGPOOL),
    ]
    needs_e3 = variant.filters_decoded_image or config.filter_layer == 3
    if needs_e3:
        specs.append(conv("enc3", 4, 2 * c2, c3, padding=SAME_4, norm=True))
    if variant.filters_features:
        channels = config.feature_channels()
        specs.append(
            conv(
                f"k{config.filter_layer}_head",
                1,
                channels,
                channels * taps,
                activation=None,
            )
        )
    if variant.filters_decoded_image:
        specs += [
            LayerSpec(f"mid{i + 1}", LayerKind.MIDDLE_BLOCK, 1, c3, c3)
            for i in range(config.preset.middle_blocks)
        ]
        specs += [
            conv("dec1", 4, c3, c2, stride=2, padding=1, norm=True, transposed=True),
            conv("dec2", 4, c2, c1, stride=2, padding=1, norm=True, transposed=True),
            conv("k_head", 7, c1, IMAGE_CHANNELS * taps, padding=3, activation=None),
        ]
    return specs


def discriminator_specs(preset: Preset) -> list[LayerSpec]:
    """Five stride-2 4x4 convs ending in one patch-logit channel."""
    widths = (IMAGE_CHANNELS, *preset.disc_widths(), 1)
    return [
        conv(
            f"d{i + 1}",
            4,
            widths[i],
            widths[i + 1],
            stride=2,
            padding=1,
            activation="leaky_relu" if i < 4 else None,
        )
        for i in range(5)
    ]


def _build(specs: list[LayerSpec], prefix: str, config: ModelConfig) -> dict[str, ConvLayer]:
    return {
        spec.name: ConvLayer.build(spec, prefix, config.seed, config.dtype)
        for spec in specs
        if spec.has_weights
    }


class PatchDiscriminator:
    """Patch-level real/fake logits for the adversarial loss."""

    def __init__(self, config: ModelConfig):
        self.specs = discriminator_specs(config.preset)
        self.layers = _build(self.specs, "disc", config)

    def parameters(self) -> list[Parameter]:
        return [p for layer in self.layers.values() for p in layer.parameters()]

    def __call__(self, image: Tensor) -> Tensor:
        x = image
        for layer in self.layers.values():
            x = layer(x)
        return x


@dataclass
class ForwardTrace:
    """Every named intermediate of one forward pass."""

    tensors: dict[str, Tensor] = field(default_factory=dict)
    kernels: dict[str, KernelField] = field(default_factory=dict)

    @property
    def output(self) -> Tensor:
        return self.tensors["I_hat"]

    def shapes(self) -> dict[str, tuple[int, ...]]:
        return {name: t.shape for name, t in self.tensors.items()}


class MisfModel:
    """Generator branches (SIFB, KPB) plus the discriminator."""

    def __init__(self, config: ModelConfig):
        self.config = config
        self.sifb_specs = sifb_specs(config)
        self.kpb_specs = kpb_specs(config)
        self.sifb = _build(self.sifb_specs, "sifb", config)
        self.kpb = _build(self.kpb_specs, "kpb", config)
        self.disc = PatchDiscriminator(config)
        logging.debug(
            "built %s/%s with %d generator parameters",
            config.variant.value,
            config.preset.name,
            self.parameter_count(),
        )

    @property
    def variant(self) -> Variant:
        return self.config.variant

    @property
    def dtype(self) -> np.dtype:
        return self.config.dtype

    # Parameters

    def generator_parameters(self) -> list[Parameter]:
        layers = list(self.sifb.values()) + list(self.kpb.values())
        return [p for layer in layers for p in layer.parameters()]

    def discriminator_parameters(self) -> list[Parameter]:
        return self.disc.parameters()

    def named_parameters(self) -> dict[str, Parameter]:
        params = self.generator_parameters() + self.discriminator_parameters()
        return {p.name: p for p in params}

    def parameter_count(self) -> int:
        return sum(p.size for p in self.generator_parameters())

    def spec_parameter_count(self) -> int:
        """Generator parameter count summed from the layer specs alone."""
        return count_parameters(self.sifb_specs) + count_parameters(self.kpb_specs)

    def with_variant(self, variant: Variant) -> MisfModel:
        """A fresh model of another variant sharing every same-named parameter value."""
        other = MisfModel(replace(self.config, variant=variant))
        mine = self.named_parameters()
        for name, param in other.named_parameters().items():
            if name in mine and mine[name].shape == param.shape:
                param.data[...] = mine[name].data
        return other

    # Branches

    def _check_image(self, image: Tensor) -> None:
        if image.ndim != 4 or image.shape[1] != IMAGE_CHANNELS:
            raise ContractError(f"expected a [B, 3, H, W] image, got {image.shape}")
        if image.shape[2] % 4 or image.shape[3] % 4:
            raise ContractError(
                f"image sides must be divisible by 4, got {image.shape[2:]}"
            )
        if image.dtype != self.dtype:
            raise ContractError(f"image is {image.dtype}, model is {self.dtype}")

    def sifb_encode(self, image: Tensor) -> dict[str, Tensor]:
        """Unfiltered SIFB features F1, F2, F2' and F3."""
        self._check_image(image)
        f1 = self.sifb["enc1"](image)
        f2 = self.sifb["enc2"](f1)
        f2p = ops.avg_pool2d(f2)
        f3 = self.sifb["enc3"](f2p)
        return {"F1": f1, "F2": f2, "F2p": f2p, "F3": f3}

    def _kpb_stem(self, image: Tensor) -> dict[str, Tensor]:
        e1 = self.kpb["enc1"](image)
        e2 = self.kpb["enc2"](e1)
        return {"E1": e1, "E2": e2, "E2p": ops.avg_pool2d(e2)}

    def _kpb_join(self, f2p: Tensor, e2p: Tensor) -> Tensor:
        if f2p.shape != e2p.shape:
            raise ContractError(f"branch mismatch: F2' {f2p.shape} vs E2' {e2p.shape}")
        return self.kpb["enc3"](ops.concat_channels(f2p, e2p))

    def _feature_kernels(self, source: Tensor) -> KernelField:
        head = self.kpb[f"k{self.config.filter_layer}_head"]
        return normalize_kernels(head(source), self.config.feature_filter())

    def _image_kernels(self, e3: Tensor, trace: ForwardTrace | None = None) -> KernelField:
        e4 = self.middle_blocks(e3, branch="kpb")
        e5 = self.kpb["dec1"](e4)
        e6 = self.kpb["dec2"](e5)
        if trace is not None:
            trace.tensors.update({"E4": e4, "E5": e5, "E6": e6})
        return normalize_kernels(self.kpb["k_head"](e6), self.config.image_filter())

    def kpb_forward(
        self, image: Tensor, f2p: Tensor
    ) -> tuple[KernelField | None, KernelField | None]:
        """Kernel fields (K_l, K) predicted from the image and SIFB's F2'."""
        if not self.variant.has_kpb:
            raise ContractError(f"{self.variant.value} has no kernel prediction branch")
        self._check_image(image)
        stem = self._kpb_stem(image)
        e3 = None
        if "enc3" in self.kpb:
            e3 = self._kpb_join(f2p, stem["E2p"])
        k_feature = None
        if self.variant.filters_features:
            source = {1: stem["E1"], 2: stem["E2"], 3: e3}[self.config.filter_layer]
            assert source is not None
            k_feature = self._feature_kernels(source)
        k_image = None
        if self.variant.filters_decoded_image:
            assert e3 is not None
            k_image = self._image_kernels(e3)
        return k_feature, k_image

    def middle_blocks(
        self, x: Tensor, *, branch: str = "sifb", activate: bool = True
    ) -> Tensor:
        """The stack of 1x1 conv stages between encoder and decoder."""
        layers = self.sifb if branch == "sifb" else self.kpb
        for i in range(self.config.preset.middle_blocks):
            x = layers[f"mid{i + 1}"](x, activate=activate)
        return x

    def discriminator_forward(self, image: Tensor) -> Tensor:
        return self.disc(image)

    # Full pass

    def forward_trace(self, image: Tensor, *, delta: bool = False) -> ForwardTrace:
        """Run the variant's wiring, recording every intermediate.

        With `delta` every kernel field is replaced by delta kernels, which
        reduces every filter site to the identity.
        """
        self._check_image(image)
        variant = self.variant
        level = self.config.filter_layer
        trace = ForwardTrace()
        record = trace.tensors

        stem: dict[str, Tensor] = {}
        if variant.has_kpb:
            stem = self._kpb_stem(image)
            record.update(stem)

        def filter_site(layer: int, f: Tensor, source: Tensor | None) -> Tensor:
            if not variant.filters_features or layer != level:
                return f
            if delta:
                batch, channels, height, width = f.shape
                kernels = delta_kernels(
                    batch, channels, height, width, self.config.feature_filter(), self.dtype
                )
            else:
                assert source is not None
                kernels = self._feature_kernels(source)
            trace.kernels[f"K{layer}"] = kernels
            record[f"K{layer}"] = kernels.data
            filtered = feature_filter(f, kernels)
            record[f"F{layer}_hat"] = filtered
            return filtered

        f1 = self.sifb["enc1"](image)
        record["F1"] = f1
        f1 = filter_site(1, f1, stem.get("E1"))
        f2 = self.sifb["enc2"](f1)
        record["F2"] = f2
        f2 = filter_site(2, f2, stem.get("E2"))
        f2p = ops.avg_pool2d(f2)
        record["F2p"] = f2p
        f3 = self.sifb["enc3"](f2p)
        record["F3"] = f3

        e3 = None
        if "enc3" in self.kpb:
            e3 = self._kpb_join(f2p, stem["E2p"])
            record["E3"] = e3
        f3 = filter_site(3, f3, e3)

        f4 = self.middle_blocks(f3)
        f5 = self.sifb["dec1"](f4)
        f6 = self.sifb["dec2"](f5)
        record.update({"F4": f4, "F5": f5, "F6": f6})
        head = self.sifb["out"](f6)

        if variant is Variant.IMG_FILTER:
            config = self.config.image_filter()
            if delta:
                batch, _, height, width = image.shape
                kernels = delta_kernels(
                    batch, IMAGE_CHANNELS, height, width, config, self.dtype
                )
            else:
                kernels = normalize_kernels(head, config)
            trace.kernels["K"] = kernels
            record["K"] = kernels.data
            result = pixel_filter(image, kernels)
        else:
            f7 = ops.mul(ops.add(head, 1.0), 0.5)
            record["F7"] = f7
            result = f7
            if variant.filters_decoded_image:
                if delta:
                    batch, _, height, width = image.shape
                    predicted = delta_kernels(
                        batch,
                        IMAGE_CHANNELS,
                        height,
                        width,
                        self.config.image_filter(),
                        self.dtype,
                    )
                else:
                    assert e3 is not None
                    predicted = self._image_kernels(e3, trace)
                trace.kernels["K"] = predicted
                record["K"] = predicted.data
                result = pixel_filter(f7, predicted)

        record["I_hat"] = ops.clamp(result, 0.0, 1.0)
        return trace

    def forward(
        self, image: Tensor, mask: np.ndarray | None = None, *, delta: bool = False
    ) -> Tensor:
        """Completed image; with `mask` (1 = hole) known pixels are restored."""
        completed = self.forward_trace(image, delta=delta).output
        if mask is None:
            return completed
        return composite(completed, image, mask)

    __call__ = forward


def composite(completed: Tensor, image: Tensor, mask: np.ndarray) -> Tensor:
    """mask * completed + (1 - mask) * image."""
    hole = np.asarray(mask, dtype=completed.dtype)
    if hole.ndim == 3:
        hole = hole[None]
    if hole.shape[0] != completed.shape[0] or hole.shape[2:] != completed.shape[2:]:
        raise ContractError(f"mask {hole.shape} does not match image {completed.shape}")
    known = ops.mul(image.detach(), 1.0 - hole)
    return ops.add(ops.mul(completed, hole), known)
