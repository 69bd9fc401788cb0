"""Layer specifications and the convolutional layer built from them."""

from __future__ import annotations

import zlib
from collections.abc import Sequence
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from misf_inpaint.lib import ops
from misf_inpaint.lib.errors import ContractError
from misf_inpaint.lib.ops import Padding
from misf_inpaint.lib.tensor import Parameter, Tensor

SAME_4 = (1, 1, 2, 2)


class LayerKind(Enum):
    CONV = "conv"
    CONVT = "convt"
    AVGPOOL = "avgpool"
    FILTER_SITE = "filter-site"
    MIDDLE_BLOCK = "middle-block"


@dataclass(frozen=True)
class LayerSpec:
    """One row of an architecture table."""

    name: str
    kind: LayerKind
    kernel: int = 1
    in_ch: int = 0
    out_ch: int = 0
    stride: int = 1
    padding: Padding = (0, 0, 0, 0)
    norm: bool = False
    bias: bool = True
    activation: str | None = "relu"

    @property
    def has_weights(self) -> bool:
        return self.kind in (LayerKind.CONV, LayerKind.CONVT, LayerKind.MIDDLE_BLOCK)

    def output_size(self, height: int, width: int) -> tuple[int, int]:
        top, left, bottom, right = self.padding
        if self.kind is LayerKind.AVGPOOL:
            return (height // 2, width // 2)
        if self.kind is LayerKind.CONVT:
            return (
                (height - 1) * self.stride - (top + bottom) + self.kernel,
                (width - 1) * self.stride - (left + right) + self.kernel,
            )
        if self.kind is LayerKind.FILTER_SITE:
            return (height, width)
        return (
            ops.conv_output_size(height, self.kernel, self.stride, top + bottom),
            ops.conv_output_size(width, self.kernel, self.stride, left + right),
        )

    def output_channels(self, in_channels: int) -> int:
        if self.kind in (LayerKind.AVGPOOL, LayerKind.FILTER_SITE):
            return in_channels
        return self.out_ch

    def parameter_count(self) -> int:
        if not self.has_weights:
            return 0
        weights = self.kernel * self.kernel * self.in_ch * self.out_ch
        return weights + (self.out_ch if self.bias else 0)


def count_parameters(specs: Sequence[LayerSpec]) -> int:
    """Parameter count implied by a list of specs."""
    return sum(spec.parameter_count() for spec in specs)


def chain_shapes(
    specs: Sequence[LayerSpec], channels: int, height: int, width: int
) -> list[tuple[str, tuple[int, int, int]]]:
    """Walk a straight chain of specs and list each output's (C, H, W)."""
    shapes = []
    for spec in specs:
        if spec.has_weights and spec.in_ch != channels:
            raise ContractError(
                f"{spec.name}: expects {spec.in_ch} channels, chain carries {channels}"
            )
        height, width = spec.output_size(height, width)
        channels = spec.output_channels(channels)
        shapes.append((spec.name, (channels, height, width)))
    return shapes


def layer_rng(seed: int, name: str) -> np.random.Generator:
    """Generator keyed by (seed, layer name), independent of build order."""
    return np.random.default_rng([seed, zlib.crc32(name.encode("utf-8"))])


@dataclass
class ConvLayer:
    """A conv / transposed conv, optionally followed by instance norm and an activation."""

    spec: LayerSpec
    weight: Parameter
    bias: Parameter | None = field(default=None)

    @classmethod
    def build(
        cls,
        spec: LayerSpec,
        prefix: str,
        seed: int,
        dtype: np.dtype,
        trainable: bool = True,
    ) -> ConvLayer:
        """Fan-in scaled uniform init, U(-1/sqrt(fan_in), 1/sqrt(fan_in))."""
        if not spec.has_weights:
            raise ContractError(f"{spec.name} ({spec.kind.value}) has no weights")
        name = f"{prefix}.{spec.name}"
        rng = layer_rng(seed, name)
        k = spec.kernel
        if spec.kind is LayerKind.CONVT:
            shape = (spec.in_ch, spec.out_ch, k, k)
            fan_in = spec.out_ch * k * k
        else:
            shape = (spec.out_ch, spec.in_ch, k, k)
            fan_in = spec.in_ch * k * k
        bound = 1.0 / np.sqrt(fan_in)
        weight = Parameter(
            rng.uniform(-bound, bound, size=shape).astype(dtype),
            f"{name}.weight",
            trainable,
        )
        bias = None
        if spec.bias:
            bias = Parameter(
                rng.uniform(-bound, bound, size=(spec.out_ch,)).astype(dtype),
                f"{name}.bias",
                trainable,
            )
        return cls(spec, weight, bias)

    def parameters(self) -> list[Parameter]:
        return [self.weight] + ([self.bias] if self.bias is not None else [])

    def __call__(self, x: Tensor, *, activate: bool = True) -> Tensor:
        spec = self.spec
        if spec.kind is LayerKind.CONVT:
            y = ops.conv_transpose2d(x, self.weight, self.bias, spec.stride, spec.padding)
        else:
            y = ops.conv2d(x, self.weight, self.bias, spec.stride, spec.padding)
        if spec.norm:
            y = ops.instance_norm(y)
        if activate and spec.activation is not None:
            y = ops.activation(y, spec.activation)
        return y


def conv(
    name: str,
    kernel: int,
    in_ch: int,
    out_ch: int,
    *,
    stride: int = 1,
    padding: int | Sequence[int] = 0,
    norm: bool = False,
    activation: str | None = "relu",
    transposed: bool = False,
) -> LayerSpec:
    """Spec shorthand mirroring the table notation conv(k, in, out)."""
    return LayerSpec(
        name=name,
        kind=LayerKind.CONVT if transposed else LayerKind.CONV,
        kernel=kernel,
        in_ch=in_ch,
        out_ch=out_ch,
        stride=stride,
        padding=ops.as_padding(padding),
        norm=norm,
        # a bias ahead of instance norm is cancelled by the mean subtraction
        bias=not norm,
        activation=activation,
    )
