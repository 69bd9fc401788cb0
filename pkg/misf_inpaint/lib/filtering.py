"""Pixel-wise predictive filtering.

Every output element is a weighted sum of its N x N neighbourhood, with one
kernel per spatial location (and per channel group) supplied by a kernel
field. The same operator serves image-level and feature-level filtering.

Kernel taps are packed channel-major: channel ``g * N**2 + t`` of a kernel
field holds tap ``t`` of group ``g``, where ``t = (dy + r) * N + (dx + r)`` and
``r = N // 2``.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from misf_inpaint.lib.errors import ContractError
from misf_inpaint.lib.tensor import Tensor, record


class Normalize(Enum):
    """How raw kernel logits become taps."""

    SOFTMAX = "softmax"
    NONE = "none"


class Boundary(Enum):
    """How the neighbourhood is extended past the border."""

    ZERO = "zero-pad"
    REPLICATE = "replicate"


@dataclass(frozen=True)
class FilterConfig:
    """Kernel side `n`, channel-group count and the tap/border policies."""

    n: int = 3
    groups: int = 1
    normalize: Normalize = Normalize.SOFTMAX
    boundary: Boundary = Boundary.REPLICATE

    def __post_init__(self) -> None:
        if self.n < 1 or self.n % 2 == 0:
            raise ContractError(f"kernel side must be odd and >= 1, got {self.n}")
        if self.groups < 1:
            raise ContractError(f"group count must be >= 1, got {self.groups}")

    @property
    def taps(self) -> int:
        return self.n * self.n

    @property
    def radius(self) -> int:
        return self.n // 2


@dataclass
class KernelField:
    """Per-location kernels, `data` shaped [B, G * N**2, H, W]."""

    data: Tensor
    config: FilterConfig

    @property
    def spatial(self) -> tuple[int, int]:
        return (self.data.shape[2], self.data.shape[3])

    def taps(self) -> np.ndarray:
        """The kernels as a [B, G, N**2, H, W] array."""
        batch, _, height, width = self.data.shape
        return self.data.data.reshape(
            batch, self.config.groups, self.config.taps, height, width
        )


def _check_field_channels(channels: int, config: FilterConfig) -> None:
    if channels % config.taps:
        raise ContractError(
            f"{channels} kernel channels are not divisible by N^2 = {config.taps}"
        )
    if channels != config.groups * config.taps:
        raise ContractError(
            f"{channels} kernel channels != G * N^2 = {config.groups * config.taps}"
        )


def normalize_kernels(raw: Tensor, config: FilterConfig) -> KernelField:
    """Softmax each location's N**2 taps (per group), or pass through."""
    if raw.ndim != 4:
        raise ContractError(f"kernel logits must be 4-D, got {raw.shape}")
    batch, channels, height, width = raw.shape
    _check_field_channels(channels, config)
    if config.normalize is Normalize.NONE:
        return KernelField(raw, config)

    shape = (batch, config.groups, config.taps, height, width)
    logits = raw.data.reshape(shape)
    shifted = np.exp(logits - logits.max(axis=2, keepdims=True))
    probs = shifted / shifted.sum(axis=2, keepdims=True)

    def grad_fn(g: np.ndarray):
        g5 = g.reshape(shape)
        inner = (g5 * probs).sum(axis=2, keepdims=True)
        return ((probs * (g5 - inner)).reshape(raw.shape),)

    out = record("softmax_kernels", probs.reshape(raw.shape), (raw,), grad_fn)
    return KernelField(out, config)


def delta_kernels(
    batch: int,
    groups: int,
    height: int,
    width: int,
    config: FilterConfig,
    dtype: np.dtype | type = np.float64,
) -> KernelField:
    """Kernels whose centre tap is 1; filtering with them is the identity."""
    config = FilterConfig(config.n, groups, config.normalize, config.boundary)
    data = np.zeros((batch, groups, config.taps, height, width), dtype=dtype)
    data[:, :, config.taps // 2] = 1.0
    return KernelField(
        Tensor(data.reshape(batch, groups * config.taps, height, width)), config
    )


def _pad(x: np.ndarray, radius: int, boundary: Boundary) -> np.ndarray:
    widths = ((0, 0), (0, 0), (radius, radius), (radius, radius))
    if boundary is Boundary.REPLICATE:
        return np.pad(x, widths, mode="edge")
    return np.pad(x, widths)


def _unpad(dxp: np.ndarray, radius: int, boundary: Boundary) -> np.ndarray:
    """Adjoint of `_pad`: fold border gradients back onto the image."""
    if radius == 0:
        return dxp
    height = dxp.shape[2] - 2 * radius
    width = dxp.shape[3] - 2 * radius
    if boundary is Boundary.ZERO:
        return dxp[:, :, radius : radius + height, radius : radius + width]
    rows = np.clip(np.arange(-radius, height + radius), 0, height - 1)
    cols = np.clip(np.arange(-radius, width + radius), 0, width - 1)
    by_rows = np.zeros((*dxp.shape[:2], height, dxp.shape[3]), dtype=dxp.dtype)
    np.add.at(by_rows, (slice(None), slice(None), rows), dxp)
    out = np.zeros((*dxp.shape[:2], height, width), dtype=dxp.dtype)
    np.add.at(out, (slice(None), slice(None), slice(None), cols), by_rows)
    return out


def pixel_filter(x: Tensor, kernels: KernelField) -> Tensor:
    """Filter `x` [B, C, H, W] with one kernel per location.

    With G = 1 the kernel at each location is shared by all channels; with
    G = C each channel has its own. Differentiable in both `x` and the kernels.
    """
    if x.ndim != 4:
        raise ContractError(f"pixel_filter expects a 4-D input, got {x.shape}")
    config = kernels.config
    batch, channels, height, width = x.shape
    k_batch, k_channels, k_height, k_width = kernels.data.shape
    if (k_batch, k_height, k_width) != (batch, height, width):
        raise ContractError(
            f"kernel field {kernels.data.shape} does not match input {x.shape}"
        )
    _check_field_channels(k_channels, config)
    if config.groups not in (1, channels):
        raise ContractError(
            f"group count {config.groups} must be 1 or the channel count {channels}"
        )

    n, radius = config.n, config.radius
    taps = kernels.taps()
    xp = _pad(x.data, radius, config.boundary)
    out = np.zeros_like(x.data)
    for t in range(config.taps):
        i, j = divmod(t, n)
        out += taps[:, :, t] * xp[:, :, i : i + height, j : j + width]
    need_x, need_k = x.requires_grad, kernels.data.requires_grad

    def grad_fn(g: np.ndarray):
        dxp = np.zeros_like(xp) if need_x else None
        dk = np.zeros_like(taps) if need_k else None
        for t in range(config.taps):
            i, j = divmod(t, n)
            window = xp[:, :, i : i + height, j : j + width]
            if dxp is not None:
                dxp[:, :, i : i + height, j : j + width] += taps[:, :, t] * g
            if dk is not None:
                product = g * window
                if config.groups == 1:
                    product = product.sum(axis=1, keepdims=True)
                dk[:, :, t] = product
        dx = _unpad(dxp, radius, config.boundary) if dxp is not None else None
        return dx, (dk.reshape(kernels.data.shape) if dk is not None else None)

    return record("pixel_filter", out, (x, kernels.data), grad_fn)


def feature_filter(f: Tensor, kernels: KernelField) -> Tensor:
    """Semantic filtering: `pixel_filter` on a feature map with per-channel kernels."""
    if kernels.config.groups != f.shape[1]:
        raise ContractError(
            f"feature filtering needs one kernel group per channel "
            f"({f.shape[1]}), got {kernels.config.groups}"
        )
    return pixel_filter(f, kernels)


def reference_filter(x: np.ndarray, kernels: np.ndarray, config: FilterConfig):
    """Brute-force neighbourhood sum, one element at a time."""
    batch, channels, height, width = x.shape
    n, radius = config.n, config.radius
    taps = kernels.reshape(batch, config.groups, config.taps, height, width)
    out = np.zeros_like(x)
    for b in range(batch):
        for c in range(channels):
            g = 0 if config.groups == 1 else c
            for h in range(height):
                for w in range(width):
                    acc = 0.0
                    for t in range(config.taps):
                        dy, dx = t // n - radius, t % n - radius
                        qh, qw = h + dy, w + dx
                        if config.boundary is Boundary.REPLICATE:
                            qh = min(max(qh, 0), height - 1)
                            qw = min(max(qw, 0), width - 1)
                        elif not (0 <= qh < height and 0 <= qw < width):
                            continue
                        acc += taps[b, g, t, h, w] * x[b, c, qh, qw]
                    out[b, c, h, w] = acc
    return out
