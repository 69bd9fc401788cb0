"""Primitive differentiable operations.

Convolutions loop over kernel offsets and accumulate one matrix product per
offset, the same traversal an im2col/col2im pair performs, without
materialising the full column matrix. Tensors are laid out (B, C, H, W).
"""

from __future__ import annotations

from collections.abc import Sequence

import numpy as np

from misf_inpaint.lib.errors import ContractError
from misf_inpaint.lib.tensor import Tensor, record

Padding = tuple[int, int, int, int]

ACTIVATIONS = ("relu", "leaky_relu", "tanh", "sigmoid")
LEAKY_SLOPE = 0.2


def as_padding(padding: int | Sequence[int]) -> Padding:
    """Normalise a padding spec to (top, left, bottom, right)."""
    if isinstance(padding, int):
        return (padding, padding, padding, padding)
    values = tuple(int(p) for p in padding)
    if len(values) == 2:
        return (values[0], values[1], values[0], values[1])
    if len(values) != 4:
        raise ContractError(f"padding needs 1, 2 or 4 values, got {values}")
    return (values[0], values[1], values[2], values[3])


def _const(value: Tensor | np.ndarray | float, like: Tensor) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=like.dtype))


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# Elementwise arithmetic


def add(a: Tensor, b: Tensor | np.ndarray | float) -> Tensor:
    b = _const(b, a)

    def grad_fn(g: np.ndarray):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return record("add", a.data + b.data, (a, b), grad_fn)


def sub(a: Tensor, b: Tensor | np.ndarray | float) -> Tensor:
    b = _const(b, a)

    def grad_fn(g: np.ndarray):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return record("sub", a.data - b.data, (a, b), grad_fn)


def mul(a: Tensor, b: Tensor | np.ndarray | float) -> Tensor:
    b = _const(b, a)

    def grad_fn(g: np.ndarray):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return record("mul", a.data * b.data, (a, b), grad_fn)


def neg(a: Tensor) -> Tensor:
    return record("neg", -a.data, (a,), lambda g: (-g,))


def absolute(a: Tensor) -> Tensor:
    return record("abs", np.abs(a.data), (a,), lambda g: (g * np.sign(a.data),))


def square(a: Tensor) -> Tensor:
    return record("square", a.data * a.data, (a,), lambda g: (2.0 * g * a.data,))


def total(a: Tensor) -> Tensor:
    """Sum of every element, as a scalar tensor."""
    return record(
        "sum", np.asarray(a.data.sum()), (a,), lambda g: (np.broadcast_to(g, a.shape),)
    )


def mean(a: Tensor) -> Tensor:
    n = a.size

    def grad_fn(g: np.ndarray):
        return (np.broadcast_to(g / n, a.shape).astype(a.dtype),)

    return record("mean", np.asarray(a.data.mean()), (a,), grad_fn)


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    return record("reshape", a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def clamp(a: Tensor, low: float, high: float) -> Tensor:
    inside = (a.data >= low) & (a.data <= high)
    return record("clamp", np.clip(a.data, low, high), (a,), lambda g: (g * inside,))


def softplus(a: Tensor) -> Tensor:
    """log(1 + exp(a)), evaluated without overflow."""

    def grad_fn(g: np.ndarray):
        return (g * _sigmoid(a.data),)

    return record("softplus", np.logaddexp(0.0, a.data), (a,), grad_fn)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def activation(a: Tensor, kind: str) -> Tensor:
    """Elementwise relu, leaky_relu(0.2), tanh or sigmoid."""
    x = a.data
    if kind == "relu":
        slope = (x > 0).astype(x.dtype)
        return record("relu", x * slope, (a,), lambda g: (g * slope,))
    if kind == "leaky_relu":
        slope = np.where(x > 0, 1.0, LEAKY_SLOPE).astype(x.dtype)
        return record("leaky_relu", x * slope, (a,), lambda g: (g * slope,))
    if kind == "tanh":
        y = np.tanh(x)
        return record("tanh", y, (a,), lambda g: (g * (1.0 - y * y),))
    if kind == "sigmoid":
        y = _sigmoid(x)
        return record("sigmoid", y, (a,), lambda g: (g * y * (1.0 - y),))
    raise ContractError(f"Unknown activation: {kind}")


# Layout


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    """Stack `b`'s channels after `a`'s."""
    if a.ndim != 4 or b.ndim != 4:
        raise ContractError("concat_channels expects 4-D tensors")
    if (a.shape[0], *a.shape[2:]) != (b.shape[0], *b.shape[2:]):
        raise ContractError(f"concat_channels: {a.shape} vs {b.shape}")
    split = a.shape[1]

    def grad_fn(g: np.ndarray):
        return g[:, :split], g[:, split:]

    return record("concat", np.concatenate([a.data, b.data], axis=1), (a, b), grad_fn)


# Convolution


def _check_finite_shape(op: str, out_h: int, out_w: int) -> None:
    if out_h <= 0 or out_w <= 0:
        raise ContractError(f"{op}: empty output ({out_h}x{out_w})")


def _gather(xp: np.ndarray, w: np.ndarray, stride: int, out_h: int, out_w: int):
    """Correlate padded `xp` [B,Ci,.,.] with `w` [Co,Ci,k,k]."""
    batch = xp.shape[0]
    c_out, _, kh, kw = w.shape
    acc = np.zeros((batch, out_h, out_w, c_out), dtype=xp.dtype)
    for i in range(kh):
        for j in range(kw):
            patch = xp[
                :, :, i : i + stride * (out_h - 1) + 1 : stride,
                j : j + stride * (out_w - 1) + 1 : stride,
            ]
            acc += np.tensordot(patch, w[:, :, i, j], axes=([1], [1]))
    return np.ascontiguousarray(acc.transpose(0, 3, 1, 2))


def _scatter(gy: np.ndarray, w: np.ndarray, stride: int, full_shape: tuple[int, ...]):
    """Adjoint of `_gather` with respect to its input."""
    _, _, kh, kw = w.shape
    out_h, out_w = gy.shape[2:]
    dxp = np.zeros(full_shape, dtype=gy.dtype)
    for i in range(kh):
        for j in range(kw):
            contrib = np.tensordot(gy, w[:, :, i, j], axes=([1], [0]))
            dxp[
                :, :, i : i + stride * (out_h - 1) + 1 : stride,
                j : j + stride * (out_w - 1) + 1 : stride,
            ] += contrib.transpose(0, 3, 1, 2)
    return dxp


def _weight_grad(gy: np.ndarray, xp: np.ndarray, kernel: int, stride: int):
    """Gradient of `_gather` with respect to its weight, shaped [Co,Ci,k,k]."""
    out_h, out_w = gy.shape[2:]
    dw = np.zeros((gy.shape[1], xp.shape[1], kernel, kernel), dtype=gy.dtype)
    for i in range(kernel):
        for j in range(kernel):
            patch = xp[
                :, :, i : i + stride * (out_h - 1) + 1 : stride,
                j : j + stride * (out_w - 1) + 1 : stride,
            ]
            dw[:, :, i, j] = np.tensordot(gy, patch, axes=([0, 2, 3], [0, 2, 3]))
    return dw


def conv_output_size(size: int, kernel: int, stride: int, pad_total: int) -> int:
    return (size + pad_total - kernel) // stride + 1


def conv2d(
    x: Tensor,
    weight: Tensor,
    bias: Tensor | None = None,
    stride: int = 1,
    padding: int | Sequence[int] = 0,
) -> Tensor:
    """Cross-correlation with weight [C_out, C_in, k, k]."""
    top, left, bottom, right = as_padding(padding)
    if x.ndim != 4 or weight.ndim != 4:
        raise ContractError("conv2d expects 4-D input and weight")
    c_out, c_in, kh, kw = weight.shape
    if kh != kw:
        raise ContractError(f"conv2d: non-square kernel {kh}x{kw}")
    if x.shape[1] != c_in:
        raise ContractError(f"conv2d: input has {x.shape[1]} channels, weight wants {c_in}")
    if bias is not None and bias.shape != (c_out,):
        raise ContractError(f"conv2d: bias shape {bias.shape} != ({c_out},)")
    height, width = x.shape[2:]
    out_h = conv_output_size(height, kh, stride, top + bottom)
    out_w = conv_output_size(width, kw, stride, left + right)
    _check_finite_shape("conv2d", out_h, out_w)

    xp = np.pad(x.data, ((0, 0), (0, 0), (top, bottom), (left, right)))
    out = _gather(xp, weight.data, stride, out_h, out_w)
    if bias is not None:
        out += bias.data.reshape(1, -1, 1, 1)
    need_x, need_w = x.requires_grad, weight.requires_grad

    def grad_fn(g: np.ndarray):
        dx = None
        if need_x:
            dxp = _scatter(g, weight.data, stride, xp.shape)
            dx = dxp[:, :, top : top + height, left : left + width]
        dw = _weight_grad(g, xp, kh, stride) if need_w else None
        db = g.sum(axis=(0, 2, 3)) if bias is not None else None
        return (dx, dw, db) if bias is not None else (dx, dw)

    inputs = (x, weight, bias) if bias is not None else (x, weight)
    return record("conv2d", out, inputs, grad_fn)


def conv2d_backward_data(
    gy: np.ndarray,
    weight: np.ndarray,
    input_hw: tuple[int, int],
    stride: int = 1,
    padding: int | Sequence[int] = 0,
) -> np.ndarray:
    """d(conv2d)/d(input) applied to `gy`, as a plain array."""
    top, left, bottom, right = as_padding(padding)
    height, width = input_hw
    full = (gy.shape[0], weight.shape[1], height + top + bottom, width + left + right)
    dxp = _scatter(gy, weight, stride, full)
    return dxp[:, :, top : top + height, left : left + width]


def conv_transpose2d(
    x: Tensor,
    weight: Tensor,
    bias: Tensor | None = None,
    stride: int = 1,
    padding: int | Sequence[int] = 0,
) -> Tensor:
    """Transposed convolution with weight [C_in, C_out, k, k].

    Output size is (H - 1) * stride - (top + bottom) + k.
    """
    top, left, bottom, right = as_padding(padding)
    if x.ndim != 4 or weight.ndim != 4:
        raise ContractError("conv_transpose2d expects 4-D input and weight")
    c_in, c_out, kh, kw = weight.shape
    if kh != kw:
        raise ContractError(f"conv_transpose2d: non-square kernel {kh}x{kw}")
    if x.shape[1] != c_in:
        raise ContractError(
            f"conv_transpose2d: input has {x.shape[1]} channels, weight wants {c_in}"
        )
    if bias is not None and bias.shape != (c_out,):
        raise ContractError(f"conv_transpose2d: bias shape {bias.shape} != ({c_out},)")
    batch, _, height, width = x.shape
    full_h = (height - 1) * stride + kh
    full_w = (width - 1) * stride + kw
    out_h = full_h - top - bottom
    out_w = full_w - left - right
    _check_finite_shape("conv_transpose2d", out_h, out_w)

    full = _scatter(x.data, weight.data, stride, (batch, c_out, full_h, full_w))
    out = np.ascontiguousarray(full[:, :, top : top + out_h, left : left + out_w])
    if bias is not None:
        out += bias.data.reshape(1, -1, 1, 1)
    need_x, need_w = x.requires_grad, weight.requires_grad

    def grad_fn(g: np.ndarray):
        g_full = np.pad(g, ((0, 0), (0, 0), (top, bottom), (left, right)))
        dx = _gather(g_full, weight.data, stride, height, width) if need_x else None
        dw = _weight_grad(x.data, g_full, kh, stride) if need_w else None
        db = g.sum(axis=(0, 2, 3)) if bias is not None else None
        return (dx, dw, db) if bias is not None else (dx, dw)

    inputs = (x, weight, bias) if bias is not None else (x, weight)
    return record("conv_transpose2d", out, inputs, grad_fn)


def avg_pool2d(x: Tensor, kernel: int = 2, stride: int = 2) -> Tensor:
    """Mean over non-overlapping 2x2 windows."""
    if kernel != 2 or stride != 2:
        raise ContractError("avg_pool2d supports kernel=2, stride=2 only")
    batch, channels, height, width = x.shape
    if height % 2 or width % 2:
        raise ContractError(f"avg_pool2d: odd spatial size {height}x{width}")
    out = x.data.reshape(batch, channels, height // 2, 2, width // 2, 2).mean(axis=(3, 5))

    def grad_fn(g: np.ndarray):
        return (np.repeat(np.repeat(g, 2, axis=2), 2, axis=3) * 0.25,)

    return record("avg_pool2d", out, (x,), grad_fn)


def instance_norm(x: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalise each (b, c) plane to zero mean and unit variance."""
    mu = x.data.mean(axis=(2, 3), keepdims=True)
    centred = x.data - mu
    var = (centred * centred).mean(axis=(2, 3), keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = centred * inv_std

    def grad_fn(g: np.ndarray):
        g_mean = g.mean(axis=(2, 3), keepdims=True)
        gx_mean = (g * xhat).mean(axis=(2, 3), keepdims=True)
        return (inv_std * (g - g_mean - xhat * gx_mean),)

    return record("instance_norm", xhat, (x,), grad_fn)


def gram(f: Tensor) -> Tensor:
    """Channel Gram matrix F F^T / (C H W), shape [B, C, C]."""
    batch, channels, height, width = f.shape
    scale = 1.0 / (channels * height * width)
    flat = f.data.reshape(batch, channels, height * width)
    out = np.matmul(flat, flat.transpose(0, 2, 1)) * scale

    def grad_fn(g: np.ndarray):
        sym = g + g.transpose(0, 2, 1)
        return ((np.matmul(sym, flat) * scale).reshape(f.shape),)

    return record("gram", out, (f,), grad_fn)
