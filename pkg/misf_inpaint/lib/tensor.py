"""Dense tensors with a reverse-mode tape.

A `Tensor` wraps a numpy array. Operations in `misf_inpaint.lib.ops` record a
`TapeNode` on their output whenever gradient recording is enabled and at least
one input requires a gradient. `backward` walks the recorded graph once in
reverse topological order and accumulates gradients into the leaves.
"""

from __future__ import annotations

import contextlib
from collections.abc import Callable, Iterable, Iterator, Sequence
from dataclasses import dataclass, field

import numpy as np

from misf_inpaint.lib.errors import ContractError, NumericError

PRECISIONS: dict[str, type[np.floating]] = {
    "float32": np.float32,
    "float64": np.float64,
}

BackwardFn = Callable[[np.ndarray], Sequence[np.ndarray | None]]

_grad_enabled = True


def resolve_dtype(precision: str | np.dtype | type) -> np.dtype:
    """Map a precision name (or dtype) onto one of the two supported dtypes."""
    if isinstance(precision, str):
        if precision not in PRECISIONS:
            raise ContractError(f"Unsupported precision: {precision}")
        return np.dtype(PRECISIONS[precision])
    dtype = np.dtype(precision)
    if dtype not in (np.dtype(np.float32), np.dtype(np.float64)):
        raise ContractError(f"Unsupported precision: {dtype}")
    return dtype


@dataclass
class TapeNode:
    """One recorded operation: its inputs and how to push gradients back."""

    op: str
    inputs: tuple[Tensor, ...]
    backward: BackwardFn | None
    # which inputs wanted a gradient when the op was recorded
    needs_grad: tuple[bool, ...] = ()
    consumed: bool = field(default=False)


class Tensor:
    """A dense array that can take part in gradient computation."""

    def __init__(
        self,
        data: np.ndarray | float | Sequence,
        requires_grad: bool = False,
        *,
        dtype: str | np.dtype | type | None = None,
    ):
        array = np.asarray(data)
        if dtype is not None:
            array = array.astype(resolve_dtype(dtype), copy=False)
        elif array.dtype not in (np.dtype(np.float32), np.dtype(np.float64)):
            array = array.astype(np.float64)
        self.data: np.ndarray = array
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._node: TapeNode | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return int(self.data.size)

    @property
    def is_leaf(self) -> bool:
        return self._node is None

    def numpy(self) -> np.ndarray:
        """Return the underlying array (not a copy)."""
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() on a tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> Tensor:
        """A leaf sharing this tensor's values, cut from the graph."""
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def __add__(self, other: Tensor | float) -> Tensor:
        from misf_inpaint.lib import ops

        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other: Tensor | float) -> Tensor:
        from misf_inpaint.lib import ops

        return ops.sub(self, other)

    def __rsub__(self, other: float) -> Tensor:
        from misf_inpaint.lib import ops

        return ops.add(ops.neg(self), other)

    def __mul__(self, other: Tensor | float) -> Tensor:
        from misf_inpaint.lib import ops

        return ops.mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other: float) -> Tensor:
        from misf_inpaint.lib import ops

        return ops.mul(self, 1.0 / other)

    def __neg__(self) -> Tensor:
        from misf_inpaint.lib import ops

        return ops.neg(self)

    def __repr__(self) -> str:
        grad = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{grad})"


class Parameter(Tensor):
    """A named trainable leaf. Its gradient always matches its value's shape."""

    def __init__(self, data: np.ndarray, name: str, trainable: bool = True):
        super().__init__(np.array(data, copy=True), requires_grad=trainable)
        self.name = name

    @property
    def trainable(self) -> bool:
        return self.requires_grad

    @trainable.setter
    def trainable(self, value: bool) -> None:
        self.requires_grad = value

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.shape}, dtype={self.dtype})"


def is_grad_enabled() -> bool:
    return _grad_enabled


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Evaluate without recording anything on the tape."""
    global _grad_enabled
    previous = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = previous


@contextlib.contextmanager
def frozen(params: Iterable[Parameter]) -> Iterator[None]:
    """Temporarily stop `params` from receiving gradients."""
    params = list(params)
    previous = [p.requires_grad for p in params]
    for p in params:
        p.requires_grad = False
    try:
        yield
    finally:
        for p, flag in zip(params, previous, strict=True):
            p.requires_grad = flag


def check_finite(op: str, data: np.ndarray) -> None:
    if not np.all(np.isfinite(data)):
        raise NumericError(f"{op} produced a non-finite value")


def record(
    op: str,
    data: np.ndarray,
    inputs: Sequence[Tensor],
    backward: BackwardFn,
) -> Tensor:
    """Wrap an op's result, attaching a tape node when gradients are needed."""
    check_finite(op, data)
    dtypes = {t.dtype for t in inputs}
    if len(dtypes) > 1:
        raise ContractError(f"{op}: mixed precision inputs {sorted(map(str, dtypes))}")
    out = Tensor(data)
    if _grad_enabled and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        needs = tuple(t.requires_grad for t in inputs)
        out._node = TapeNode(op, tuple(inputs), backward, needs)
    return out


def _topological(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        tensor, expanded = stack.pop()
        if expanded:
            order.append(tensor)
            continue
        if id(tensor) in seen:
            continue
        seen.add(id(tensor))
        stack.append((tensor, True))
        if tensor._node is not None:
            for parent in tensor._node.inputs:
                if parent._node is not None and id(parent) not in seen:
                    stack.append((parent, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into every leaf that requires a gradient.

    The graph is consumed: calling backward again without a fresh forward pass
    is a contract error.
    """
    if loss.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    node = loss._node
    if node is None:
        raise ContractError("loss was not produced by a recorded forward pass")
    if node.consumed:
        raise ContractError("backward called twice on the same graph")

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for tensor in reversed(_topological(loss)):
        current = tensor._node
        assert current is not None
        grad = grads.pop(id(tensor), None)
        if grad is None or current.backward is None:
            current.consumed = True
            continue
        input_grads = current.backward(grad)
        for parent, parent_grad, needed in zip(
            current.inputs, input_grads, current.needs_grad, strict=True
        ):
            if parent_grad is None or not needed:
                continue
            if parent._node is None:
                if parent.grad is None:
                    parent.grad = np.array(parent_grad, dtype=parent.dtype, copy=True)
                else:
                    parent.grad = parent.grad + parent_grad
            elif id(parent) in grads:
                grads[id(parent)] = grads[id(parent)] + parent_grad
            else:
                grads[id(parent)] = parent_grad
        current.consumed = True
        # saved activations are only needed once
        current.backward = None
