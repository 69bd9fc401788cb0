"""Re-feeding a filtering model its own output to watch holes fill in."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from misf_inpaint.lib.dataset import FILL_VALUE
from misf_inpaint.lib.errors import ContractError
from misf_inpaint.lib.networks import MisfModel, composite
from misf_inpaint.lib.tensor import Tensor, no_grad

MOVED_THRESHOLD = 1e-3
ACCURATE_THRESHOLD = 0.1


@dataclass
class FillFront:
    """How far the fill has progressed into the hole at one iteration."""

    iteration: int
    filled: float
    accurate: float | None = None


@dataclass
class RecurrentResult:
    frames: list[np.ndarray] = field(default_factory=list)
    trace: list[FillFront] = field(default_factory=list)


def _front(
    iteration: int, frame: np.ndarray, hole: np.ndarray, clean: np.ndarray | None
) -> FillFront:
    count = int(hole.sum())
    if count == 0:
        return FillFront(iteration, 1.0, 1.0 if clean is not None else None)
    moved = np.max(np.abs(frame - FILL_VALUE), axis=0) > MOVED_THRESHOLD
    accurate = None
    if clean is not None:
        close = np.max(np.abs(frame - clean), axis=0) < ACCURATE_THRESHOLD
        accurate = float((close & hole).sum()) / count
    return FillFront(iteration, float((moved & hole).sum()) / count, accurate)


def recurrent_filter(
    image: np.ndarray,
    mask: np.ndarray,
    model: MisfModel,
    iterations: int,
    *,
    clean: np.ndarray | None = None,
    delta: bool = False,
) -> RecurrentResult:
    """Run the model `iterations` times on its own output.

    `image` is the corrupted [3, H, W] input and `mask` its [1, H, W] holes.
    Known pixels are restored from `image` after every pass. The result holds
    all T + 1 frames, the input first.
    """
    if not model.variant.filters_image:
        raise ContractError(f"{model.variant.value} does no image-level filtering")
    if iterations < 0:
        raise ContractError(f"iteration count must be >= 0, got {iterations}")
    original = Tensor(np.asarray(image, dtype=model.dtype)[None])
    hole_mask = np.asarray(mask, dtype=model.dtype)[None]
    hole = hole_mask[0, 0] > 0

    result = RecurrentResult()
    frame = original
    result.frames.append(frame.numpy()[0].copy())
    result.trace.append(_front(0, result.frames[0], hole, clean))
    with no_grad():
        for t in range(1, iterations + 1):
            completed = model.forward(frame, delta=delta)
            frame = composite(completed, original, hole_mask)
            result.frames.append(frame.numpy()[0].copy())
            result.trace.append(_front(t, result.frames[-1], hole, clean))
            logging.debug("recurrent pass %d: %s", t, result.trace[-1])
    return result
