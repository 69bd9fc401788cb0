"""Free-form hole masks bucketed by the fraction of the image they cover."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from enum import Enum

import numpy as np
from PIL import Image, ImageDraw

from misf_inpaint.lib.errors import ContractError, MaskBucketError

MIN_SIDE = 32


class Bucket(Enum):
    """Hole-ratio ranges; values are (label, low, high)."""

    B0_20 = ("0-20", 0.0, 0.2)
    B20_40 = ("20-40", 0.2, 0.4)
    B40_60 = ("40-60", 0.4, 0.6)

    @property
    def label(self) -> str:
        return self.value[0]

    @property
    def low(self) -> float:
        return self.value[1]

    @property
    def high(self) -> float:
        return self.value[2]

    def contains(self, ratio: float, tolerance: float = 0.0) -> bool:
        return self.low - tolerance <= ratio <= self.high + tolerance

    @classmethod
    def parse(cls, text: str) -> Bucket:
        cleaned = text.strip().upper().replace("B", "").replace("_", "-")
        for bucket in cls:
            if bucket.label == cleaned:
                return bucket
        raise ContractError(
            f"Unknown bucket {text!r}; expected one of {[b.label for b in cls]}"
        )

    @classmethod
    def of(cls, ratio: float) -> Bucket | None:
        """The bucket a measured ratio falls in, if any."""
        for bucket in cls:
            if bucket.low <= ratio < bucket.high or (
                bucket is cls.B40_60 and ratio == bucket.high
            ):
                return bucket
        return None


@dataclass(frozen=True)
class MaskSpec:
    """Parameters of the stroke model.

    Widths and step lengths are fractions of the shorter image side. A
    `target` ratio overrides the one drawn uniformly from the bucket.
    """

    bucket: Bucket = Bucket.B20_40
    seed: int = 0
    vertices: tuple[int, int] = (4, 10)
    width_range: tuple[float, float] = (0.04, 0.12)
    length_range: tuple[float, float] = (0.05, 0.25)
    rectangles: bool = False
    max_strokes: int = 400
    target: float | None = None


def hole_ratio(mask: np.ndarray) -> float:
    return float(np.count_nonzero(mask)) / mask.size


def _draw_stroke(
    draw: ImageDraw.ImageDraw,
    rng: np.random.Generator,
    spec: MaskSpec,
    height: int,
    width: int,
    scale: float,
) -> None:
    side = min(height, width)
    if spec.rectangles and rng.random() < 0.2:
        w = rng.uniform(*spec.length_range) * side * scale
        h = rng.uniform(*spec.length_range) * side * scale
        x0, y0 = rng.uniform(0, width), rng.uniform(0, height)
        draw.rectangle((x0, y0, x0 + w, y0 + h), fill=255)
        return
    brush = max(1, round(rng.uniform(*spec.width_range) * side * scale))
    x, y = rng.uniform(0, width), rng.uniform(0, height)
    points = [(x, y)]
    heading = rng.uniform(0, 2 * math.pi)
    for _ in range(rng.integers(spec.vertices[0], spec.vertices[1] + 1)):
        heading += rng.uniform(-math.pi / 3, math.pi / 3)
        step = rng.uniform(*spec.length_range) * side * scale
        x = float(np.clip(x + step * math.cos(heading), 0, width - 1))
        y = float(np.clip(y + step * math.sin(heading), 0, height - 1))
        points.append((x, y))
    draw.line(points, fill=255, width=brush)
    radius = brush / 2
    for px, py in points:
        draw.ellipse((px - radius, py - radius, px + radius, py + radius), fill=255)


def generate_mask(spec: MaskSpec, height: int, width: int) -> np.ndarray:
    """A [1, H, W] float mask (1 = hole) whose ratio lies inside the bucket.

    Strokes are added until the ratio reaches the target; a stroke that would
    push it past the bucket's upper edge is discarded and later strokes are
    drawn smaller.
    """
    if height < MIN_SIDE or width < MIN_SIDE:
        raise ContractError(f"masks need sides >= {MIN_SIDE}, got {height}x{width}")
    bucket = spec.bucket
    rng = np.random.default_rng([spec.seed, list(Bucket).index(bucket)])
    target = spec.target if spec.target is not None else rng.uniform(bucket.low, bucket.high)
    if not bucket.contains(target):
        raise ContractError(f"target ratio {target} is outside bucket {bucket.label}")
    if target == 0:
        if bucket.low != 0:
            raise ContractError(f"an empty mask is not in bucket {bucket.label}")
        return np.zeros((1, height, width), dtype=np.float32)

    canvas = Image.new("L", (width, height), 0)
    ratio = 0.0
    scale = 1.0
    for _ in range(spec.max_strokes):
        candidate = canvas.copy()
        _draw_stroke(ImageDraw.Draw(candidate), rng, spec, height, width, scale)
        pixels = np.asarray(candidate)
        new_ratio = hole_ratio(pixels)
        if new_ratio > bucket.high:
            scale *= 0.7
            continue
        canvas, ratio = candidate, new_ratio
        if ratio >= target:
            logging.debug(
                "mask seed=%d bucket=%s ratio=%.4f", spec.seed, bucket.label, ratio
            )
            return (pixels > 0).astype(np.float32)[None]
    raise MaskBucketError(
        f"bucket {bucket.label} not reached after {spec.max_strokes} strokes "
        f"(achieved {ratio:.4f})",
        ratio,
    )
