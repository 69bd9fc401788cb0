"""Reading and writing 8-bit RGB images and binary hole masks."""

from __future__ import annotations

import logging
import pathlib

import numpy as np
from PIL import Image, UnidentifiedImageError

from misf_inpaint.lib.errors import ImageFormatError
from misf_inpaint.lib.tensor import Tensor

FORMATS = {".png": "PNG", ".ppm": "PPM"}
COLOUR_MODES = ("RGB", "RGBA", "L", "P")


def _format_for(path: pathlib.Path) -> str:
    try:
        return FORMATS[path.suffix.lower()]
    except KeyError:
        raise ImageFormatError(f"Unsupported image type: {path.suffix or path.name}")


def _open(path: pathlib.Path) -> Image.Image:
    expected = _format_for(path)
    try:
        img = Image.open(path)
        img.load()
    except UnidentifiedImageError as err:
        raise ImageFormatError(f"{path}: not a readable image") from err
    except (OSError, SyntaxError) as err:
        # Pillow reports truncated payloads as OSError
        if isinstance(err, FileNotFoundError):
            raise
        raise ImageFormatError(f"{path}: {err}") from err
    if img.format != expected:
        raise ImageFormatError(f"{path}: holds {img.format} data, expected {expected}")
    return img


def load_image(path: str | pathlib.Path, dtype: np.dtype | type = np.float32) -> np.ndarray:
    """An image as a [3, H, W] array scaled to [0, 1]."""
    path = pathlib.Path(path)
    img = _open(path)
    if img.mode not in COLOUR_MODES:
        raise ImageFormatError(f"{path}: unsupported pixel mode {img.mode}")
    pixels = np.asarray(img.convert("RGB"), dtype=np.uint8)
    logging.debug("loaded %s (%dx%d)", path, img.width, img.height)
    return (pixels.transpose(2, 0, 1) / 255.0).astype(dtype)


def to_bytes(image: np.ndarray | Tensor) -> np.ndarray:
    """Quantise [0, 1] values to 8 bits, rounding halves away from zero."""
    data = image.numpy() if isinstance(image, Tensor) else np.asarray(image)
    if data.ndim == 4:
        if data.shape[0] != 1:
            raise ImageFormatError(f"can only save a single image, got batch {data.shape[0]}")
        data = data[0]
    if data.ndim != 3 or data.shape[0] != 3:
        raise ImageFormatError(f"expected a [3, H, W] image, got {data.shape}")
    scaled = np.clip(data, 0.0, 1.0) * 255.0
    return np.floor(scaled + 0.5).astype(np.uint8).transpose(1, 2, 0)


def save_image(image: np.ndarray | Tensor, path: str | pathlib.Path) -> None:
    path = pathlib.Path(path)
    fmt = _format_for(path)
    Image.fromarray(to_bytes(image)).save(path, format=fmt)


def load_mask(path: str | pathlib.Path, dtype: np.dtype | type = np.float32) -> np.ndarray:
    """A [1, H, W] hole mask: any nonzero pixel is a hole."""
    path = pathlib.Path(path)
    img = _open(path)
    pixels = np.asarray(img.convert("L"), dtype=np.uint8)
    return (pixels > 0).astype(dtype)[None]


def save_mask(mask: np.ndarray, path: str | pathlib.Path) -> None:
    path = pathlib.Path(path)
    plane = np.asarray(mask)
    if plane.ndim == 3:
        plane = plane[0]
    Image.fromarray((plane > 0).astype(np.uint8) * 255).save(
        path, format=_format_for(path)
    )
