"""Raw tensor files ("MTF1").

Layout, all little-endian: the magic bytes ``MTF1``, a u8 precision code, a u32
rank, ``rank`` u32 dims, then the elements in row-major order.
"""

import pathlib
import struct

import numpy as np

from misf_inpaint.lib.errors import ContractError

MAGIC = b"MTF1"

PRECISION_CODES: dict[int, np.dtype] = {
    1: np.dtype("<f4"),
    2: np.dtype("<f8"),
}


def _code_for(dtype: np.dtype) -> int:
    for code, known in PRECISION_CODES.items():
        if np.dtype(dtype) == known.newbyteorder("="):
            return code
    raise ContractError(f"MTF1 cannot store dtype {dtype}")


def encode(array: np.ndarray) -> bytes:
    """Serialise `array` to MTF1 bytes."""
    code = _code_for(array.dtype)
    header = MAGIC + struct.pack("<BI", code, array.ndim)
    header += struct.pack(f"<{array.ndim}I", *array.shape)
    body = np.ascontiguousarray(array, dtype=PRECISION_CODES[code]).tobytes()
    return header + body


def decode(blob: bytes) -> np.ndarray:
    """Parse MTF1 bytes, rejecting bad magic and truncated payloads."""
    if blob[:4] != MAGIC:
        raise ContractError("not an MTF1 tensor (bad magic)")
    if len(blob) < 9:
        raise ContractError("truncated MTF1 header")
    code, rank = struct.unpack_from("<BI", blob, 4)
    if code not in PRECISION_CODES:
        raise ContractError(f"unknown MTF1 precision code {code}")
    offset = 9 + 4 * rank
    if len(blob) < offset:
        raise ContractError("truncated MTF1 header")
    dims = struct.unpack_from(f"<{rank}I", blob, 9)
    dtype = PRECISION_CODES[code]
    expected = int(np.prod(dims, dtype=np.int64)) * dtype.itemsize
    if len(blob) - offset != expected:
        raise ContractError(
            f"MTF1 payload holds {len(blob) - offset} bytes, expected {expected}"
        )
    data = np.frombuffer(blob, dtype=dtype, offset=offset).reshape(dims)
    return data.astype(dtype.newbyteorder("="))


def save(path: str | pathlib.Path, array: np.ndarray) -> None:
    pathlib.Path(path).write_bytes(encode(array))


def load(path: str | pathlib.Path) -> np.ndarray:
    return decode(pathlib.Path(path).read_bytes())
