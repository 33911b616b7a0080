"""On-disk formats: the tensor container and PNG image export.

The tensor container is deliberately minimal so any language can read it:

    magic   4 bytes  b"FEAT"
    version u32      little-endian
    dtype   u32      1 = float32, 2 = float64
    rank    u32
    dims    u64[rank]
    payload row-major little-endian values

Every multi-byte field is little-endian regardless of host byte order, and
a write followed by a read reproduces the array bit for bit.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import ArgumentError, FormatError

TENSOR_MAGIC = b"FEAT"
TENSOR_FORMAT_VERSION = 1
MAX_RANK = 8

_DTYPE_CODES = {np.dtype("<f4"): 1, np.dtype("<f8"): 2}
_CODE_DTYPES = {1: np.dtype("<f4"), 2: np.dtype("<f8")}


def write_tensor(path: str | Path, array: np.ndarray) -> None:
    Path(path).write_bytes(encode_tensor(array))


def read_tensor(path: str | Path) -> np.ndarray:
    return decode_tensor(Path(path).read_bytes(), what=str(path))


def encode_tensor(array: np.ndarray) -> bytes:
    """The container as bytes, for embedding in archives."""
    array = np.asarray(array)
    key = array.dtype.newbyteorder("<")
    if key not in _DTYPE_CODES:
        raise ArgumentError(f"only float32/float64 tensors are supported, got dtype {array.dtype}")
    header = TENSOR_MAGIC + struct.pack(
        "<III", TENSOR_FORMAT_VERSION, _DTYPE_CODES[key], array.ndim
    )
    header += struct.pack(f"<{array.ndim}Q", *array.shape)
    return header + np.ascontiguousarray(array, dtype=key).tobytes()


def decode_tensor(blob: bytes, what: str = "tensor") -> np.ndarray:
    if len(blob) < 16:
        raise FormatError(f"{what}: truncated header ({len(blob)} bytes)")
    if blob[:4] != TENSOR_MAGIC:
        raise FormatError(f"{what}: bad magic {blob[:4]!r}")
    version, dtype_code, rank = struct.unpack_from("<III", blob, 4)
    if version != TENSOR_FORMAT_VERSION:
        raise FormatError(f"{what}: unsupported format version {version}")
    if dtype_code not in _CODE_DTYPES:
        raise FormatError(f"{what}: unknown dtype code {dtype_code}")
    if rank > MAX_RANK:
        raise FormatError(f"{what}: rank {rank} exceeds limit {MAX_RANK}")
    dims_end = 16 + 8 * rank
    if len(blob) < dims_end:
        raise FormatError(f"{what}: truncated dims")
    dims = struct.unpack_from(f"<{rank}Q", blob, 16) if rank else ()
    dtype = _CODE_DTYPES[dtype_code]
    count = 1
    for d in dims:
        count *= d
    expected = dims_end + count * dtype.itemsize
    if len(blob) != expected:
        raise FormatError(
            f"{what}: payload length {len(blob) - dims_end} does not match "
            f"dims {dims} ({count * dtype.itemsize} bytes expected)"
        )
    data = np.frombuffer(blob, dtype=dtype, count=count, offset=dims_end)
    return data.reshape(dims).astype(dtype.newbyteorder("="), copy=True)


def image_to_bytes(pixels: np.ndarray) -> np.ndarray:
    """Map [-1, 1] float pixels to uint8 via round(255*(v+1)/2), clamped."""
    pixels = np.asarray(pixels, dtype=np.float64)
    return np.clip(np.round(255.0 * (pixels + 1.0) / 2.0), 0, 255).astype(np.uint8)


def mask_to_bytes(mask: np.ndarray) -> np.ndarray:
    """Map [0, 1] mask values to uint8 via round(255*m)."""
    mask = np.asarray(mask, dtype=np.float64)
    return np.clip(np.round(255.0 * mask), 0, 255).astype(np.uint8)


def write_image_png(path: str | Path, pixels: np.ndarray) -> None:
    pixels = np.asarray(pixels)
    if pixels.ndim != 3 or pixels.shape[0] != 3:
        raise ArgumentError(f"image must be (3, H, W), got {pixels.shape}")
    rgb = np.transpose(image_to_bytes(pixels), (1, 2, 0))
    Image.fromarray(rgb, mode="RGB").save(Path(path), format="PNG")


def write_mask_png(path: str | Path, mask: np.ndarray) -> None:
    mask = np.asarray(mask)
    if mask.ndim == 3 and mask.shape[0] == 1:
        mask = mask[0]
    if mask.ndim != 2:
        raise ArgumentError(f"mask must be (H, W) or (1, H, W), got {mask.shape}")
    Image.fromarray(mask_to_bytes(mask), mode="L").save(Path(path), format="PNG")
