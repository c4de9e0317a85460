"""Binary container for named float64 arrays (model checkpoints).

Layout, all little-endian: magic ``MMCK``, u32 version, u32 array count;
then per array: u16 name length, name bytes (utf-8), u8 ndim, u32 per
dimension, then the f64 payload row-major.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

CONTAINER_MAGIC = b"MMCK"
CONTAINER_VERSION = 1


class ContainerError(ValueError):
    """Malformed checkpoint container."""


def write_arrays(path, arrays: dict[str, np.ndarray]) -> None:
    """Write named arrays in insertion order; values stored as f64."""
    chunks = [CONTAINER_MAGIC, struct.pack("<II", CONTAINER_VERSION, len(arrays))]
    for name, value in arrays.items():
        arr = np.atleast_1d(np.asarray(value, dtype=np.float64))
        encoded = name.encode("utf-8")
        if not 1 <= len(encoded) <= 0xFFFF:
            raise ContainerError(f"array name length out of range: {name!r}")
        if arr.ndim > 255:
            raise ContainerError(f"array {name!r} has too many dimensions")
        chunks.append(struct.pack("<H", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<B", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(arr.astype("<f8", copy=False).tobytes())
    Path(path).write_bytes(b"".join(chunks))


def read_arrays(path) -> dict[str, np.ndarray]:
    data = Path(path).read_bytes()
    if len(data) < 12:
        raise ContainerError(f"{path}: truncated header")
    if data[:4] != CONTAINER_MAGIC:
        raise ContainerError(f"{path}: bad magic {data[:4]!r}")
    version, count = struct.unpack_from("<II", data, 4)
    if version != CONTAINER_VERSION:
        raise ContainerError(f"{path}: unsupported version {version}")
    offset = 12
    arrays: dict[str, np.ndarray] = {}
    for _ in range(count):
        try:
            (name_len,) = struct.unpack_from("<H", data, offset)
            offset += 2
            name = data[offset : offset + name_len].decode("utf-8")
            offset += name_len
            (ndim,) = struct.unpack_from("<B", data, offset)
            offset += 1
            shape = struct.unpack_from(f"<{ndim}I", data, offset)
            offset += 4 * ndim
        except struct.error as exc:
            raise ContainerError(f"{path}: truncated array header") from exc
        size = int(np.prod(shape, dtype=np.int64)) if ndim else 1
        end = offset + 8 * size
        if end > len(data):
            raise ContainerError(f"{path}: truncated payload for array {name!r}")
        arrays[name] = np.frombuffer(data[offset:end], dtype="<f8").reshape(shape).copy()
        offset = end
    if offset != len(data):
        raise ContainerError(f"{path}: {len(data) - offset} trailing bytes")
    return arrays
