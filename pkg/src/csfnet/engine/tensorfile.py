"""Raw tensor fixture files.

Layout: magic ``CSFT``, u32 version (1), u8 rank, rank x u32 dims, then the
little-endian float32 payload in row-major order.
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Union

import numpy as np

from .tensor import Tensor

MAGIC = b"CSFT"
VERSION = 1


class TensorFileError(ValueError):
    pass


def dumps(t: Union[Tensor, np.ndarray]) -> bytes:
    arr = t.numpy() if isinstance(t, Tensor) else np.asarray(t, dtype=np.float32)
    if not 1 <= arr.ndim <= 4:
        raise TensorFileError(f"rank must be 1..4, got {arr.ndim}")
    head = MAGIC + struct.pack("<IB", VERSION, arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape)
    return head + np.ascontiguousarray(arr, dtype="<f4").tobytes()


def loads(buf: bytes, source: str = "<bytes>") -> Tensor:
    if buf[:4] != MAGIC:
        raise TensorFileError(f"{source}: bad magic {buf[:4]!r}, expected {MAGIC!r}")
    if len(buf) < 9:
        raise TensorFileError(f"{source}: truncated header")
    version, rank = struct.unpack_from("<IB", buf, 4)
    if version != VERSION:
        raise TensorFileError(f"{source}: unsupported version {version}")
    if not 1 <= rank <= 4:
        raise TensorFileError(f"{source}: invalid rank {rank}")
    off = 9 + 4 * rank
    if len(buf) < off:
        raise TensorFileError(f"{source}: truncated header")
    dims = struct.unpack_from(f"<{rank}I", buf, 9)
    n = int(np.prod(dims))
    if len(buf) != off + 4 * n:
        raise TensorFileError(f"{source}: payload has {len(buf) - off} bytes, expected {4 * n}")
    data = np.frombuffer(buf, dtype="<f4", count=n, offset=off).astype(np.float32)
    return Tensor(data.reshape(dims))


def save_tensor(t: Union[Tensor, np.ndarray], path: Union[str, Path]) -> None:
    Path(path).write_bytes(dumps(t))


def load_tensor(path: Union[str, Path]) -> Tensor:
    return loads(Path(path).read_bytes(), str(path))
