"""Binary checkpoints of a parameter store.

Layout: magic ``CSFC``, u32 version, u32 tensor count, then for every tensor
in name order: u16 name length, UTF-8 name, u8 rank, rank x u32 dims and the
little-endian float32 payload. Parameters and BN running statistics are both
stored, so a loaded model reproduces logits bit for bit.
"""

from __future__ import annotations

import os
import struct
from typing import Union

import numpy as np

from .nn import ParameterStore

MAGIC = b"CSFC"
VERSION = 1

PathLike = Union[str, os.PathLike]


class CheckpointError(ValueError):
    """Base class of checkpoint failures."""


class BadMagicError(CheckpointError):
    pass


class VersionError(CheckpointError):
    pass


class TruncatedError(CheckpointError):
    pass


class UnknownTensorError(CheckpointError):
    pass


class MissingTensorError(CheckpointError):
    pass


class ShapeMismatchError(CheckpointError):
    pass


def dumps(tensors: dict[str, np.ndarray]) -> bytes:
    parts = [MAGIC, struct.pack("<II", VERSION, len(tensors))]
    for name in sorted(tensors):
        arr = np.ascontiguousarray(tensors[name], dtype="<f4")
        raw = name.encode("utf-8")
        if len(raw) > 0xFFFF:
            raise CheckpointError(f"tensor name too long: {name[:40]}...")
        parts.append(struct.pack("<H", len(raw)) + raw)
        parts.append(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.tobytes())
    return b"".join(parts)


class _Reader:
    def __init__(self, buf: bytes, source: str):
        self.buf, self.pos, self.source = buf, 0, source

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.buf):
            raise TruncatedError(f"{self.source}: truncated while reading {what}")
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def loads(buf: bytes, source: str = "<bytes>") -> dict[str, np.ndarray]:
    r = _Reader(buf, source)
    if len(buf) < 4 or buf[:4] != MAGIC:
        raise BadMagicError(f"{source}: bad magic {bytes(buf[:4])!r}, expected {MAGIC!r}")
    r.pos = 4
    version, count = r.unpack("<II", "header")
    if version != VERSION:
        raise VersionError(f"{source}: unsupported version {version}, expected {VERSION}")
    out: dict[str, np.ndarray] = {}
    for i in range(count):
        (n,) = r.unpack("<H", f"name length of tensor {i}")
        name = r.take(n, f"name of tensor {i}").decode("utf-8")
        (rank,) = r.unpack("<B", f"rank of {name}")
        dims = r.unpack(f"<{rank}I", f"dims of {name}")
        size = int(np.prod(dims)) if rank else 1
        payload = r.take(4 * size, f"payload of {name}")
        out[name] = np.frombuffer(payload, dtype="<f4").astype(np.float32).reshape(dims)
    if r.pos != len(buf):
        raise CheckpointError(f"{source}: {len(buf) - r.pos} trailing bytes after {count} tensors")
    return out


def save_checkpoint(store: ParameterStore, path: PathLike) -> None:
    with open(path, "wb") as f:
        f.write(dumps(store.state()))


def load_checkpoint(path: PathLike) -> dict[str, np.ndarray]:
    try:
        with open(path, "rb") as f:
            buf = f.read()
    except OSError as e:
        raise CheckpointError(f"{path}: cannot read checkpoint ({e.strerror})") from e
    return loads(buf, str(path))


def load_into(store: ParameterStore, tensors: dict[str, np.ndarray]) -> None:
    """Copy checkpoint tensors into a store, validating names and shapes first.

    Nothing is written unless every tensor matches; the error names the first
    offending tensor in name order.
    """
    expected = store.state()
    for name in sorted(set(expected) | set(tensors)):
        if name not in expected:
            raise UnknownTensorError(f"checkpoint tensor {name!r} does not exist in this model")
        if name not in tensors:
            raise MissingTensorError(f"checkpoint lacks tensor {name!r}")
        if tensors[name].shape != expected[name].shape:
            raise ShapeMismatchError(
                f"tensor {name!r} has shape {tensors[name].shape} in the checkpoint "
                f"but {expected[name].shape} in the model"
            )
    for name, dst in expected.items():
        dst[...] = tensors[name]


def restore(store: ParameterStore, path: PathLike) -> None:
    load_into(store, load_checkpoint(path))
