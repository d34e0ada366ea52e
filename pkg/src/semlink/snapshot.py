"""Binary tensor snapshots and named-tensor checkpoint files.

Single-tensor block layout (little-endian throughout):

    magic   4 bytes  b"SLNK"
    dtype   u8       0 = float64, 1 = complex128
    rank    u8
    dims    rank * u64
    data    raw little-endian scalars, row-major

A checkpoint file is a sequence of (name, block) records preceded by a
count, so model parameters round-trip byte-identically.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .ctensor import ComplexTensor
from .errors import ParseError
from .tensor import Tensor

_MAGIC = b"SLNK"
_CKPT_MAGIC = b"SLNKCKPT"
_DTYPE_REAL = 0
_DTYPE_COMPLEX = 1


def tensor_to_bytes(t) -> bytes:
    if isinstance(t, Tensor):
        tag, arr = _DTYPE_REAL, np.ascontiguousarray(t.data, dtype="<f8")
    elif isinstance(t, ComplexTensor):
        tag, arr = _DTYPE_COMPLEX, np.ascontiguousarray(t.data, dtype="<c16")
    else:
        raise TypeError(f"cannot snapshot {type(t).__name__}")
    head = _MAGIC + struct.pack("<BB", tag, arr.ndim)
    dims = struct.pack(f"<{arr.ndim}Q", *arr.shape) if arr.ndim else b""
    return head + dims + arr.tobytes()


def tensor_from_bytes(buf: bytes, offset: int = 0):
    """Decode one snapshot block; returns (tensor, next_offset)."""
    if buf[offset : offset + 4] != _MAGIC:
        raise ParseError("bad tensor snapshot magic")
    tag, rank = struct.unpack_from("<BB", buf, offset + 4)
    pos = offset + 6
    dims = struct.unpack_from(f"<{rank}Q", buf, pos) if rank else ()
    pos += 8 * rank
    count = int(np.prod(dims)) if dims else 1
    if tag == _DTYPE_REAL:
        nbytes = 8 * count
        arr = np.frombuffer(buf, dtype="<f8", count=count, offset=pos).reshape(dims)
        return Tensor(arr.copy()), pos + nbytes
    if tag == _DTYPE_COMPLEX:
        nbytes = 16 * count
        arr = np.frombuffer(buf, dtype="<c16", count=count, offset=pos).reshape(dims)
        return ComplexTensor(arr.copy()), pos + nbytes
    raise ParseError(f"unknown snapshot dtype tag {tag}")


def save_tensors(path, tensors: dict) -> None:
    """Write named tensors to one checkpoint file (names sorted for
    byte-stable output)."""
    parts = [_CKPT_MAGIC, struct.pack("<I", len(tensors))]
    for name in sorted(tensors):
        raw = name.encode("utf-8")
        parts.append(struct.pack("<H", len(raw)))
        parts.append(raw)
        parts.append(tensor_to_bytes(tensors[name]))
    Path(path).write_bytes(b"".join(parts))


def load_tensors(path) -> dict:
    buf = Path(path).read_bytes()
    if buf[:8] != _CKPT_MAGIC:
        raise ParseError(f"{path}: not a checkpoint file")
    (count,) = struct.unpack_from("<I", buf, 8)
    pos = 12
    out = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", buf, pos)
        pos += 2
        name = buf[pos : pos + nlen].decode("utf-8")
        pos += nlen
        tensor, pos = tensor_from_bytes(buf, pos)
        out[name] = tensor
    return out
