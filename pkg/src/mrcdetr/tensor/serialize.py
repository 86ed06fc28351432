"""Little-endian binary tensor framing (``MRCT``).

Layout: magic ``b"MRCT"``, u32 version, u32 dtype tag (0=f32, 1=f64),
4 x u64 shape, raw C-order buffer. Tensors of rank below 4 are padded with
trailing unit extents; readers reshape to the shape they expect.
"""
from __future__ import annotations

import io
import struct

import numpy as np

from ..errors import ContractError

MAGIC = b"MRCT"
VERSION = 1
_TAGS = {np.dtype("<f4"): 0, np.dtype("<f8"): 1}
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_HEADER = struct.Struct("<4sII4Q")


def write_tensor(fh, arr) -> None:
    arr = np.asarray(arr)
    dt = arr.dtype.newbyteorder("<")
    if dt not in _TAGS:
        raise ContractError(f"unsupported dtype {arr.dtype} for MRCT")
    if arr.ndim > 4:
        raise ContractError(f"MRCT holds at most 4 axes, got shape {arr.shape}")
    shape = tuple(arr.shape) + (1,) * (4 - arr.ndim)
    fh.write(_HEADER.pack(MAGIC, VERSION, _TAGS[dt], *shape))
    fh.write(np.ascontiguousarray(arr, dtype=dt).tobytes())


def read_tensor(fh) -> np.ndarray:
    head = fh.read(_HEADER.size)
    if len(head) != _HEADER.size:
        raise ContractError("truncated MRCT header")
    magic, version, tag, *shape = _HEADER.unpack(head)
    if magic != MAGIC:
        raise ContractError(f"bad MRCT magic {magic!r}")
    if version != VERSION:
        raise ContractError(f"unsupported MRCT version {version}")
    if tag not in _DTYPES:
        raise ContractError(f"unknown MRCT dtype tag {tag}")
    dt = _DTYPES[tag]
    count = int(np.prod(shape))
    raw = fh.read(count * dt.itemsize)
    if len(raw) != count * dt.itemsize:
        raise ContractError("truncated MRCT payload")
    return np.frombuffer(raw, dtype=dt).reshape(shape).astype(dt.newbyteorder("="))


def dumps(arr) -> bytes:
    buf = io.BytesIO()
    write_tensor(buf, arr)
    return buf.getvalue()


def loads(data: bytes) -> np.ndarray:
    return read_tensor(io.BytesIO(data))
