"""Checkpoint container (``MRCD``) framing named tensors in the MRCT format.

Layout, all little-endian: magic ``b"MRCD"``, u32 version, u64 length +
UTF-8 JSON snapshot, u64 count of (u32 name length, name bytes, MRCT tensor)
entries, then a u8 flag; when set, the optimizer section follows as u64 step
count and one more count-prefixed entry list holding ``m/<name>`` and
``v/<name>`` moments.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ContractError
from .tensor.serialize import read_tensor, write_tensor

MAGIC = b"MRCD"
VERSION = 1


@dataclass
class Checkpoint:
    snapshot: dict
    tensors: dict[str, np.ndarray]
    optimizer: dict | None = field(default=None)


def _write_entries(fh, entries: dict) -> None:
    fh.write(struct.pack("<Q", len(entries)))
    for name, arr in entries.items():
        raw = name.encode("utf-8")
        fh.write(struct.pack("<I", len(raw)))
        fh.write(raw)
        write_tensor(fh, arr)


def _read_entries(fh) -> dict:
    (count,) = struct.unpack("<Q", _read(fh, 8))
    out = {}
    for _ in range(count):
        (length,) = struct.unpack("<I", _read(fh, 4))
        name = _read(fh, length).decode("utf-8")
        out[name] = read_tensor(fh)
    return out


def _read(fh, n):
    data = fh.read(n)
    if len(data) != n:
        raise ContractError("truncated checkpoint")
    return data


def save(path, snapshot: dict, tensors: dict, optimizer: dict | None = None) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        blob = json.dumps(snapshot, sort_keys=True).encode("utf-8")
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        _write_entries(fh, tensors)
        if optimizer is None:
            fh.write(b"\x00")
        else:
            fh.write(b"\x01")
            fh.write(struct.pack("<Q", int(optimizer["step"])))
            moments = {f"m/{k}": v for k, v in optimizer["m"].items()}
            moments.update({f"v/{k}": v for k, v in optimizer["v"].items()})
            _write_entries(fh, moments)
    tmp.replace(path)


def load(path) -> Checkpoint:
    with open(path, "rb") as fh:
        if _read(fh, 4) != MAGIC:
            raise ContractError(f"{path}: not an MRCD checkpoint")
        (version,) = struct.unpack("<I", _read(fh, 4))
        if version != VERSION:
            raise ContractError(f"{path}: unsupported checkpoint version {version}")
        (length,) = struct.unpack("<Q", _read(fh, 8))
        snapshot = json.loads(_read(fh, length).decode("utf-8"))
        tensors = _read_entries(fh)
        flag = fh.read(1)
        optimizer = None
        if flag == b"\x01":
            (step,) = struct.unpack("<Q", _read(fh, 8))
            entries = _read_entries(fh)
            optimizer = {
                "step": step,
                "m": {k[2:]: v for k, v in entries.items() if k.startswith("m/")},
                "v": {k[2:]: v for k, v in entries.items() if k.startswith("v/")},
            }
    return Checkpoint(snapshot, tensors, optimizer)
