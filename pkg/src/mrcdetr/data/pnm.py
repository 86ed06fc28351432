"""Binary PGM (P5) / PPM (P6) images with 8-bit samples."""
from __future__ import annotations

from pathlib import Path

import numpy as np


def write_pnm(path, img: np.ndarray) -> None:
    img = np.asarray(img)
    if img.dtype != np.uint8:
        raise ValueError(f"expected uint8 pixels, got {img.dtype}")
    if img.ndim == 2:
        magic = b"P5"
    elif img.ndim == 3 and img.shape[2] == 3:
        magic = b"P6"
    else:
        raise ValueError(f"expected HxW or HxWx3 image, got {img.shape}")
    h, w = img.shape[:2]
    with open(path, "wb") as fh:
        fh.write(magic + b"\n%d %d\n255\n" % (w, h))
        fh.write(np.ascontiguousarray(img).tobytes())


def _tokens(data: bytes, count: int):
    """First ``count`` header tokens and the offset just past the last one."""
    out, i = [], 0
    while len(out) < count:
        while i < len(data) and data[i:i + 1].isspace():
            i += 1
        if data[i:i + 1] == b"#":
            while i < len(data) and data[i:i + 1] not in (b"\n", b"\r"):
                i += 1
            continue
        j = i
        while j < len(data) and not data[j:j + 1].isspace():
            j += 1
        if j == i:
            raise ValueError("truncated PNM header")
        out.append(data[i:j])
        i = j
    return out, i + 1


def read_pnm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    (magic, w, h, maxval), offset = _tokens(data, 4)
    if magic not in (b"P5", b"P6") or int(maxval) != 255:
        raise ValueError(f"{path}: unsupported PNM variant {magic!r} maxval {maxval!r}")
    w, h = int(w), int(h)
    channels = 3 if magic == b"P6" else 1
    n = w * h * channels
    pix = np.frombuffer(data, dtype=np.uint8, count=n, offset=offset)
    return pix.reshape((h, w, 3) if channels == 3 else (h, w)).copy()
