"""Minimal 8-bit grayscale PNG writer for quick looks at images."""

from __future__ import annotations

import struct
import zlib
from pathlib import Path

import numpy as np

__all__ = ["to_uint8", "write_png"]


def to_uint8(img) -> np.ndarray:
    """Linear map of ``[0, max]`` onto ``[0, 255]``; negatives clip to 0."""
    a = np.asarray(img, dtype=np.float64)
    top = a.max() if a.size else 0.0
    if not top > 0:
        return np.zeros(a.shape, dtype=np.uint8)
    return np.round(np.clip(a / top, 0.0, 1.0) * 255).astype(np.uint8)


def _chunk(tag: bytes, data: bytes) -> bytes:
    return struct.pack(">I", len(data)) + tag + data + struct.pack(">I", zlib.crc32(tag + data))


def write_png(path, img) -> None:
    px = to_uint8(img)
    if px.ndim != 2:
        raise ValueError("write_png expects a 2-D image")
    h, w = px.shape
    raw = b"".join(b"\x00" + px[i].tobytes() for i in range(h))
    out = b"\x89PNG\r\n\x1a\n"
    out += _chunk(b"IHDR", struct.pack(">IIBBBBB", w, h, 8, 0, 0, 0, 0))
    out += _chunk(b"IDAT", zlib.compress(raw, 9))
    out += _chunk(b"IEND", b"")
    Path(path).write_bytes(out)
