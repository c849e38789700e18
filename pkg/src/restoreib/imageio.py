"""Binary Netpbm I/O: PGM (P5) and PPM (P6), 8- or 16-bit.

Images are float arrays in [0, 1] shaped (C, H, W) with C = 1 or 3.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

__all__ = ["NetpbmError", "save_image", "load_image", "encode_netpbm", "decode_netpbm"]


class NetpbmError(ValueError):
    """Malformed Netpbm data; ``position`` is the byte offset of the problem."""

    def __init__(self, message: str, position: int):
        super().__init__(f"{message} (at byte {position})")
        self.position = position


def encode_netpbm(img: np.ndarray, bits: int = 8) -> bytes:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 2:
        img = img[None]
    c, h, w = img.shape
    if c not in (1, 3):
        raise ValueError(f"need 1 or 3 channels, got {c}")
    if bits not in (8, 16):
        raise ValueError(f"bits must be 8 or 16, got {bits}")
    maxval = (1 << bits) - 1
    q = np.round(np.clip(img, 0.0, 1.0) * maxval).astype(np.int64)
    hwc = q.transpose(1, 2, 0)
    body = hwc.astype(">u2" if bits == 16 else np.uint8).tobytes()
    magic = b"P5" if c == 1 else b"P6"
    return magic + f"\n{w} {h}\n{maxval}\n".encode() + body


def _tokens(data: bytes, count: int, pos: int):
    """Read ``count`` whitespace-separated header integers starting at ``pos``."""
    out = []
    n = len(data)
    while len(out) < count:
        while pos < n and (data[pos : pos + 1].isspace() or data[pos : pos + 1] == b"#"):
            if data[pos : pos + 1] == b"#":
                while pos < n and data[pos : pos + 1] not in (b"\n", b"\r"):
                    pos += 1
            else:
                pos += 1
        start = pos
        while pos < n and data[pos : pos + 1].isdigit():
            pos += 1
        if start == pos:
            raise NetpbmError("expected an integer in header", start)
        out.append(int(data[start:pos]))
    if pos >= n or not data[pos : pos + 1].isspace():
        raise NetpbmError("header must end with a single whitespace byte", pos)
    return out, pos + 1


def decode_netpbm(data: bytes) -> tuple[np.ndarray, int]:
    """Decode P5/P6 bytes; returns (image in [0,1] as (C,H,W), bit depth)."""
    magic = data[:2]
    if magic not in (b"P5", b"P6"):
        raise NetpbmError(f"bad magic number {magic!r}, expected b'P5' or b'P6'", 0)
    (w, h, maxval), pos = _tokens(data, 3, 2)
    if w < 1 or h < 1:
        raise NetpbmError(f"invalid dimensions {w}x{h}", 2)
    if not 0 < maxval < 65536:
        raise NetpbmError(f"invalid maxval {maxval}", pos - 1)
    c = 1 if magic == b"P5" else 3
    dt = np.dtype(">u2") if maxval > 255 else np.dtype(np.uint8)
    need = w * h * c * dt.itemsize
    if len(data) - pos < need:
        raise NetpbmError(f"truncated raster: need {need} bytes, have {len(data) - pos}", pos)
    raster = np.frombuffer(data, dtype=dt, count=w * h * c, offset=pos).reshape(h, w, c)
    img = raster.transpose(2, 0, 1).astype(np.float64) / maxval
    return img, 16 if maxval > 255 else 8


def save_image(path, img: np.ndarray, bits: int = 8) -> None:
    Path(path).write_bytes(encode_netpbm(img, bits))


def load_image(path) -> np.ndarray:
    return decode_netpbm(Path(path).read_bytes())[0]
