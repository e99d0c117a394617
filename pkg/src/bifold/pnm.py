"""Binary PGM (P5) / PPM (P6) reading and writing, 8-bit."""

from __future__ import annotations

import os
from pathlib import Path

import numpy as np


class ImageFormatError(ValueError):
    pass


def to_bytes(grid: np.ndarray) -> bytes:
    """Encode a [0,1] grid: (H, W) -> P5, (H, W, 3) -> P6."""
    grid = np.asarray(grid, dtype=np.float64)
    if grid.ndim == 2:
        magic = b"P5"
    elif grid.ndim == 3 and grid.shape[2] == 3:
        magic = b"P6"
    else:
        raise ImageFormatError(f"cannot encode array of shape {grid.shape} as PGM/PPM")
    h, w = grid.shape[:2]
    payload = np.round(np.clip(grid, 0.0, 1.0) * 255.0).astype(np.uint8)
    return magic + f"\n{w} {h}\n255\n".encode("ascii") + payload.tobytes()


def write_image(grid: np.ndarray, path: str | os.PathLike) -> Path:
    path = Path(path)
    path.write_bytes(to_bytes(grid))
    return path


def _tokens(raw: bytes, count: int) -> tuple[list[bytes], int]:
    out, pos = [], 0
    while len(out) < count:
        while pos < len(raw) and raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            while pos < len(raw) and raw[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ImageFormatError("unexpected end of header")
        out.append(raw[start:pos])
    return out, pos + 1  # one whitespace byte ends the header


def from_bytes(raw: bytes, name: str = "<bytes>") -> np.ndarray:
    try:
        (magic, w, h, maxval), pos = _tokens(raw, 4)
        w, h, maxval = int(w), int(h), int(maxval)
    except (ImageFormatError, ValueError) as exc:
        raise ImageFormatError(f"{name}: malformed PNM header ({exc})") from exc
    if magic not in (b"P5", b"P6"):
        raise ImageFormatError(f"{name}: unsupported magic {magic!r}")
    if maxval != 255:
        raise ImageFormatError(f"{name}: only maxval 255 is supported, got {maxval}")
    ch = 1 if magic == b"P5" else 3
    need = w * h * ch
    body = raw[pos:pos + need]
    if len(body) != need:
        raise ImageFormatError(f"{name}: truncated pixel data ({len(body)} of {need} bytes)")
    arr = np.frombuffer(body, dtype=np.uint8).astype(np.float64) / 255.0
    return arr.reshape((h, w) if ch == 1 else (h, w, 3))


def read_image(path: str | os.PathLike) -> np.ndarray:
    path = Path(path)
    return from_bytes(path.read_bytes(), str(path))
