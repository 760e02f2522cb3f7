"""Binary PPM (P6) and PGM (P5) with maxval 255."""

from __future__ import annotations

from pathlib import Path
from typing import List, Tuple, Union

import numpy as np

from app.errors import FormatError

_WHITESPACE = b" \t\r\n"


def encode_ppm(rgb: np.ndarray) -> bytes:
    if rgb.ndim != 3 or rgb.shape[2] != 3 or rgb.dtype != np.uint8:
        raise ValueError(f"PPM payload must be (H, W, 3) uint8, got {rgb.shape} {rgb.dtype}")
    height, width = rgb.shape[:2]
    return f"P6\n{width} {height}\n255\n".encode("ascii") + np.ascontiguousarray(rgb).tobytes()


def encode_pgm(gray: np.ndarray) -> bytes:
    if gray.ndim != 2 or gray.dtype != np.uint8:
        raise ValueError(f"PGM payload must be (H, W) uint8, got {gray.shape} {gray.dtype}")
    height, width = gray.shape
    return f"P5\n{width} {height}\n255\n".encode("ascii") + np.ascontiguousarray(gray).tobytes()


def _header(data: bytes, magic: bytes) -> Tuple[int, int, int]:
    """Parse ``magic width height maxval`` and return ``(width, height, payload offset)``."""
    if data[:2] != magic:
        raise FormatError(f"expected magic {magic.decode()}, got {data[:2]!r}", 0)

    fields: List[int] = []
    offset = 2
    while len(fields) < 3:
        if offset >= len(data):
            raise FormatError("header ended early", offset)
        if data[offset] not in _WHITESPACE:
            raise FormatError("expected whitespace between header fields", offset)
        while offset < len(data) and data[offset] in _WHITESPACE:
            offset += 1
        if offset < len(data) and data[offset : offset + 1] == b"#":
            while offset < len(data) and data[offset : offset + 1] != b"\n":
                offset += 1
            continue
        start = offset
        while offset < len(data) and data[offset : offset + 1].isdigit():
            offset += 1
        if start == offset:
            raise FormatError("expected a decimal header field", start)
        fields.append(int(data[start:offset]))

    width, height, maxval = fields
    if width < 1 or height < 1:
        raise FormatError(f"invalid dimensions {width}x{height}", 2)
    if maxval != 255:
        raise FormatError(f"unsupported maxval {maxval}", offset)
    if offset >= len(data) or data[offset] not in _WHITESPACE:
        raise FormatError("expected a single whitespace byte after maxval", offset)
    return width, height, offset + 1


def _payload(data: bytes, start: int, size: int) -> bytes:
    if len(data) - start < size:
        raise FormatError(f"payload needs {size} bytes, found {len(data) - start}", start)
    if len(data) - start > size:
        raise FormatError("trailing bytes after payload", start + size)
    return data[start : start + size]


def decode_ppm(data: bytes) -> np.ndarray:
    width, height, start = _header(data, b"P6")
    payload = _payload(data, start, width * height * 3)
    return np.frombuffer(payload, dtype=np.uint8).reshape(height, width, 3).copy()


def decode_pgm(data: bytes) -> np.ndarray:
    width, height, start = _header(data, b"P5")
    payload = _payload(data, start, width * height)
    return np.frombuffer(payload, dtype=np.uint8).reshape(height, width).copy()


def write_ppm(path: Union[str, Path], rgb: np.ndarray) -> None:
    Path(path).write_bytes(encode_ppm(rgb))


def write_pgm(path: Union[str, Path], gray: np.ndarray) -> None:
    Path(path).write_bytes(encode_pgm(gray))


def read_ppm(path: Union[str, Path]) -> np.ndarray:
    return decode_ppm(Path(path).read_bytes())


def read_pgm(path: Union[str, Path]) -> np.ndarray:
    return decode_pgm(Path(path).read_bytes())
