"""Grayscale raster type and minimal PGM (P5/P2) reading and writing.

Pixels are stored as float64 in [0, 255] so that geometric and
photometric operations keep full precision; quantization to 8 bits
happens only when a file is written.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import SchemaError, ValidationError
from .fileio import atomic_write_bytes

WHITE = 255.0


def _as_pixel_array(pixels) -> np.ndarray:
    arr = np.asarray(pixels, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ValidationError(f"image must be a non-empty 2-D array, got shape {arr.shape}")
    if not np.isfinite(arr).all():
        raise ValidationError("image contains non-finite intensities")
    if arr.min() < 0.0 or arr.max() > 255.0:
        raise ValidationError("image intensities must lie in [0, 255]")
    arr = arr.copy()
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class GrayImage:
    """Immutable grayscale image with intensities in [0, 255]."""

    pixels: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "pixels", _as_pixel_array(self.pixels))

    @property
    def height(self) -> int:
        return int(self.pixels.shape[0])

    @property
    def width(self) -> int:
        return int(self.pixels.shape[1])

    @classmethod
    def blank(cls, height: int, width: int, value: float = WHITE) -> "GrayImage":
        return cls(np.full((height, width), float(value), dtype=np.float64))

    def __eq__(self, other) -> bool:
        if not isinstance(other, GrayImage):
            return NotImplemented
        return self.pixels.shape == other.pixels.shape and bool(
            np.array_equal(self.pixels, other.pixels)
        )

    def __hash__(self):
        return hash((self.pixels.shape, self.pixels.tobytes()))


def to_uint8(img: GrayImage) -> np.ndarray:
    """Quantize to 8 bits with round-half-to-even, clipped to [0, 255]."""
    return np.clip(np.rint(img.pixels), 0, 255).astype(np.uint8)


def write_pgm(img: GrayImage, path: str | Path) -> None:
    """Write a binary (P5) PGM file; byte-deterministic for equal images."""
    raw = to_uint8(img)
    header = f"P5\n{img.width} {img.height}\n255\n".encode("ascii")
    atomic_write_bytes(path, header + raw.tobytes(order="C"))


def _read_pnm_tokens(data: bytes, count: int) -> tuple[list[bytes], int]:
    """Read ``count`` whitespace/comment-delimited header tokens.

    Returns the tokens and the offset one byte past the final delimiter.
    """
    tokens: list[bytes] = []
    i = 0
    n = len(data)
    while len(tokens) < count:
        while i < n and data[i : i + 1].isspace():
            i += 1
        if i < n and data[i : i + 1] == b"#":
            while i < n and data[i : i + 1] != b"\n":
                i += 1
            continue
        start = i
        while i < n and not data[i : i + 1].isspace():
            i += 1
        if start == i:
            raise SchemaError("truncated PGM header")
        tokens.append(data[start:i])
        i += 1  # consume the single delimiter after the token
    return tokens, i


def read_pgm(path: str | Path) -> GrayImage:
    """Read a P5 (binary) or P2 (ASCII) PGM file."""
    data = Path(path).read_bytes()
    if data[:2] not in (b"P5", b"P2"):
        raise SchemaError(f"not a PGM file: {path}")
    magic = data[:2]
    tokens, offset = _read_pnm_tokens(data[2:], 3)
    try:
        width, height, maxval = (int(t) for t in tokens)
    except ValueError as exc:
        raise SchemaError(f"bad PGM header in {path}") from exc
    if width < 1 or height < 1 or not (0 < maxval < 65536):
        raise SchemaError(f"bad PGM dimensions in {path}")
    body = data[2 + offset :]
    if magic == b"P5":
        if maxval > 255:
            raise SchemaError("16-bit PGM is not supported")
        expected = width * height
        if len(body) < expected:
            raise SchemaError(f"truncated PGM payload in {path}")
        arr = np.frombuffer(body[:expected], dtype=np.uint8).reshape(height, width)
    else:
        values = body.split()
        if len(values) < width * height:
            raise SchemaError(f"truncated PGM payload in {path}")
        arr = np.array(values[: width * height], dtype=np.float64).reshape(height, width)
    scale = 255.0 / maxval if maxval != 255 else 1.0
    return GrayImage(arr.astype(np.float64) * scale)
