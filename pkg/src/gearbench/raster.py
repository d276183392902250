"""8-bit RGB raster images with bit-exact PPM serialization.

PPM (binary P6) is the golden-test format because it is trivial to emit
byte-identically; PNG export exists only for human viewing.
"""

from __future__ import annotations

import hashlib
import io
from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class RasterImage:
    """Row-major RGB image, 8 bits per channel."""

    width_px: int
    height_px: int
    pixels: np.ndarray = field(repr=False)  # shape (height, width, 3), dtype uint8

    def __post_init__(self) -> None:
        if self.pixels.shape != (self.height_px, self.width_px, 3):
            raise ValueError(
                f"pixel buffer shape {self.pixels.shape} does not match "
                f"{self.height_px}x{self.width_px}x3"
            )
        if self.pixels.dtype != np.uint8:
            raise ValueError("pixel buffer must be uint8")
        self.pixels.setflags(write=False)

    @classmethod
    def filled(cls, width_px: int, height_px: int, color: tuple[int, int, int]) -> RasterImage:
        buf = np.empty((height_px, width_px, 3), dtype=np.uint8)
        buf[:, :] = color
        return cls(width_px, height_px, buf)

    def tobytes(self) -> bytes:
        return self.pixels.tobytes()

    def content_hash(self) -> str:
        digest = hashlib.sha256()
        digest.update(f"{self.width_px}x{self.height_px}:".encode("ascii"))
        digest.update(self.tobytes())
        return digest.hexdigest()

    def get_pixel(self, px: int, py: int) -> tuple[int, int, int]:
        r, g, b = self.pixels[py, px]
        return int(r), int(g), int(b)

    def mutable_copy(self) -> np.ndarray:
        return self.pixels.copy()


def to_ppm(image: RasterImage) -> bytes:
    """Encode as binary PPM (P6, maxval 255)."""
    header = f"P6\n{image.width_px} {image.height_px}\n255\n".encode("ascii")
    return header + image.tobytes()


def from_ppm(data: bytes) -> RasterImage:
    """Decode a binary PPM produced by :func:`to_ppm`."""
    if not data.startswith(b"P6"):
        raise ValueError("not a binary PPM (P6) file")
    fields: list[bytes] = []
    pos = 2
    while len(fields) < 3:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":  # comment line
            while pos < len(data) and data[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        fields.append(data[start:pos])
    pos += 1  # single whitespace after maxval
    width, height, maxval = (int(f) for f in fields)
    if maxval != 255:
        raise ValueError(f"unsupported PPM maxval {maxval}")
    raw = data[pos : pos + width * height * 3]
    if len(raw) != width * height * 3:
        raise ValueError("truncated PPM pixel data")
    buf = np.frombuffer(raw, dtype=np.uint8).reshape(height, width, 3).copy()
    return RasterImage(width, height, buf)


def to_png(image: RasterImage) -> bytes:
    """Encode as PNG via Pillow (for viewing and HTTP payloads)."""
    from PIL import Image

    pil = Image.fromarray(image.pixels, mode="RGB")
    out = io.BytesIO()
    pil.save(out, format="PNG")
    return out.getvalue()


def write_ppm(path, image: RasterImage) -> None:
    with open(path, "wb") as fh:
        fh.write(to_ppm(image))
