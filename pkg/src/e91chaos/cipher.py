"""Grayscale images and the pixelwise XOR cipher."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .chaos import KeyStream, derive_params, keystream

__all__ = [
    "EmptyKeyStream",
    "GrayImage",
    "MalformedInput",
    "decrypt",
    "encrypt",
    "to_grayscale",
    "xor_image",
]


class MalformedInput(ValueError):
    pass


class EmptyKeyStream(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class GrayImage:
    """8-bit raster; ``pixels`` has shape (height, width), row-major."""

    width: int
    height: int
    pixels: np.ndarray

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise MalformedInput("image dimensions must be positive")
        px = np.asarray(self.pixels)
        if px.size != self.width * self.height:
            raise MalformedInput(f"expected {self.width * self.height} pixels, got {px.size}")
        if px.dtype != np.uint8:
            if px.size and (px.min() < 0 or px.max() > 255):
                raise MalformedInput("pixel values must lie in [0, 255]")
            px = px.astype(np.uint8)
        px = px.reshape(self.height, self.width).copy()
        px.setflags(write=False)
        object.__setattr__(self, "pixels", px)

    @classmethod
    def from_array(cls, arr) -> "GrayImage":
        arr = np.asarray(arr)
        if arr.ndim != 2:
            raise MalformedInput("grayscale arrays must be 2-D")
        return cls(arr.shape[1], arr.shape[0], arr)

    @property
    def size(self) -> int:
        return self.width * self.height

    def __eq__(self, other):
        if not isinstance(other, GrayImage):
            return NotImplemented
        return self.width == other.width and self.height == other.height and np.array_equal(self.pixels, other.pixels)

    def __repr__(self):
        return f"GrayImage({self.width}x{self.height})"


def to_grayscale(rgb) -> GrayImage:
    """Average the three channels with floor; input shape (h, w, 3), 8 bits each."""
    arr = np.asarray(rgb)
    if arr.ndim != 3 or arr.shape[2] != 3 or 0 in arr.shape:
        raise MalformedInput(f"expected an (h, w, 3) raster, got shape {arr.shape}")
    if not np.issubdtype(arr.dtype, np.integer) or arr.min() < 0 or arr.max() > 255:
        raise MalformedInput("RGB channels must be 8-bit integers")
    gray = arr.astype(np.uint16).sum(axis=2) // 3
    return GrayImage.from_array(gray.astype(np.uint8))


def xor_image(image: GrayImage, stream) -> GrayImage:
    """XOR pixel i (row-major) with stream[i mod len(stream)]."""
    data = stream.bytes if isinstance(stream, KeyStream) else np.asarray(stream, dtype=np.uint8)
    if len(data) == 0:
        raise EmptyKeyStream("cannot encrypt with an empty keystream")
    flat = image.pixels.reshape(-1)
    if len(data) < flat.size:
        data = np.resize(data, flat.size)  # repeats cyclically
    out = np.bitwise_xor(flat, data[:flat.size])
    return GrayImage(image.width, image.height, out)


def encrypt(image: GrayImage, key: str, burn_in: int = 0, stream_length: Optional[int] = None) -> GrayImage:
    params = derive_params(key)
    n = image.size if stream_length is None else stream_length
    return xor_image(image, keystream(params, n, burn_in))


# XOR is its own inverse
decrypt = encrypt
