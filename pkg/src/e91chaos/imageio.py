"""Binary PGM (P5) codec, plus an optional PNG reader via Pillow."""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .cipher import GrayImage, to_grayscale

__all__ = ["ParseError", "load_image", "read_pgm", "save_pgm", "write_pgm"]


class ParseError(ValueError):
    pass


def _header_tokens(data: bytes, count: int) -> tuple[list[bytes], int]:
    """Read ``count`` whitespace-separated header tokens, skipping '#' comments.

    Returns the tokens and the offset just past the single whitespace byte
    that ends the last token.
    """
    tokens: list[bytes] = []
    pos, n = 0, len(data)
    while len(tokens) < count:
        while pos < n and data[pos] in b" \t\r\n":
            pos += 1
        if pos >= n:
            raise ParseError("truncated PGM header")
        if data[pos] == ord("#"):
            end = data.find(b"\n", pos)
            if end < 0:
                raise ParseError("truncated PGM header")
            pos = end + 1
            continue
        start = pos
        while pos < n and data[pos] not in b" \t\r\n#":
            pos += 1
        tokens.append(data[start:pos])
    if pos >= n or data[pos] not in b" \t\r\n":
        raise ParseError("PGM header must end with a single whitespace byte")
    return tokens, pos + 1


def read_pgm(data: bytes) -> GrayImage:
    if not data.startswith(b"P5"):
        raise ParseError("not a binary PGM (magic must be P5)")
    tokens, offset = _header_tokens(data, 4)
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError:
        raise ParseError("PGM header fields must be integers") from None
    if width <= 0 or height <= 0:
        raise ParseError(f"nonpositive dimensions {width}x{height}")
    if maxval != 255:
        raise ParseError(f"maxval must be 255, got {maxval}")
    payload = data[offset:offset + width * height]
    if len(payload) != width * height:
        raise ParseError(f"payload truncated: {len(payload)} of {width * height} bytes")
    return GrayImage(width, height, np.frombuffer(payload, dtype=np.uint8))


def write_pgm(image: GrayImage) -> bytes:
    return f"P5\n{image.width} {image.height}\n255\n".encode("ascii") + image.pixels.tobytes()


def save_pgm(image: GrayImage, path) -> None:
    Path(path).write_bytes(write_pgm(image))


def load_image(path) -> GrayImage:
    """Load a PGM, or any format Pillow can open (converted to grayscale)."""
    data = Path(path).read_bytes()
    if data.startswith(b"P5"):
        return read_pgm(data)
    try:
        from PIL import Image
    except ImportError:
        raise ParseError(f"{path}: not a P5 PGM and Pillow is not installed") from None
    try:
        with Image.open(path) as im:
            im.load()
            if im.mode == "L":
                return GrayImage.from_array(np.asarray(im, dtype=np.uint8))
            return to_grayscale(np.asarray(im.convert("RGB"), dtype=np.uint8))
    except (OSError, SyntaxError) as exc:
        raise ParseError(f"{path}: unreadable image ({exc})") from None
