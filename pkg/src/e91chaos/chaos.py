"""Logistic-map parameters from a key, and the keystream they generate.

The key is halved; each half is cut into 4-bit nibbles and every nibble
becomes one decimal digit (value mod 10). The first half's digits are written
after "0." to form the seed x0, the second half's after "3.99" to form r.
Both strings are cut at 15 fractional digits, the most a double keeps.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

__all__ = [
    "ChaosParams",
    "DomainError",
    "KeyFormatError",
    "KeyStream",
    "KeyTooShort",
    "derive_params",
    "keystream",
    "logistic_map",
    "parse_key",
]

MAX_FRACTION_DIGITS = 15
R_PREFIX = "3.99"
ZERO_SEED = 0.33
R_CAP = 3.999999
MIN_KEY_BITS = 8


class KeyFormatError(ValueError):
    pass


class KeyTooShort(KeyFormatError):
    pass


class DomainError(ValueError):
    pass


def parse_key(text: str) -> str:
    """Validate a '0'/'1' key string, tolerating surrounding whitespace."""
    key = text.strip()
    if key.strip("01"):
        raise KeyFormatError("key must contain only '0' and '1' characters")
    return key


@dataclass(frozen=True)
class ChaosParams:
    x0: float
    r: float
    digit_trace: tuple[tuple[int, ...], tuple[int, ...]] = ((), ())

    def __post_init__(self):
        if not 0.0 < self.x0 <= 1.0:
            raise ValueError(f"x0 must lie in (0, 1], got {self.x0}")
        if not 3.57 < self.r <= 4.0:
            raise ValueError(f"r must lie in (3.57, 4], got {self.r}")

    def to_json(self) -> str:
        return json.dumps({
            "x0": float(f"{self.x0:.17g}"),
            "r": float(f"{self.r:.17g}"),
            "x0_digits": list(self.digit_trace[0]),
            "r_digits": list(self.digit_trace[1]),
        })

    @classmethod
    def from_json(cls, text: str) -> "ChaosParams":
        d = json.loads(text)
        return cls(float(d["x0"]), float(d["r"]), (tuple(d.get("x0_digits", ())), tuple(d.get("r_digits", ()))))


def _digits(bits: str) -> tuple[int, ...]:
    return tuple(int(bits[i:i + 4], 2) % 10 for i in range(0, len(bits) - 3, 4))


def derive_params(key: str) -> ChaosParams:
    key = parse_key(key)
    if len(key) % 2:
        key = key[:-1]
    if len(key) < MIN_KEY_BITS:
        raise KeyTooShort(f"need at least {MIN_KEY_BITS} key bits, got {len(key)}")
    half = len(key) // 2
    x_digits = _digits(key[:half])
    r_digits = _digits(key[half:])

    seed = float(("0." + "".join(map(str, x_digits)))[:2 + MAX_FRACTION_DIGITS])
    r_text = (R_PREFIX + "".join(map(str, r_digits)))[:2 + MAX_FRACTION_DIGITS]
    r = float(r_text)
    if seed == 0:
        seed = ZERO_SEED
    if r > 4:
        r = R_CAP
    return ChaosParams(seed, r, (x_digits, r_digits))


def logistic_map(x: float, r: float) -> float:
    if not 0.0 <= x <= 1.0:
        raise DomainError(f"x must lie in [0, 1], got {x}")
    if not 0.0 < r <= 4.0:
        raise DomainError(f"r must lie in (0, 4], got {r}")
    return r * x * (1.0 - x)


@dataclass(frozen=True)
class KeyStream:
    bytes: np.ndarray
    params: ChaosParams
    burn_in: int = 0

    def __len__(self) -> int:
        return len(self.bytes)


def keystream(params: ChaosParams, length: int, burn_in: int = 0) -> KeyStream:
    """Iterate the map from x0 and emit floor(256 x) (capped at 255) per iterate.

    The first ``burn_in`` iterates are discarded.
    """
    if length < 0 or burn_in < 0:
        raise ValueError("length and burn_in must be nonnegative")
    x, r = params.x0, params.r
    logistic_map(x, r)  # domain check once; the loop below is hot
    for _ in range(burn_in):
        x = r * x * (1.0 - x)
    out = bytearray(length)
    for i in range(length):
        x = r * x * (1.0 - x)
        b = int(x * 256.0)
        out[i] = 255 if b > 255 else b
    return KeyStream(np.frombuffer(bytes(out), dtype=np.uint8), params, burn_in)
