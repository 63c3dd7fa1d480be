"""Entropy, NPCR, UACI and histograms for plain/cipher image pairs."""
from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass

import numpy as np

from .cipher import GrayImage

__all__ = [
    "DimensionMismatch",
    "EmptyImage",
    "MetricsReport",
    "analyze",
    "chi_square_uniformity",
    "entropy",
    "histogram",
    "histogram_csv",
    "npcr",
    "uaci",
]


class EmptyImage(ValueError):
    pass


class DimensionMismatch(ValueError):
    pass


def _pixels(image: GrayImage) -> np.ndarray:
    if image.size == 0:
        raise EmptyImage("image has no pixels")
    return image.pixels.reshape(-1)


def histogram(image: GrayImage) -> np.ndarray:
    return np.bincount(_pixels(image), minlength=256).astype(np.int64)


def entropy(image: GrayImage) -> float:
    """Shannon entropy in bits over the 256 gray levels."""
    counts = histogram(image)
    p = counts[counts > 0] / image.size
    return float(max(0.0, -np.sum(p * np.log2(p))))


def _pair(original: GrayImage, cipher: GrayImage) -> tuple[np.ndarray, np.ndarray]:
    if (original.width, original.height) != (cipher.width, cipher.height):
        raise DimensionMismatch(
            f"{original.width}x{original.height} vs {cipher.width}x{cipher.height}"
        )
    return _pixels(original).astype(np.int16), _pixels(cipher).astype(np.int16)


def npcr(original: GrayImage, cipher: GrayImage) -> float:
    o, c = _pair(original, cipher)
    return 100.0 * np.count_nonzero(o != c) / o.size


def uaci(original: GrayImage, cipher: GrayImage) -> float:
    o, c = _pair(original, cipher)
    return 100.0 * float(np.abs(o - c).sum()) / (255.0 * o.size)


def chi_square_uniformity(image: GrayImage) -> float:
    """Pearson chi-square of the histogram against a flat 256-bin histogram."""
    counts = histogram(image)
    expected = image.size / 256.0
    return float(((counts - expected) ** 2 / expected).sum())


@dataclass
class MetricsReport:
    entropy_plain: float
    entropy_bits: float
    npcr_percent: float
    uaci_percent: float
    histogram: list[int]

    def to_json(self) -> str:
        return json.dumps(asdict(self))

    CSV_FIELDS = ("entropy_plain", "entropy_bits", "npcr_percent", "uaci_percent")

    def csv_row(self) -> dict:
        return {k: getattr(self, k) for k in self.CSV_FIELDS}


def analyze(plain: GrayImage, cipher: GrayImage) -> MetricsReport:
    """Metrics for a plain image and its encryption; histogram is the cipher's."""
    return MetricsReport(
        entropy_plain=entropy(plain),
        entropy_bits=entropy(cipher),
        npcr_percent=npcr(plain, cipher),
        uaci_percent=uaci(plain, cipher),
        histogram=histogram(cipher).tolist(),
    )


def reports_csv(reports, names=None) -> str:
    buf = io.StringIO()
    fields = ("image",) + MetricsReport.CSV_FIELDS
    writer = csv.DictWriter(buf, fieldnames=fields, lineterminator="\n")
    writer.writeheader()
    for i, rep in enumerate(reports):
        writer.writerow({"image": names[i] if names else i, **rep.csv_row()})
    return buf.getvalue()


def histogram_csv(counts) -> str:
    """256 lines of ``level,count``."""
    if len(counts) != 256:
        raise ValueError("histogram must have 256 bins")
    return "".join(f"{level},{int(n)}\n" for level, n in enumerate(counts))
