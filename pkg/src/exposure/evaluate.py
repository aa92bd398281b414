"""Style-similarity scoring between image collections.

A collection's style fingerprint is a triple of normalized 32-bin
histograms (mean luminance, contrast, mean saturation) gathered over 16
random square crops per image. Two fingerprints are compared by histogram
intersection, reported as a percentage.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError
from .images import LinearImage, crop_patches, global_features, load_image

N_BINS = 32
N_CROPS = 16
FEATURE_NAMES = ("luminance", "contrast", "saturation")


@dataclass(frozen=True)
class StyleHistogram:
    """Normalized per-feature histograms over [0, 1]."""

    luminance: np.ndarray
    contrast: np.ndarray
    saturation: np.ndarray

    def __post_init__(self):
        for name in FEATURE_NAMES:
            h = getattr(self, name)
            if h.shape != (N_BINS,):
                raise ValueError(f"{name} histogram must have {N_BINS} bins")
            if not np.isclose(h.sum(), 1.0):
                raise ValueError(f"{name} histogram must be normalized")


def _bin_index(values: np.ndarray) -> np.ndarray:
    # values at or above 1.0 land in the last bin
    return np.minimum((np.asarray(values) * N_BINS).astype(int), N_BINS - 1)


def feature_samples(images: list[LinearImage], seed: int = 0) -> np.ndarray:
    """(n_images * N_CROPS, 3) feature rows from seeded random crops.

    Crop placement is seeded per image from a digest of its pixels, so a
    duplicated collection produces exactly the duplicated sample set."""
    rows = []
    for image in images:
        digest = zlib.crc32(np.ascontiguousarray(image.data).tobytes())
        rng = np.random.default_rng([seed, digest])
        for patch in crop_patches(image, N_CROPS, rng):
            f = global_features(patch)
            rows.append([f.luminance, f.contrast, f.saturation])
    return np.asarray(rows)


def dataset_histograms(images: list[LinearImage], seed: int = 0) -> StyleHistogram:
    if not images:
        raise DataError("cannot fingerprint an empty image collection")
    samples = feature_samples(images, seed)
    hists = []
    for col in range(3):
        counts = np.bincount(_bin_index(samples[:, col]), minlength=N_BINS)
        hists.append(counts / counts.sum())
    return StyleHistogram(*hists)


def histogram_intersection(a: np.ndarray, b: np.ndarray) -> float:
    """Overlap of two normalized histograms as a percentage in [0, 100]."""
    return float(np.minimum(a, b).sum() * 100.0)


def compare(a: StyleHistogram, b: StyleHistogram) -> dict[str, float]:
    return {
        name: histogram_intersection(getattr(a, name), getattr(b, name))
        for name in FEATURE_NAMES
    }


def load_directory(path: str | Path) -> list[LinearImage]:
    """All .ppm/.pfm images under a directory, sorted by file name."""
    root = Path(path)
    if not root.is_dir():
        raise DataError(f"not a directory: {root}")
    files = sorted(p for p in root.iterdir() if p.suffix.lower() in (".ppm", ".pfm"))
    if not files:
        raise DataError(f"no .ppm or .pfm images in {root}")
    return [load_image(p) for p in files]


def report(scores: dict[str, float]) -> str:
    return "\n".join(f"{name:<12} {scores[name]:6.2f}%" for name in FEATURE_NAMES)
