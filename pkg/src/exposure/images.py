"""Linear-RGB images: file I/O, resizing, and global feature statistics.

Images are stored as float64 arrays of shape (height, width, 3) in linear
(non-gamma) RGB. Values are nominally in [0, 1] but may exceed that range
between editing steps; clamping happens only when saving.

Supported formats:
  - binary PPM (P6, 8-bit, sRGB-encoded) for convenient viewing
  - PFM (32-bit float, linear, "PF" header) as the lossless path
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

LUM_WEIGHTS = np.array([0.27, 0.67, 0.06])


class ImageError(Exception):
    """Unreadable, unwritable, or malformed image data."""


@dataclass(frozen=True)
class LinearImage:
    """A linear-RGB raster. `data` has shape (height, width, 3), float64."""

    data: np.ndarray

    def __post_init__(self):
        d = self.data
        if d.ndim != 3 or d.shape[2] != 3:
            raise ImageError(f"expected (h, w, 3) array, got shape {d.shape}")
        if d.shape[0] == 0 or d.shape[1] == 0:
            raise ImageError("zero-dimension image")
        if not np.all(np.isfinite(d)):
            raise ImageError("image contains non-finite values")

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]


@dataclass(frozen=True)
class FeatureTriple:
    """Mean luminance, contrast (2x luminance variance), mean HSL saturation."""

    luminance: float
    contrast: float
    saturation: float

    def as_array(self) -> np.ndarray:
        return np.array([self.luminance, self.contrast, self.saturation])


def srgb_to_linear(c: np.ndarray) -> np.ndarray:
    """Standard sRGB electro-optical transfer function, elementwise."""
    c = np.asarray(c, dtype=np.float64)
    return np.where(c <= 0.04045, c / 12.92, ((c + 0.055) / 1.055) ** 2.4)


def linear_to_srgb(c: np.ndarray) -> np.ndarray:
    c = np.asarray(c, dtype=np.float64)
    return np.where(c <= 0.0031308, 12.92 * c, 1.055 * np.clip(c, 0, None) ** (1 / 2.4) - 0.055)


def _read_ppm(raw: bytes) -> LinearImage:
    # Header: magic, width, height, maxval as whitespace-separated tokens,
    # '#' comments allowed; pixel data follows the single whitespace byte
    # after maxval.
    pos = 0

    def next_token() -> bytes:
        nonlocal pos
        while pos < len(raw):
            ch = raw[pos : pos + 1]
            if ch == b"#":
                while pos < len(raw) and raw[pos : pos + 1] != b"\n":
                    pos += 1
            elif ch.isspace():
                pos += 1
            else:
                break
        start = pos
        while pos < len(raw) and not raw[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ImageError("truncated PPM header")
        return raw[start:pos]

    magic = next_token()
    if magic != b"P6":
        raise ImageError(f"unsupported PPM magic {magic!r}")
    width = int(next_token())
    height = int(next_token())
    maxval = int(next_token())
    if maxval != 255:
        raise ImageError(f"only maxval 255 PPM supported, got {maxval}")
    if width <= 0 or height <= 0:
        raise ImageError("zero-dimension image")
    pos += 1  # single whitespace after maxval
    need = width * height * 3
    body = raw[pos : pos + need]
    if len(body) != need:
        raise ImageError("truncated PPM pixel data")
    arr = np.frombuffer(body, dtype=np.uint8).reshape(height, width, 3)
    return LinearImage(srgb_to_linear(arr / 255.0))


def _read_pfm(raw: bytes) -> LinearImage:
    parts = raw.split(b"\n", 3)
    if len(parts) < 4:
        raise ImageError("truncated PFM header")
    magic, dims, scale_s, body = parts
    if magic.strip() != b"PF":
        raise ImageError(f"unsupported PFM magic {magic!r} (only 3-channel PF)")
    try:
        width, height = (int(v) for v in dims.split())
        scale = float(scale_s)
    except ValueError as exc:
        raise ImageError("malformed PFM header") from exc
    if width <= 0 or height <= 0:
        raise ImageError("zero-dimension image")
    dtype = "<f4" if scale < 0 else ">f4"
    need = width * height * 3 * 4
    if len(body) < need:
        raise ImageError("truncated PFM pixel data")
    arr = np.frombuffer(body[:need], dtype=dtype).reshape(height, width, 3)
    arr = np.flipud(arr).astype(np.float64)  # PFM rows run bottom-to-top
    if not np.all(np.isfinite(arr)):
        raise ImageError("PFM contains non-finite values")
    return LinearImage(np.ascontiguousarray(arr))


def load_image(path: str | Path) -> LinearImage:
    """Load a PPM (decoded sRGB -> linear) or PFM (taken as linear) file."""
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise ImageError(f"cannot read {path}: {exc}") from exc
    if raw[:2] == b"P6":
        return _read_ppm(raw)
    if raw[:2] == b"PF":
        return _read_pfm(raw)
    raise ImageError(f"unsupported image format in {path}")


def save_image(image: LinearImage, path: str | Path) -> None:
    """Save to .ppm (clamped, sRGB-encoded 8-bit) or .pfm (clamped float32)."""
    path = Path(path)
    clamped = np.clip(image.data, 0.0, 1.0)
    if path.suffix.lower() == ".ppm":
        srgb = np.clip(np.round(linear_to_srgb(clamped) * 255.0), 0, 255).astype(np.uint8)
        header = f"P6\n{image.width} {image.height}\n255\n".encode()
        payload = header + srgb.tobytes()
    elif path.suffix.lower() == ".pfm":
        header = f"PF\n{image.width} {image.height}\n-1.0\n".encode()
        payload = header + np.flipud(clamped).astype("<f4").tobytes()
    else:
        raise ImageError(f"unsupported output format {path.suffix!r} (use .ppm or .pfm)")
    try:
        path.write_bytes(payload)
    except OSError as exc:
        raise ImageError(f"cannot write {path}: {exc}") from exc


def _overlap_matrix(src: int, dst: int) -> np.ndarray:
    """Row-stochastic (dst, src) matrix of area overlaps for box resampling."""
    m = np.zeros((dst, src))
    step = src / dst
    for i in range(dst):
        lo, hi = i * step, (i + 1) * step
        j0, j1 = int(np.floor(lo)), int(np.ceil(hi))
        for j in range(j0, min(j1, src)):
            m[i, j] = min(hi, j + 1) - max(lo, j)
    return m / step


def downsample(image: LinearImage, side: int) -> LinearImage:
    """Resize to side x side by area (box) averaging; stretches to square."""
    if side < 1:
        raise ValueError("side must be >= 1")
    mh = _overlap_matrix(image.height, side)
    mw = _overlap_matrix(image.width, side)
    out = np.einsum("ij,jkc,lk->ilc", mh, image.data, mw)
    return LinearImage(out)


def luminance_map(data: np.ndarray) -> np.ndarray:
    return data @ LUM_WEIGHTS


def hsl_saturation_map(data: np.ndarray) -> np.ndarray:
    """Per-pixel HSL saturation: (max-min)/(1-|max+min-1|), 0 if achromatic."""
    mx = data.max(axis=-1)
    mn = data.min(axis=-1)
    denom = 1.0 - np.abs(mx + mn - 1.0)
    chroma = mx - mn
    return np.where(chroma > 0, chroma / np.maximum(denom, 1e-12), 0.0)


def global_features(image: LinearImage) -> FeatureTriple:
    """Mean luminance, 2x variance of luminance, and mean HSL saturation.

    Statistics are computed on values clamped to [0, 1] so that they stay
    bounded for intermediate editing states.
    """
    x = np.clip(image.data, 0.0, 1.0)
    lum = luminance_map(x)
    return FeatureTriple(
        luminance=float(lum.mean()),
        contrast=float(2.0 * lum.var()),
        saturation=float(hsl_saturation_map(x).mean()),
    )


def crop_patches(image: LinearImage, count: int, rng: np.random.Generator) -> list[LinearImage]:
    """`count` random square crops with side = half the shorter image side."""
    if count < 1:
        raise ValueError("count must be >= 1")
    if image.width < 2 or image.height < 2:
        raise ImageError("image too small to crop (need at least 2x2)")
    side = min(image.width, image.height) // 2
    ys = rng.integers(0, image.height - side + 1, size=count)
    xs = rng.integers(0, image.width - side + 1, size=count)
    return [LinearImage(image.data[y : y + side, x : x + side].copy()) for y, x in zip(ys, xs)]
