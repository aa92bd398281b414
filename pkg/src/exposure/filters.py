"""The action space: eight pixel-wise, resolution-independent filters.

Every filter maps raw parameters in (-1, 1) (the tanh head output) to
physical parameters, then transforms each pixel independently. All filters
are differentiable with respect to both the raw parameters and the input
pixels; `filter_vjp` returns exact chain-rule gradients computed with
forward-mode tangents (`dual.py`), using right-sided subgradients at kinks.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from .dual import (
    Dual,
    dabs,
    dclip,
    dcos,
    dexp,
    dmax0,
    dmaximum,
    dminimum,
    dpow,
    dwhere,
    select,
    stack_channels,
)
from .images import LinearImage

LN2 = math.log(2.0)
LN3 = math.log(3.0)

EXPOSURE_RANGE = 3.5  # stops
GAMMA_LOG_BOUND = LN3  # exponent in [1/3, 3]
WB_LOG_BOUND = LN2  # per-channel gain in [1/2, 2]
TONE_SLOPE_BOUND = 2.0
COLOR_SLOPE_BOUND = math.sqrt(1.1 / 0.9)
CURVE_SEGMENTS = 8


class FilterKind(Enum):
    EXPOSURE = "Exposure"
    GAMMA = "Gamma"
    WHITE_BALANCE = "WhiteBalance"
    SATURATION = "Saturation"
    TONE = "Tone"
    CONTRAST = "Contrast"
    BLACK_WHITE = "BlackWhite"
    COLOR = "Color"


FILTER_KINDS = list(FilterKind)
N_FILTERS = len(FILTER_KINDS)

ARITY = {
    FilterKind.EXPOSURE: 1,
    FilterKind.GAMMA: 1,
    FilterKind.WHITE_BALANCE: 3,
    FilterKind.SATURATION: 1,
    FilterKind.TONE: CURVE_SEGMENTS,
    FilterKind.CONTRAST: 1,
    FilterKind.BLACK_WHITE: 1,
    FilterKind.COLOR: 3 * CURVE_SEGMENTS,
}


def arity(kind: FilterKind) -> int:
    return ARITY[kind]


def map_raw_params(kind: FilterKind, raw: np.ndarray) -> dict:
    """Map raw tanh outputs in (-1, 1) to physical filter parameters."""
    raw = np.asarray(raw, dtype=np.float64)
    if raw.shape != (ARITY[kind],):
        raise ValueError(f"{kind.value} expects {ARITY[kind]} raw params, got {raw.shape}")
    if kind is FilterKind.EXPOSURE:
        return {"E": float(EXPOSURE_RANGE * raw[0])}
    if kind is FilterKind.GAMMA:
        return {"g": float(math.exp(raw[0] * GAMMA_LOG_BOUND))}
    if kind is FilterKind.WHITE_BALANCE:
        return {"W": [float(v) for v in np.exp(raw * WB_LOG_BOUND)]}
    if kind in (FilterKind.SATURATION, FilterKind.CONTRAST, FilterKind.BLACK_WHITE):
        return {"p": float(raw[0])}
    if kind is FilterKind.TONE:
        return {"t": [float(v) for v in TONE_SLOPE_BOUND**raw]}
    return {"t": [[float(v) for v in COLOR_SLOPE_BOUND ** raw[8 * c : 8 * c + 8]] for c in range(3)]}


def display_string(kind: FilterKind, resolved: dict) -> str:
    """Human-readable trace label, e.g. 'Exposure +2.15' or 'Gamma 1/0.77'."""
    if kind is FilterKind.EXPOSURE:
        return f"Exposure {resolved['E']:+.2f}"
    if kind is FilterKind.GAMMA:
        g = resolved["g"]
        return f"Gamma 1/{g:.2f}" if g < 1.0 else f"Gamma {g:.2f}"
    if kind is FilterKind.WHITE_BALANCE:
        w = resolved["W"]
        return f"White Balance ({w[0]:.2f}, {w[1]:.2f}, {w[2]:.2f})"
    if kind is FilterKind.SATURATION:
        return f"Saturation {resolved['p']:+.2f}"
    if kind is FilterKind.CONTRAST:
        return f"Contrast {resolved['p']:+.2f}"
    if kind is FilterKind.BLACK_WHITE:
        return f"Black & White {resolved['p']:+.2f}"
    if kind is FilterKind.TONE:
        return "Tone Curve"
    return "Color Curve"


@dataclass(frozen=True)
class FilterAction:
    """One edit step: a filter kind plus its raw and resolved parameters."""

    kind: FilterKind
    raw: np.ndarray
    resolved: dict = field(default=None)

    def __post_init__(self):
        raw = np.asarray(self.raw, dtype=np.float64)
        object.__setattr__(self, "raw", raw)
        if self.resolved is None:
            object.__setattr__(self, "resolved", map_raw_params(self.kind, raw))

    @property
    def display(self) -> str:
        return display_string(self.kind, self.resolved)


# -- pixel-wise evaluation on duals -------------------------------------


def _curve_apply(x: Dual, t: list[Dual]) -> Dual:
    n = len(t)
    total = t[0]
    for ti in t[1:]:
        total = total + ti
    acc = dclip(x * float(n), 0.0, 1.0) * t[0]
    for i in range(1, n):
        acc = acc + dclip(x * float(n) - float(i), 0.0, 1.0) * t[i]
    return acc / total


def _luminance(x: Dual) -> Dual:
    return x.channel(0) * 0.27 + x.channel(1) * 0.67 + x.channel(2) * 0.06


def _guarded(x: Dual, cond: np.ndarray) -> Dual:
    """Replace value with 1 (and tangent with 0) where cond is false."""
    return Dual(np.where(cond, x.val, 1.0), np.where(cond, x.tan, 0.0))


def _saturation_enhanced(x: Dual) -> Dual:
    """HSV saturation boost: EnhancedS(s, v) = s + (1-s)(0.5-|0.5-v|)*0.8."""
    r, g, b = x.channel(0), x.channel(1), x.channel(2)
    mx = dmaximum(dmaximum(r, g), b)
    mn = dminimum(dminimum(r, g), b)
    v = mx
    chroma = mx - mn
    chromatic = chroma.val > 0
    c_safe = _guarded(chroma, chromatic)
    # Hue sector in [0, 6); hue (and its gradient) is 0 at achromatic pixels.
    is_r = mx.val == r.val
    is_g = (~is_r) & (mx.val == g.val)
    h_r = (g - b) / c_safe
    h_r = h_r - 6.0 * np.floor(h_r.val / 6.0)
    h_g = (b - r) / c_safe + 2.0
    h_b = (r - g) / c_safe + 4.0
    h = select(chromatic, dwhere(is_r, h_r, dwhere(is_g, h_g, h_b)), 0.0)
    s = select(chromatic, chroma / _guarded(v, v.val > 0), 0.0)

    s2 = s + (1.0 - s) * (0.5 - dabs(0.5 - v)) * 0.8

    # HSV -> RGB with hue h, saturation s2, value v.
    c2 = v * s2
    hm2 = h - 2.0 * np.floor(h.val / 2.0)
    xx = c2 * (1.0 - dabs(hm2 - 1.0))
    m = v - c2
    sector = np.clip(np.floor(h.val).astype(int), 0, 5)
    zero = Dual.constant(np.zeros_like(c2.val), c2.tan.shape[0])
    rp = dwhere(np.isin(sector, (0, 5)), c2, dwhere(np.isin(sector, (1, 4)), xx, zero))
    gp = dwhere(np.isin(sector, (1, 2)), c2, dwhere(np.isin(sector, (0, 3)), xx, zero))
    bp = dwhere(np.isin(sector, (3, 4)), c2, dwhere(np.isin(sector, (2, 5)), xx, zero))
    return stack_channels([rp + m, gp + m, bp + m])


def _contrast_enhanced(x: Dual) -> Dual:
    lum = _luminance(x)
    enhanced_lum = (1.0 - dcos(lum * math.pi)) * 0.5
    ratio = select(lum.val > 1e-12, enhanced_lum / _guarded(lum, lum.val > 1e-12), 0.0)
    return x * ratio


def _eval_filter(kind: FilterKind, raw: list[Dual], img: Dual) -> Dual:
    if kind is FilterKind.EXPOSURE:
        return img * dexp(raw[0] * (EXPOSURE_RANGE * LN2))
    if kind is FilterKind.GAMMA:
        g = dexp(raw[0] * GAMMA_LOG_BOUND)
        return dpow(dmax0(img), g)
    if kind is FilterKind.WHITE_BALANCE:
        return stack_channels([img.channel(c) * dexp(raw[c] * WB_LOG_BOUND) for c in range(3)])
    if kind is FilterKind.TONE:
        t = [dexp(r * math.log(TONE_SLOPE_BOUND)) for r in raw]
        return _curve_apply(dclip(img, 0.0, 1.0), t)
    if kind is FilterKind.COLOR:
        out = []
        for c in range(3):
            t = [dexp(r * math.log(COLOR_SLOPE_BOUND)) for r in raw[8 * c : 8 * c + 8]]
            out.append(_curve_apply(dclip(img.channel(c), 0.0, 1.0), t))
        return stack_channels(out)
    # Interpolation-strength filters: out = (1-p) * img + p * Enhanced(clip(img)).
    p = raw[0]
    clipped = dclip(img, 0.0, 1.0)
    if kind is FilterKind.SATURATION:
        enhanced = _saturation_enhanced(clipped)
    elif kind is FilterKind.CONTRAST:
        enhanced = _contrast_enhanced(clipped)
    else:  # BLACK_WHITE
        lum = _luminance(clipped)
        enhanced = stack_channels([lum, lum, lum])
    return img * (1.0 - p) + enhanced * p


def apply_filter(action: FilterAction, image: LinearImage) -> LinearImage:
    """Apply one filter step; output has the same dimensions as the input."""
    raw = [Dual.constant(v, 0, rank=3) for v in action.raw]
    img = Dual.constant(image.data, 0)
    out = _eval_filter(action.kind, raw, img)
    return LinearImage(out.val)


def filter_vjp(
    action: FilterAction, image: LinearImage, upstream: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Vector-Jacobian product of apply_filter.

    Returns (grad_raw, grad_input): the gradient of sum(upstream * output)
    with respect to the raw parameter vector (chained through the raw ->
    physical parameter map) and with respect to the input pixels.
    """
    upstream = np.asarray(upstream, dtype=np.float64)
    if upstream.shape != image.data.shape:
        raise ValueError(f"upstream shape {upstream.shape} != image shape {image.data.shape}")
    n = ARITY[action.kind]
    k = n + 3
    raw = [Dual.seeded(action.raw[i], k, i, rank=3) for i in range(n)]
    img = Dual.constant(image.data, k)
    for c in range(3):
        img.tan[n + c, :, :, c] = 1.0  # per-pixel Jacobian column seeds
    out = _eval_filter(action.kind, raw, img)
    grad_raw = np.einsum("hwc,khwc->k", upstream, out.tan[:n])
    grad_input = np.einsum("hwc,khwc->hwk", upstream, out.tan[n:])
    return grad_raw, grad_input


# -- edit scripts --------------------------------------------------------


@dataclass
class EditScript:
    """An ordered, replayable list of filter actions (the white-box output)."""

    steps: list[FilterAction]

    def apply(self, image: LinearImage) -> LinearImage:
        for step in self.steps:
            image = apply_filter(step, image)
        return image

    def to_json(self) -> str:
        doc = [
            {
                "filter": s.kind.value,
                "raw": [float(v) for v in s.raw],
                "resolved": s.resolved,
                "display": s.display,
            }
            for s in self.steps
        ]
        return json.dumps(doc, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "EditScript":
        doc = json.loads(text)
        steps = [FilterAction(FilterKind(step["filter"]), np.asarray(step["raw"])) for step in doc]
        return cls(steps)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json() + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "EditScript":
        return cls.from_json(Path(path).read_text())
