"""Monotone piecewise-linear intensity curves.

A curve with L positive segment heights t_0..t_{L-1} maps intensity
x in [0, 1] through the breakpoints (k/L, T_k/T_L), where T_k is the
prefix sum of the segment heights. The curve is differentiable in both
x and the segment heights, and always satisfies f(0)=0, f(1)=1.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Curve:
    segments: np.ndarray  # (L,) positive reals

    def __post_init__(self):
        seg = np.asarray(self.segments, dtype=np.float64)
        if seg.ndim != 1 or len(seg) == 0:
            raise ValueError("segments must be a non-empty 1-D vector")
        if not np.all(seg > 0):
            raise ValueError("all curve segments must be positive")
        object.__setattr__(self, "segments", seg)

    @property
    def prefix_sums(self) -> np.ndarray:
        """T_0..T_L with T_0 = 0."""
        return np.concatenate([[0.0], np.cumsum(self.segments)])


def curve_eval(curve: Curve, x):
    """Evaluate f(x) = (1/T_L) * sum_i clip(L*x - i, 0, 1) * t_i."""
    x = np.asarray(x, dtype=np.float64)
    t = curve.segments
    total = t.sum()
    n = len(t)
    idx = np.arange(n).reshape((n,) + (1,) * x.ndim)
    terms = np.clip(n * x - idx, 0.0, 1.0) * t.reshape(idx.shape)
    out = terms.sum(axis=0) / total
    return float(out) if out.ndim == 0 else out
