"""White-box photo post-processing: differentiable filters, an actor-critic
agent that learns a retouching style from unpaired collections, and tools
to apply, inspect, and reverse-engineer the resulting edit scripts."""

from .filters import (
    EditScript,
    FilterAction,
    FilterKind,
    apply_filter,
    filter_vjp,
)
from .images import LinearImage, load_image, save_image

__all__ = [
    "EditScript",
    "FilterAction",
    "FilterKind",
    "LinearImage",
    "apply_filter",
    "filter_vjp",
    "load_image",
    "save_image",
]

__version__ = "0.1.0"
