"""Reverse-engineering a black-box filter from before/after image pairs.

Because the pairing gives direct supervision, no RL or adversary is
needed: a fixed-length operation sequence is fitted by gradient descent on
mean-squared pixel error through the differentiable filters. The discrete
filter choice per slot is found by enumerating all kind sequences when the
sequence is short and by beam search otherwise. Raw parameters are
reparameterized as tanh(z) so the optimization over z is unconstrained.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError
from .filters import (
    ARITY,
    FILTER_KINDS,
    EditScript,
    FilterAction,
    FilterKind,
    apply_filter,
    filter_vjp,
)
from .images import LinearImage, downsample, load_image
from .nn import Adam

PROXY_SIDE = 64
BEAM_WIDTH = 4
ENUM_MAX_STEPS = 2
RANK_ITERS = 40
REFINE_ITERS = 300
FIT_LR = 0.05


def load_pairs(before_dir: str | Path, after_dir: str | Path) -> list[tuple[LinearImage, LinearImage]]:
    """Before/after proxies matched by file name; names must correspond 1:1."""
    before, after = Path(before_dir), Path(after_dir)
    for d in (before, after):
        if not d.is_dir():
            raise DataError(f"not a directory: {d}")
    names_b = {p.name for p in before.iterdir() if p.suffix.lower() in (".ppm", ".pfm")}
    names_a = {p.name for p in after.iterdir() if p.suffix.lower() in (".ppm", ".pfm")}
    if not names_b:
        raise DataError(f"no images in {before}")
    if names_b != names_a:
        odd = sorted(names_b.symmetric_difference(names_a))[:5]
        raise DataError(f"unpaired file names between {before} and {after}: {odd}")
    pairs = []
    for name in sorted(names_b):
        pairs.append(
            (
                downsample(load_image(before / name), PROXY_SIDE),
                downsample(load_image(after / name), PROXY_SIDE),
            )
        )
    return pairs


@dataclass
class FitResult:
    script: EditScript
    residual: float


def _sequence_loss_grads(
    kinds: list[FilterKind],
    zs: list[np.ndarray],
    pairs: list[tuple[LinearImage, LinearImage]],
):
    """Mean-squared pixel error over all pairs and its gradients in z."""
    actions = [FilterAction(k, np.tanh(z)) for k, z in zip(kinds, zs)]
    loss = 0.0
    grads = [np.zeros_like(z) for z in zs]
    n = sum(p[0].data.size for p in pairs)
    for src, dst in pairs:
        images = [src]
        for action in actions:
            images.append(apply_filter(action, images[-1]))
        diff = images[-1].data - dst.data
        loss += float((diff**2).sum()) / n
        upstream = 2.0 * diff / n
        for step in reversed(range(len(actions))):
            g_raw, upstream = filter_vjp(actions[step], images[step], upstream)
            grads[step] += g_raw * (1.0 - np.tanh(zs[step]) ** 2)
    return loss, grads, actions


def _fit_sequence(
    kinds: list[FilterKind],
    pairs: list[tuple[LinearImage, LinearImage]],
    iterations: int,
    zs: list[np.ndarray] | None = None,
) -> tuple[float, list[np.ndarray], list[FilterAction]]:
    zs = [np.zeros(ARITY[k]) for k in kinds] if zs is None else [z.copy() for z in zs]
    opt = Adam(zs, FIT_LR, total_iterations=10**9)  # effectively constant lr
    best = None
    for t in range(iterations):
        loss, grads, actions = _sequence_loss_grads(kinds, zs, pairs)
        if best is None or loss < best[0]:
            best = (loss, [z.copy() for z in zs], actions)
        opt.step(grads, 0)
    loss, _, actions = _sequence_loss_grads(kinds, zs, pairs)
    if loss < best[0]:
        best = (loss, [z.copy() for z in zs], actions)
    return best


def _candidate_sequences(steps: int, pairs, rank_pairs) -> list[list[FilterKind]]:
    if steps <= ENUM_MAX_STEPS:
        seqs = [[]]
        for _ in range(steps):
            seqs = [s + [k] for s in seqs for k in FILTER_KINDS]
        return seqs
    # beam search: grow one slot at a time, keeping the best prefixes
    beam = [[]]
    for _ in range(steps):
        scored = []
        for prefix in beam:
            for k in FILTER_KINDS:
                seq = prefix + [k]
                loss, _, _ = _fit_sequence(seq, rank_pairs, RANK_ITERS)
                scored.append((loss, seq))
        scored.sort(key=lambda item: item[0])
        beam = [seq for _, seq in scored[:BEAM_WIDTH]]
    return beam


def distill(
    pairs: list[tuple[LinearImage, LinearImage]],
    steps: int,
    rank_images: int = 2,
) -> FitResult:
    """Fit a `steps`-long filter sequence to the paired collection."""
    if steps < 1:
        raise DataError("steps must be >= 1")
    if not pairs:
        raise DataError("no image pairs to fit")
    rank_pairs = pairs[: max(1, min(rank_images, len(pairs)))]

    sequences = _candidate_sequences(steps, pairs, rank_pairs)
    ranked = sorted(
        ((_fit_sequence(seq, rank_pairs, RANK_ITERS)[0], i) for i, seq in enumerate(sequences)),
    )
    best = None
    for _, i in ranked[:BEAM_WIDTH]:
        loss, _, actions = _fit_sequence(sequences[i], pairs, REFINE_ITERS)
        if best is None or loss < best[0]:
            best = (loss, actions)
    return FitResult(EditScript(steps=best[1]), best[0])


def distill_dirs(before_dir: str | Path, after_dir: str | Path, steps: int) -> FitResult:
    return distill(load_pairs(before_dir, after_dir), steps)
