"""WGAN discriminator with gradient penalty.

The discriminator scores 64x64 images augmented with three constant
feature planes (mean luminance, contrast, mean saturation). Its score gap
between target and generated batches estimates the Earth Mover's Distance,
and its pixel gradient drives the deterministic policy gradient.

The gradient penalty pushes the norm of the score's *pixel* gradient
(including the chain through the recomputed feature planes) toward 1 on
random interpolates between generated and target samples. Its weight
gradient is a second derivative; see `nn.Network.forward_tangent` for how
it is computed exactly (a.e.) with frozen activation masks.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .images import LUM_WEIGHTS, LinearImage, global_features
from .nn import Network, planes_tensor


@dataclass
class CriticBatch:
    """Paired generated/target samples plus interpolation coefficients."""

    generated: list[LinearImage]
    targets: list[LinearImage]
    interpolation_coefficients: np.ndarray

    def __post_init__(self):
        if len(self.generated) != len(self.targets):
            raise ValueError("generated and target batches must have equal size")
        eps = np.asarray(self.interpolation_coefficients, dtype=np.float64)
        if eps.shape != (len(self.generated),):
            raise ValueError("need one interpolation coefficient per pair")
        self.interpolation_coefficients = eps


def critic_input(data: np.ndarray) -> np.ndarray:
    """(6, H, W) network input: pixels plus the three feature planes."""
    f = global_features(LinearImage(data))
    return planes_tensor(data, [f.luminance, f.contrast, f.saturation])


def batch_critic_input(datas: list[np.ndarray]) -> np.ndarray:
    return np.stack([critic_input(d) for d in datas])


def score_batch(net: Network, datas: list[np.ndarray], rng: np.random.Generator):
    scores, tape = net.forward(batch_critic_input(datas), rng)
    return scores[:, 0], tape


def score(net: Network, image: LinearImage, rng: np.random.Generator | None = None) -> float:
    rng = rng if rng is not None else np.random.default_rng(0)
    s, _ = score_batch(net, [image.data], rng)
    return float(s[0])


# -- feature-plane derivatives ------------------------------------------


def _feature_partials(data: np.ndarray):
    """Per-pixel partials of the three feature scalars w.r.t. pixels.

    Features are computed on values clamped to [0, 1]; the clamp mask uses
    the right-sided subgradient convention (active on [0, 1))."""
    x = np.clip(data, 0.0, 1.0)
    mask = (data >= 0.0) & (data < 1.0)
    m = x.shape[0] * x.shape[1]
    lum = x @ LUM_WEIGHTS

    d_lum = np.broadcast_to(LUM_WEIGHTS / m, x.shape) * mask
    d_con = (4.0 / m) * (lum - lum.mean())[:, :, None] * LUM_WEIGHTS * mask

    # HSL saturation S = (mx - mn) / (1 - |mx + mn - 1|), 0 if achromatic.
    mx = x.max(axis=-1)
    mn = x.min(axis=-1)
    chroma = mx - mn
    chromatic = chroma > 0
    denom = np.maximum(1.0 - np.abs(mx + mn - 1.0), 1e-12)
    sgn = np.where(mx + mn - 1.0 >= 0, 1.0, -1.0)
    ds_dmx = np.where(chromatic, 1.0 / denom + chroma * sgn / denom**2, 0.0)
    ds_dmn = np.where(chromatic, -1.0 / denom + chroma * sgn / denom**2, 0.0)
    arange = np.arange(3)
    is_mx = arange == np.argmax(x, axis=-1)[:, :, None]
    is_mn = (~is_mx) & (arange == np.argmin(x, axis=-1)[:, :, None])
    d_sat = (ds_dmx[:, :, None] * is_mx + ds_dmn[:, :, None] * is_mn) / m * mask
    return d_lum, d_con, d_sat


def _pixel_gradient(data: np.ndarray, gz: np.ndarray) -> np.ndarray:
    """Fold the 6-channel input gradient back to pixels via the planes."""
    g = gz[:3].transpose(1, 2, 0).copy()
    partials = _feature_partials(data)
    for k in range(3):
        g += gz[3 + k].sum() * partials[k]
    return g


def _plane_jvp(data: np.ndarray, direction: np.ndarray) -> np.ndarray:
    """Directional derivatives of the three feature scalars along `direction`."""
    partials = _feature_partials(data)
    return np.array([(p * direction).sum() for p in partials])


def score_input_gradient(
    net: Network, image: LinearImage, rng: np.random.Generator | None = None
) -> np.ndarray:
    """Pixel gradient of D(image), feature-plane chain included."""
    rng = rng if rng is not None else np.random.default_rng(0)
    _, tape = net.forward(critic_input(image.data)[None], rng)
    gz, _ = net.backward(tape, np.ones((1, 1)))
    return _pixel_gradient(image.data, gz[0])


def batch_score_input_gradients(net: Network, datas: list[np.ndarray], tape, coeff: np.ndarray):
    """Per-sample pixel gradients of coeff_s * D(s) from an existing tape."""
    gz, _ = net.backward(tape, np.asarray(coeff)[:, None])
    return np.stack([_pixel_gradient(d, g) for d, g in zip(datas, gz)])


# -- losses --------------------------------------------------------------


def gradient_penalty(net: Network, interp: list[np.ndarray], rng: np.random.Generator):
    """Mean (||grad_x D(x_hat)|| - 1)^2 over the batch and its weight grads."""
    b = len(interp)
    z = batch_critic_input(interp)
    _, tape = net.forward(z, rng)
    gz, _ = net.backward(tape, np.ones((b, 1)))
    grads_pix = np.stack([_pixel_gradient(d, g) for d, g in zip(interp, gz)])
    norms = np.sqrt((grads_pix**2).sum(axis=(1, 2, 3)))
    penalty = float(((norms - 1.0) ** 2).mean())

    # d penalty / dw = mean_s 2(n_s-1)/n_s * G_s . dG_s/dw, computed as the
    # weight gradient of a directional derivative of D along a_s = c_s G_s.
    coeff = 2.0 * (norms - 1.0) / np.maximum(norms, 1e-12)
    a = coeff[:, None, None, None] * grads_pix
    tangents = np.empty_like(z)
    tangents[:, :3] = a.transpose(0, 3, 1, 2)
    for s in range(b):
        tangents[s, 3:] = _plane_jvp(interp[s], a[s])[:, None, None]
    _, ttape = net.forward_tangent(tape, tangents)
    _, grads = net.backward_tangent(tape, ttape, np.full((b, 1), 1.0 / b))
    return penalty, grads


def gradient_penalty_plain(net: Network, x_hat: np.ndarray, rng: np.random.Generator):
    """Gradient penalty on raw network inputs (no image/plane structure)."""
    b = x_hat.shape[0]
    _, tape = net.forward(x_hat, rng)
    gx, _ = net.backward(tape, np.ones((b, 1)))
    axes = tuple(range(1, gx.ndim))
    norms = np.sqrt((gx**2).sum(axis=axes))
    penalty = float(((norms - 1.0) ** 2).mean())
    coeff = 2.0 * (norms - 1.0) / np.maximum(norms, 1e-12)
    tangents = coeff.reshape((-1,) + (1,) * (gx.ndim - 1)) * gx
    _, ttape = net.forward_tangent(tape, tangents)
    _, grads = net.backward_tangent(tape, ttape, np.full((b, 1), 1.0 / b))
    return penalty, grads


def wgan_gp_loss(
    net: Network,
    generated: np.ndarray,
    targets: np.ndarray,
    eps: np.ndarray,
    lam: float,
    rng: np.random.Generator,
):
    """The same loss on raw input tensors, without the image/plane wrapping.

    Useful for low-dimensional sanity checks where the scored objects are
    plain vectors rather than photographs.
    """
    b = generated.shape[0]
    d_gen, gen_tape = net.forward(generated, rng)
    d_tgt, tgt_tape = net.forward(targets, rng)
    _, g_gen = net.backward(gen_tape, np.full((b, 1), 1.0 / b))
    _, g_tgt = net.backward(tgt_tape, np.full((b, 1), -1.0 / b))
    e = np.asarray(eps).reshape((b,) + (1,) * (generated.ndim - 1))
    x_hat = e * generated + (1.0 - e) * targets
    penalty, g_pen = gradient_penalty_plain(net, x_hat, rng)
    emd = float(d_tgt.mean() - d_gen.mean())
    loss = -emd + lam * penalty
    grads = [gg + gt + lam * gp for gg, gt, gp in zip(g_gen, g_tgt, g_pen)]
    return loss, grads, {"emd": emd, "penalty": penalty}


def critic_loss(net: Network, batch: CriticBatch, lam: float, rng: np.random.Generator):
    """L_w = mean D(generated) - mean D(targets) + lam * gradient penalty.

    Returns (loss, weight gradients, parts) where parts carries the EMD
    estimate mean D(targets) - mean D(generated) and the penalty term.
    """
    b = len(batch.generated)
    gen = [img.data for img in batch.generated]
    tgt = [img.data for img in batch.targets]
    d_gen, gen_tape = score_batch(net, gen, rng)
    d_tgt, tgt_tape = score_batch(net, tgt, rng)
    _, g_gen = net.backward(gen_tape, np.full((b, 1), 1.0 / b))
    _, g_tgt = net.backward(tgt_tape, np.full((b, 1), -1.0 / b))

    eps = batch.interpolation_coefficients[:, None, None, None]
    interp = [e * g + (1.0 - e) * t for e, g, t in zip(eps, gen, tgt)]
    penalty, g_pen = gradient_penalty(net, interp, rng)

    emd = float(d_tgt.mean() - d_gen.mean())
    loss = -emd + lam * penalty
    grads = [gg + gt + lam * gp for gg, gt, gp in zip(g_gen, g_tgt, g_pen)]
    return loss, grads, {"emd": emd, "penalty": penalty}
