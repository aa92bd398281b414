"""A minimal CNN substrate with explicit reverse-mode gradients.

The shared backbone is four 4x4/stride-2 convolutions followed by a fully
connected layer down to a feature width, dropout, and a final head layer.
On a 64x64 input the spatial chain is 32 -> 16 -> 8 -> 4.

Besides the usual forward/backward passes, every layer supports a
*linearized* pass: propagating an input tangent through the network with
the nonlinearity masks frozen from a previous forward call, and
backpropagating a scalar built from that tangent into the weights. This is
what the WGAN gradient penalty needs (a derivative of a derivative); with
piecewise-linear activations the frozen-mask rule is exact almost
everywhere.
"""

from __future__ import annotations

import numpy as np

from .errors import NumericError
from .images import LinearImage


class Dense:
    def __init__(self, in_units: int, out_units: int, rng: np.random.Generator):
        bound = 1.0 / np.sqrt(in_units)
        self.w = rng.uniform(-bound, bound, (out_units, in_units))
        self.b = np.zeros(out_units)

    def params(self):
        return [self.w, self.b]

    def forward(self, x, rng):
        return x @ self.w.T + self.b, x

    def backward(self, cache, gy):
        return gy @ self.w, [gy.T @ cache, gy.sum(axis=0)]

    def forward_tangent(self, cache, tx):
        return tx @ self.w.T, tx

    def backward_tangent(self, cache, tcache, gty):
        return gty @ self.w, [gty.T @ tcache, np.zeros_like(self.b)]


class Conv:
    """4x4 kernel, stride 2, zero padding 1: exactly halves spatial extent."""

    K = 4
    STRIDE = 2
    PAD = 1

    def __init__(self, in_channels: int, out_channels: int, rng: np.random.Generator):
        fan_in = in_channels * self.K * self.K
        bound = 1.0 / np.sqrt(fan_in)
        self.w = rng.uniform(-bound, bound, (out_channels, in_channels, self.K, self.K))
        self.b = np.zeros(out_channels)

    def params(self):
        return [self.w, self.b]

    def _cols(self, x):
        b, c, h, w = x.shape
        oh, ow = h // 2, w // 2
        xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
        s = xp.strides
        view = np.lib.stride_tricks.as_strided(
            xp,
            shape=(b, c, oh, ow, self.K, self.K),
            strides=(s[0], s[1], 2 * s[2], 2 * s[3], s[2], s[3]),
        )
        return view.transpose(0, 2, 3, 1, 4, 5).reshape(b * oh * ow, c * self.K * self.K)

    def _forward(self, x, bias):
        b, c, h, w = x.shape
        oh, ow = h // 2, w // 2
        f = self.w.shape[0]
        cols = self._cols(x)
        y2 = cols @ self.w.reshape(f, -1).T
        if bias:
            y2 += self.b
        return y2.reshape(b, oh, ow, f).transpose(0, 3, 1, 2), cols

    def _backward(self, shape, cols, gy, bias):
        b, c, h, w = shape
        oh, ow = h // 2, w // 2
        f = self.w.shape[0]
        gy2 = gy.transpose(0, 2, 3, 1).reshape(-1, f)
        gw = (gy2.T @ cols).reshape(self.w.shape)
        gb = gy2.sum(axis=0) if bias else np.zeros_like(self.b)
        gcols = (gy2 @ self.w.reshape(f, -1)).reshape(b, oh, ow, c, self.K, self.K)
        gxp = np.zeros((b, c, h + 2, w + 2))
        for ki in range(self.K):
            for kj in range(self.K):
                gxp[:, :, ki : ki + 2 * oh - 1 : 2, kj : kj + 2 * ow - 1 : 2] += gcols[
                    :, :, :, :, ki, kj
                ].transpose(0, 3, 1, 2)
        return gxp[:, :, 1:-1, 1:-1], [gw, gb]

    def forward(self, x, rng):
        y, cols = self._forward(x, bias=True)
        return y, (x.shape, cols)

    def backward(self, cache, gy):
        shape, cols = cache
        return self._backward(shape, cols, gy, bias=True)

    def forward_tangent(self, cache, tx):
        ty, tcols = self._forward(tx, bias=False)
        return ty, tcols

    def backward_tangent(self, cache, tcache, gty):
        shape, _ = cache
        return self._backward(shape, tcache, gty, bias=False)


class LeakyReLU:
    def __init__(self, slope: float = 0.2):
        self.slope = slope

    def params(self):
        return []

    def forward(self, x, rng):
        mask = np.where(x >= 0, 1.0, self.slope)
        return x * mask, mask

    def backward(self, cache, gy):
        return gy * cache, []

    def forward_tangent(self, cache, tx):
        return tx * cache, None

    def backward_tangent(self, cache, tcache, gty):
        return gty * cache, []


class Dropout:
    """Inverted dropout; per the network design it stays active at test time."""

    def __init__(self, rate: float):
        if not 0.0 <= rate < 1.0:
            raise ValueError("dropout rate must be in [0, 1)")
        self.rate = rate

    def params(self):
        return []

    def forward(self, x, rng):
        if self.rate == 0.0:
            return x, None
        mask = (rng.random(x.shape) >= self.rate) / (1.0 - self.rate)
        return x * mask, mask

    def backward(self, cache, gy):
        return gy if cache is None else gy * cache, []

    def forward_tangent(self, cache, tx):
        return (tx if cache is None else tx * cache), None

    def backward_tangent(self, cache, tcache, gty):
        return (gty if cache is None else gty * cache), []


class Flatten:
    def params(self):
        return []

    def forward(self, x, rng):
        return x.reshape(x.shape[0], -1), x.shape

    def backward(self, cache, gy):
        return gy.reshape(cache), []

    def forward_tangent(self, cache, tx):
        return tx.reshape(tx.shape[0], -1), None

    def backward_tangent(self, cache, tcache, gty):
        return gty.reshape(cache), []


class Network:
    """An ordered stack of layers with explicit tapes."""

    def __init__(self, layers: list):
        self.layers = layers

    def params(self) -> list[np.ndarray]:
        out = []
        for layer in self.layers:
            out.extend(layer.params())
        return out

    def forward(self, x: np.ndarray, rng: np.random.Generator):
        """Run the stack; returns (output, tape) for a later backward call."""
        tape = []
        for layer in self.layers:
            x, cache = layer.forward(x, rng)
            tape.append(cache)
        return x, tape

    def backward(self, tape, gy):
        """Gradients of sum(upstream * output) w.r.t. weights and input."""
        grads = []
        for layer, cache in zip(reversed(self.layers), reversed(tape)):
            gy, layer_grads = layer.backward(cache, gy)
            grads[:0] = layer_grads
        return gy, grads

    def forward_tangent(self, tape, tx):
        """Propagate an input tangent with masks frozen from `tape`."""
        ttape = []
        for layer, cache in zip(self.layers, tape):
            tx, tcache = layer.forward_tangent(cache, tx)
            ttape.append(tcache)
        return tx, ttape

    def backward_tangent(self, tape, ttape, gty):
        """Backpropagate a function of the tangent output into the weights."""
        grads = []
        for layer, cache, tcache in zip(reversed(self.layers), reversed(tape), reversed(ttape)):
            gty, layer_grads = layer.backward_tangent(cache, tcache, gty)
            grads[:0] = layer_grads
        return gty, grads


def build_backbone(
    in_channels: int,
    out_units: int,
    rng: np.random.Generator,
    conv_widths: tuple[int, int, int, int] = (16, 32, 64, 128),
    fc_width: int = 128,
    dropout_rate: float = 0.5,
    input_side: int = 64,
    head: bool = True,
) -> Network:
    """The shared CNN: conv x4 (4x4, stride 2), FC bottleneck, dropout, head."""
    layers = []
    prev = in_channels
    for width in conv_widths:
        layers += [Conv(prev, width, rng), LeakyReLU()]
        prev = width
    spatial = input_side // 16
    layers += [
        Flatten(),
        Dense(prev * spatial * spatial, fc_width, rng),
        LeakyReLU(),
        Dropout(dropout_rate),
    ]
    if head:
        layers.append(Dense(fc_width, out_units, rng))
    return Network(layers)


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


class Adam:
    """Adam with an exponential learning-rate decay to 1e-3 of base."""

    BETA1 = 0.9
    BETA2 = 0.999
    EPS = 1e-8

    def __init__(self, params: list[np.ndarray], base_lr: float, total_iterations: int):
        self.params = params
        self.base_lr = base_lr
        self.total_iterations = max(1, total_iterations)
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.step_count = 0

    def effective_lr(self, iteration: int) -> float:
        frac = min(1.0, iteration / self.total_iterations)
        return self.base_lr * 0.001**frac

    def step(self, grads: list[np.ndarray], iteration: int) -> None:
        """In-place update; `iteration` drives the decay schedule."""
        if len(grads) != len(self.params):
            raise ValueError("gradient list does not match parameter list")
        lr = self.effective_lr(iteration)
        self.step_count += 1
        t = self.step_count
        bias1 = 1.0 - self.BETA1**t
        bias2 = 1.0 - self.BETA2**t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            if not np.all(np.isfinite(g)):
                raise NumericError("non-finite gradient in Adam step")
            m *= self.BETA1
            m += (1 - self.BETA1) * g
            v *= self.BETA2
            v += (1 - self.BETA2) * g * g
            p -= lr * (m / bias1) / (np.sqrt(v / bias2) + self.EPS)


def input_with_planes(image64: LinearImage, planes: list[float]) -> np.ndarray:
    """(3 + len(planes), 64, 64) tensor: RGB plus constant feature planes."""
    if image64.width != 64 or image64.height != 64:
        raise ValueError(f"expected a 64x64 image, got {image64.width}x{image64.height}")
    return planes_tensor(image64.data, planes)


def planes_tensor(data: np.ndarray, planes: list[float]) -> np.ndarray:
    h, w, _ = data.shape
    chans = [data.transpose(2, 0, 1)]
    if planes:
        chans.append(np.broadcast_to(np.asarray(planes, dtype=np.float64)[:, None, None], (len(planes), h, w)))
    return np.ascontiguousarray(np.concatenate(chans, axis=0))
