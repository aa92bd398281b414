import numpy as np
import pytest

from exposure.critic import (
    CriticBatch,
    batch_score_input_gradients,
    critic_input,
    critic_loss,
    gradient_penalty,
    gradient_penalty_plain,
    score,
    score_batch,
    score_input_gradient,
    wgan_gp_loss,
)
from exposure.images import LinearImage, global_features
from exposure.model import AgentModel, ModelConfig
from exposure.nn import Adam, Dense, Flatten, LeakyReLU, Network

SMALL = ModelConfig(conv_widths=(2, 4, 4, 8), fc_width=8)


@pytest.fixture(scope="module")
def net():
    return AgentModel(SMALL, seed=21).critic


def rand_image(seed, lo=0.05, hi=0.95):
    rng = np.random.default_rng(seed)
    return LinearImage(rng.uniform(lo, hi, (64, 64, 3)))


class TestInput:
    def test_channel_layout(self):
        img = rand_image(0)
        z = critic_input(img.data)
        assert z.shape == (6, 64, 64)
        f = global_features(img)
        assert np.allclose(z[3], f.luminance)
        assert np.allclose(z[4], f.contrast)
        assert np.allclose(z[5], f.saturation)

    def test_score_is_deterministic(self, net):
        img = rand_image(1)
        assert score(net, img) == score(net, img)


class TestInputGradient:
    def test_matches_finite_differences(self, net):
        img = rand_image(2)
        g = score_input_gradient(net, img)
        assert g.shape == (64, 64, 3)
        h = 1e-5
        worst = 0.0
        for (i, j, c) in [(0, 0, 0), (10, 50, 1), (63, 63, 2), (31, 7, 0)]:
            dp = img.data.copy()
            dp[i, j, c] += h
            dm = img.data.copy()
            dm[i, j, c] -= h
            fd = (score(net, LinearImage(dp)) - score(net, LinearImage(dm))) / (2 * h)
            # FD roundoff dominates when the gradient itself is ~1e-8
            worst = max(worst, abs(fd - g[i, j, c]) / max(abs(fd), 1e-6))
        assert worst < 1e-5

    def test_feature_chain_contributes(self, net):
        # zeroing the plane input weights must change the pixel gradient
        img = rand_image(3)
        g_full = score_input_gradient(net, img)
        conv1 = net.layers[0]
        saved = conv1.w[:, 3:].copy()
        conv1.w[:, 3:] = 0.0
        g_rgb = score_input_gradient(net, img)
        conv1.w[:, 3:] = saved
        assert not np.allclose(g_full, g_rgb)

    def test_batch_gradients_scale_with_coeff(self, net):
        datas = [rand_image(4).data, rand_image(5).data]
        _, tape = score_batch(net, datas, np.random.default_rng(0))
        g1 = batch_score_input_gradients(net, datas, tape, np.array([1.0, 1.0]))
        g2 = batch_score_input_gradients(net, datas, tape, np.array([2.0, -1.0]))
        assert np.allclose(g2[0], 2.0 * g1[0])
        assert np.allclose(g2[1], -g1[1])


class TestGradientPenalty:
    def test_weight_gradients_match_fd(self, net):
        interp = [rand_image(6).data, rand_image(7).data]
        pen, grads = gradient_penalty(net, interp, np.random.default_rng(0))
        assert pen >= 0.0

        def f():
            p, _ = gradient_penalty(net, interp, np.random.default_rng(0))
            return p

        params = net.params()
        rs = np.random.default_rng(8)
        worst = 0.0
        checked = 0
        while checked < 8:
            pi = int(rs.integers(len(params)))
            p = params[pi]
            if p.ndim == 1:
                continue  # biases: exactly zero analytic gradient a.e.
            idx = np.unravel_index(int(rs.integers(p.size)), p.shape)
            orig = p[idx]
            h = 1e-6
            p[idx] = orig + h
            fp = f()
            p[idx] = orig - h
            fm = f()
            p[idx] = orig
            fd = (fp - fm) / (2 * h)
            an = grads[pi][idx]
            worst = max(worst, abs(fd - an) / max(abs(fd), abs(an), 1e-8))
            checked += 1
        assert worst < 1e-4

    def test_bias_gradients_zero(self, net):
        # the input gradient of a piecewise-linear net does not depend on
        # biases almost everywhere
        interp = [rand_image(9).data]
        _, grads = gradient_penalty(net, interp, np.random.default_rng(0))
        for p, g in zip(net.params(), grads):
            if p.ndim == 1:
                assert np.all(g == 0.0)

    def test_linear_critic_has_constant_gradient(self):
        # for a purely linear critic the pixel-gradient norm is constant, so
        # the penalty is flat in the inputs
        rng = np.random.default_rng(10)
        net = Network([Flatten(), Dense(6 * 64 * 64, 1, rng)])
        a = [rand_image(11).data]
        b = [rand_image(12).data]
        # suppress the feature-plane chain so the input is truly linear
        net.layers[1].w[0, 3 * 64 * 64 :] = 0.0
        pa, _ = gradient_penalty(net, a, np.random.default_rng(0))
        pb, _ = gradient_penalty(net, b, np.random.default_rng(0))
        assert np.isclose(pa, pb, atol=1e-12)


class TestPlainGp:
    def test_matches_fd_on_vectors(self):
        rng = np.random.default_rng(13)
        net = Network([Dense(3, 8, rng), LeakyReLU(), Dense(8, 1, rng)])
        x = rng.normal(size=(4, 3))
        pen, grads = gradient_penalty_plain(net, x, np.random.default_rng(0))

        def f():
            p, _ = gradient_penalty_plain(net, x, np.random.default_rng(0))
            return p

        params = net.params()
        worst = 0.0
        for pi in (0, 2):
            p = params[pi]
            idx = np.unravel_index(int(rng.integers(p.size)), p.shape)
            orig = p[idx]
            h = 1e-6
            p[idx] = orig + h
            fp = f()
            p[idx] = orig - h
            fm = f()
            p[idx] = orig
            fd = (fp - fm) / (2 * h)
            an = grads[pi][idx]
            worst = max(worst, abs(fd - an) / max(abs(fd), abs(an), 1e-8))
        assert worst < 1e-6


class TestLoss:
    def test_batch_validation(self):
        with pytest.raises(ValueError):
            CriticBatch([rand_image(14)], [], np.array([]))
        with pytest.raises(ValueError):
            CriticBatch([rand_image(15)], [rand_image(16)], np.array([0.5, 0.5]))

    def test_loss_parts_identity(self, net):
        batch = CriticBatch(
            [rand_image(17), rand_image(18)],
            [rand_image(19), rand_image(20)],
            np.array([0.3, 0.8]),
        )
        loss, grads, parts = critic_loss(net, batch, 10.0, np.random.default_rng(0))
        assert np.isclose(loss, -parts["emd"] + 10.0 * parts["penalty"])
        assert len(grads) == len(net.params())
        assert all(np.all(np.isfinite(g)) for g in grads)

    def test_update_direction_separates(self, net_factory=None):
        # a few critic steps must raise D on targets relative to generated
        rng = np.random.default_rng(22)
        net = AgentModel(SMALL, seed=23).critic
        gen = [rand_image(s, lo=0.0, hi=0.3) for s in range(24, 28)]
        tgt = [rand_image(s, lo=0.6, hi=1.0) for s in range(28, 32)]
        opt = Adam(net.params(), 1e-3, total_iterations=10**9)
        emd0 = None
        for it in range(30):
            batch = CriticBatch(gen, tgt, rng.uniform(0, 1, 4))
            loss, grads, parts = critic_loss(net, batch, 10.0, rng)
            if emd0 is None:
                emd0 = parts["emd"]
            opt.step(grads, 0)
        assert parts["emd"] > emd0


class TestWganToy:
    def test_point_masses_reach_unit_emd(self):
        rng = np.random.default_rng(0)
        net = Network(
            [Dense(1, 16, rng), LeakyReLU(), Dense(16, 16, rng), LeakyReLU(), Dense(16, 1, rng)]
        )
        opt = Adam(net.params(), 1e-3, total_iterations=10**9)
        b = 32
        parts = None
        for _ in range(600):
            loss, grads, parts = wgan_gp_loss(
                net, np.zeros((b, 1)), np.ones((b, 1)), rng.uniform(0, 1, b), 10.0, rng
            )
            opt.step(grads, 0)
        assert 0.9 <= parts["emd"] <= 1.1
