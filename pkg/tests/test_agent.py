import numpy as np
import pytest

from exposure.agent import (
    N_STEPS,
    Agent,
    AgentState,
    Trajectory,
    batch_policy_input,
    policy_input,
    sample_filter,
    td_error,
)
from exposure.errors import CheckpointError
from exposure.filters import ARITY, FILTER_KINDS, FilterAction, FilterKind, apply_filter
from exposure.images import LinearImage
from exposure.model import (
    CRITIC_IN_CHANNELS,
    POLICY_IN_CHANNELS,
    AgentModel,
    ModelConfig,
    arch_hash,
    load_checkpoint,
    save_checkpoint,
)

SMALL = ModelConfig(conv_widths=(2, 4, 4, 8), fc_width=8)


@pytest.fixture(scope="module")
def model():
    return AgentModel(SMALL, seed=11)


def rand_state(seed=0):
    rng = np.random.default_rng(seed)
    return AgentState(LinearImage(rng.uniform(0, 1, (64, 64, 3))))


class TestAgentState:
    def test_initial(self):
        s = rand_state()
        assert not s.finished
        assert s.step_index == 0
        assert not s.used_filters.any()

    def test_planes_layout(self):
        s = rand_state()
        planes = s.planes()
        assert len(planes) == 9
        assert planes == [0.0] * 9

    def test_advanced_tracks_usage_and_step(self):
        s = rand_state()
        action = FilterAction(FilterKind.GAMMA, np.array([0.2]))
        s2 = s.advanced(action, apply_filter(action, s.image))
        assert s2.step_index == 1
        assert s2.used_filters[1]
        assert s2.used_filters.sum() == 1
        assert s2.planes()[1] == 1.0
        assert np.isclose(s2.planes()[-1], 1 / N_STEPS)

    def test_finished_after_n_steps(self):
        s = rand_state()
        action = FilterAction(FilterKind.EXPOSURE, np.array([0.0]))
        for _ in range(N_STEPS):
            assert not s.finished
            s = s.advanced(action, s.image)
        assert s.finished

    def test_policy_input_channels(self):
        x = policy_input(rand_state())
        assert x.shape == (POLICY_IN_CHANNELS, 64, 64)


class TestTrajectory:
    def test_returns_recurrence(self):
        t = Trajectory(states=[], actions=[], rewards=[1.0, 2.0, 3.0], gamma=1.0)
        assert t.returns == [6.0, 5.0, 3.0]

    def test_discounted_returns(self):
        t = Trajectory(states=[], actions=[], rewards=[1.0, 1.0], gamma=0.5)
        assert t.returns == [1.5, 1.0]


class TestTdError:
    def test_formula(self):
        assert td_error(1.0, 0.3, 0.5, terminal=False) == pytest.approx(1.2)

    def test_terminal_drops_bootstrap(self):
        assert td_error(1.0, 0.3, 0.5, terminal=True) == pytest.approx(0.7)


class TestSampling:
    def test_sample_filter_respects_distribution(self):
        rng = np.random.default_rng(0)
        dist = np.zeros(8)
        dist[3] = 1.0
        assert all(sample_filter(dist, rng) == 3 for _ in range(10))

    def test_sample_filter_frequencies(self):
        rng = np.random.default_rng(1)
        dist = np.array([0.5, 0.5, 0, 0, 0, 0, 0, 0])
        draws = [sample_filter(dist, rng) for _ in range(2000)]
        assert set(draws) <= {0, 1}
        assert abs(np.mean(draws) - 0.5) < 0.05


class TestPolicies:
    def test_policy1_distribution_valid(self, model):
        agent = Agent(model)
        probs = agent.policy1_distribution(rand_state(), np.random.default_rng(0))
        assert probs.shape == (8,)
        assert np.isclose(probs.sum(), 1.0)
        assert np.all(probs > 0)

    def test_policy2_arity_per_filter(self, model):
        agent = Agent(model)
        s = rand_state()
        for k, kind in enumerate(FILTER_KINDS):
            raw = agent.policy2_params(s, k, np.random.default_rng(0))
            assert raw.shape == (ARITY[kind],)
            assert np.all(np.abs(raw) < 1.0)

    def test_value_scalar(self, model):
        agent = Agent(model)
        v = agent.value(rand_state(), np.random.default_rng(0))
        assert isinstance(v, float) and np.isfinite(v)

    def test_select_action_greedy_picks_argmax(self, model):
        agent = Agent(model)
        s = rand_state()
        action, probs = agent.select_action(s, np.random.default_rng(3))
        assert action.kind == FILTER_KINDS[int(np.argmax(probs))]

    def test_run_episode_five_steps(self, model):
        agent = Agent(model)
        script, tables = agent.run_episode(rand_state().image, np.random.default_rng(4))
        assert len(script.steps) == N_STEPS
        assert len(tables) == N_STEPS
        for probs in tables:
            assert np.isclose(probs.sum(), 1.0)

    def test_run_episode_deterministic_under_seed(self, model):
        agent = Agent(model)
        img = rand_state().image
        s1, _ = agent.run_episode(img, np.random.default_rng(5))
        s2, _ = agent.run_episode(img, np.random.default_rng(5))
        assert s1.to_json() == s2.to_json()

    def test_policy1_gradient_direction(self, model):
        # positive advantage raises log-probability of the taken action
        agent = Agent(model)
        x = batch_policy_input([rand_state(6)])
        probs, tape = agent.policy1_batch(x, np.random.default_rng(0))
        a1 = np.array([2])
        grads = agent.policy1_gradients(tape, probs, a1, np.array([1.0]))
        lr = 1e-3
        for p, g in zip(model.policy1.params(), grads):
            p += lr * g
        probs2, _ = agent.policy1_batch(x, np.random.default_rng(0))
        for p, g in zip(model.policy1.params(), grads):
            p -= lr * g
        assert probs2[0, 2] > probs[0, 2]


class TestCheckpoint:
    def test_roundtrip(self, model, tmp_path):
        path = tmp_path / "m.ckpt"
        save_checkpoint(model, path)
        back = load_checkpoint(path)
        for (na, pa), (nb, pb) in zip(model.sections(), back.sections()):
            assert na == nb
            for a, b in zip(pa, pb):
                assert np.allclose(a, b, atol=1e-6)  # float32 storage

    def test_rejects_bad_magic(self, tmp_path):
        path = tmp_path / "bad.ckpt"
        path.write_bytes(b"NOTACKPT" + bytes(100))
        with pytest.raises(CheckpointError):
            load_checkpoint(path)

    def test_rejects_truncated(self, model, tmp_path):
        path = tmp_path / "m.ckpt"
        save_checkpoint(model, path)
        raw = path.read_bytes()
        path.write_bytes(raw[:-100])
        with pytest.raises(CheckpointError):
            load_checkpoint(path)

    def test_rejects_tampered_header(self, model, tmp_path):
        path = tmp_path / "m.ckpt"
        save_checkpoint(model, path)
        raw = bytearray(path.read_bytes())
        # flip a byte inside the JSON header
        raw[20] ^= 0xFF
        path.write_bytes(bytes(raw))
        with pytest.raises(CheckpointError):
            load_checkpoint(path)

    def test_arch_hash_sensitive_to_config(self):
        a = AgentModel(SMALL, seed=0).arch()
        b = AgentModel(ModelConfig(conv_widths=(2, 4, 4, 8), fc_width=16), seed=0).arch()
        assert arch_hash(a) != arch_hash(b)

    def test_missing_file(self, tmp_path):
        with pytest.raises(CheckpointError):
            load_checkpoint(tmp_path / "none.ckpt")


class TestModel:
    def test_input_channel_counts(self):
        assert POLICY_IN_CHANNELS == 12
        assert CRITIC_IN_CHANNELS == 6

    def test_deterministic_for_seed(self):
        a = AgentModel(SMALL, seed=3)
        b = AgentModel(SMALL, seed=3)
        for (_, pa), (_, pb) in zip(a.sections(), b.sections()):
            for x, y in zip(pa, pb):
                assert np.array_equal(x, y)

    def test_heads_match_arities(self, model):
        for kind, head in zip(FILTER_KINDS, model.policy2_heads):
            assert head.w.shape == (ARITY[kind], SMALL.fc_width)

    def test_critic_has_no_dropout(self, model):
        from exposure.nn import Dropout

        rates = [l.rate for l in model.critic.layers if isinstance(l, Dropout)]
        assert rates == [0.0]
