"""Actor-critic machinery: episode state, the stochastic filter-selection
policy, the deterministic parameter policy, the value network, TD errors,
and the two policy-gradient estimators."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .filters import ARITY, FILTER_KINDS, N_FILTERS, EditScript, FilterAction, apply_filter
from .images import LinearImage
from .model import AgentModel
from .nn import planes_tensor, softmax

N_STEPS = 5


@dataclass
class AgentState:
    """One in-flight retouching episode at the 64x64 proxy resolution."""

    image: LinearImage
    used_filters: np.ndarray = field(default_factory=lambda: np.zeros(N_FILTERS, dtype=bool))
    step_index: int = 0
    full_image: LinearImage | None = None

    @property
    def finished(self) -> bool:
        return self.step_index >= N_STEPS

    def planes(self) -> list[float]:
        return [float(u) for u in self.used_filters] + [self.step_index / N_STEPS]

    def advanced(self, action: FilterAction, image: LinearImage) -> "AgentState":
        used = self.used_filters.copy()
        used[FILTER_KINDS.index(action.kind)] = True
        return AgentState(image, used, self.step_index + 1, self.full_image)


@dataclass
class Trajectory:
    """States, actions, rewards, and returns of one finished episode."""

    states: list[AgentState]
    actions: list[FilterAction]
    rewards: list[float]
    gamma: float = 1.0

    @property
    def returns(self) -> list[float]:
        out = [0.0] * len(self.rewards)
        acc = 0.0
        for k in reversed(range(len(self.rewards))):
            acc = self.rewards[k] + self.gamma * acc
            out[k] = acc
        return out


def policy_input(state: AgentState) -> np.ndarray:
    return planes_tensor(state.image.data, state.planes())


def batch_policy_input(states: list[AgentState]) -> np.ndarray:
    return np.stack([policy_input(s) for s in states])


def sample_filter(dist: np.ndarray, rng: np.random.Generator) -> int:
    """Sample a filter index from the policy distribution."""
    return int(rng.choice(N_FILTERS, p=dist / dist.sum()))


def td_error(r: float, v_s: float, v_next: float, terminal: bool) -> float:
    """delta = r + gamma*V(s') - V(s), gamma = 1, bootstrap dropped at terminal."""
    return r + (0.0 if terminal else v_next) - v_s


class Agent:
    """Batched forward/backward passes over an AgentModel.

    Dropout is part of the generator's noise and stays active at inference;
    every pass takes an explicit rng so runs are reproducible.
    """

    def __init__(self, model: AgentModel):
        self.model = model

    # -- pi_1 ------------------------------------------------------------

    def policy1_batch(self, x: np.ndarray, rng: np.random.Generator):
        logits, tape = self.model.policy1.forward(x, rng)
        return softmax(logits), tape

    def policy1_distribution(self, state: AgentState, rng: np.random.Generator) -> np.ndarray:
        probs, _ = self.policy1_batch(policy_input(state)[None], rng)
        return probs[0]

    def policy1_gradients(self, tape, probs, a1, advantage) -> list[np.ndarray]:
        """Ascent direction: mean over the batch of adv * grad log pi1(a1)."""
        b = probs.shape[0]
        glogits = -probs * np.asarray(advantage)[:, None]
        glogits[np.arange(b), a1] += advantage
        _, grads = self.model.policy1.backward(tape, glogits / b)
        return grads

    # -- pi_2 ------------------------------------------------------------

    def policy2_batch(self, x: np.ndarray, a1: np.ndarray, rng: np.random.Generator):
        """Raw parameter vectors for each sample's chosen filter head."""
        feats, trunk_tape = self.model.policy2_trunk.forward(x, rng)
        raws = [None] * len(a1)
        head_cache = {}
        for k in sorted(set(int(v) for v in a1)):
            idx = np.flatnonzero(a1 == k)
            head = self.model.policy2_heads[k]
            z = feats[idx] @ head.w.T + head.b
            raw = np.tanh(z)
            for j, i in enumerate(idx):
                raws[i] = raw[j]
            head_cache[k] = (idx, raw)
        return raws, (trunk_tape, feats, head_cache)

    def policy2_params(self, state: AgentState, a1: int, rng: np.random.Generator) -> np.ndarray:
        raws, _ = self.policy2_batch(policy_input(state)[None], np.array([a1]), rng)
        return raws[0]

    def policy2_gradients(self, cache, dq_da2: list[np.ndarray]) -> list[np.ndarray]:
        """Ascent direction: mean over batch of dQ/da2 chained through the
        tanh heads and shared trunk (deterministic policy gradient)."""
        trunk_tape, feats, head_cache = cache
        b = feats.shape[0]
        gfeats = np.zeros_like(feats)
        head_grads = {}
        for k, (idx, raw) in head_cache.items():
            head = self.model.policy2_heads[k]
            dq = np.stack([np.asarray(dq_da2[i]) for i in idx])
            gz = dq * (1.0 - raw * raw) / b
            head_grads[k] = [gz.T @ feats[idx], gz.sum(axis=0)]
            gfeats[idx] += gz @ head.w
        _, trunk_grads = self.model.policy2_trunk.backward(trunk_tape, gfeats)
        grads = list(trunk_grads)
        for k, head in enumerate(self.model.policy2_heads):
            grads.extend(head_grads.get(k, [np.zeros_like(head.w), np.zeros_like(head.b)]))
        return grads

    # -- value -----------------------------------------------------------

    def value_batch(self, x: np.ndarray, rng: np.random.Generator):
        v, tape = self.model.value.forward(x, rng)
        return v[:, 0], tape

    def value(self, state: AgentState, rng: np.random.Generator) -> float:
        v, _ = self.value_batch(policy_input(state)[None], rng)
        return float(v[0])

    def value_gradients(self, tape, delta) -> list[np.ndarray]:
        """Descent direction for L_v = E[delta^2 / 2], semi-gradient form:
        the bootstrap target is treated as constant, giving -delta * grad V."""
        b = len(delta)
        gy = -np.asarray(delta)[:, None] / b
        _, grads = self.model.value.backward(tape, gy)
        return grads

    def value_input_gradients(self, tape, coeff: np.ndarray) -> np.ndarray:
        """Per-sample pixel gradient of coeff * V(s): (B, H, W, 3)."""
        gx, _ = self.model.value.backward(tape, np.asarray(coeff)[:, None])
        return gx[:, :3].transpose(0, 2, 3, 1)

    # -- episodes ---------------------------------------------------------

    def select_action(
        self, state: AgentState, rng: np.random.Generator, sample: bool = False
    ) -> tuple[FilterAction, np.ndarray]:
        """Pick the next action (greedy argmax by default) and return it with
        the full pi_1 probability table for tracing."""
        probs = self.policy1_distribution(state, rng)
        a1 = sample_filter(probs, rng) if sample else int(np.argmax(probs))
        raw = self.policy2_params(state, a1, rng)
        return FilterAction(FILTER_KINDS[a1], raw), probs

    def run_episode(
        self, image64: LinearImage, rng: np.random.Generator, sample: bool = False
    ) -> tuple[EditScript, list[np.ndarray]]:
        """Run all five steps on a 64x64 proxy; returns the edit script and
        the per-step pi_1 probability tables."""
        state = AgentState(image64)
        actions, tables = [], []
        while not state.finished:
            action, probs = self.select_action(state, rng, sample=sample)
            state = state.advanced(action, apply_filter(action, state.image))
            actions.append(action)
            tables.append(probs)
        return EditScript(steps=actions), tables
