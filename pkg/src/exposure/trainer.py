"""The training loop: trajectory buffer, reward assembly, and interleaved
discriminator / policy / value updates.

Each outer iteration first takes n_critic WGAN-GP steps on finished-vs-
target batches, then samples b buffer entries (evicting finished episodes
into a bounded pool and starting fresh ones from the raw set), advances
each by one filter action, and updates the filter policy (advantage-
weighted likelihood), the parameter policy (deterministic policy
gradient), and the value network (semi-gradient TD regression).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from .agent import (
    N_STEPS,
    Agent,
    AgentState,
    batch_policy_input,
    sample_filter,
)
from .critic import CriticBatch, batch_score_input_gradients, critic_loss, score_batch
from .errors import DataError, NumericError
from .evaluate import load_directory
from .filters import FILTER_KINDS, N_FILTERS, FilterAction, apply_filter, filter_vjp
from .images import LinearImage, downsample
from .model import AgentModel, ModelConfig, save_checkpoint
from .nn import Adam

PROXY_SIDE = 64


@dataclass(frozen=True)
class TrainerConfig:
    batch_size: int = 64
    lr_actor: float = 1.5e-5
    lr_critic: float = 5e-5
    lr_value: float = 5e-4
    n_critic: int = 5
    buffer_capacity: int = 2048
    steps_per_episode: int = N_STEPS
    gamma: float = 1.0
    entropy_coefficient: float = 0.05
    reuse_penalty: float = 1.0
    gp_lambda: float = 10.0
    total_iterations: int = 20000
    seed: int = 0

    def __post_init__(self):
        for f in fields(self):
            # gamma = 0 (fully myopic) and zero penalty weights are valid
            if f.name in ("seed", "gamma", "entropy_coefficient", "reuse_penalty"):
                if getattr(self, f.name) < 0:
                    raise ValueError(f"{f.name} must be non-negative")
            elif getattr(self, f.name) <= 0:
                raise ValueError(f"{f.name} must be positive")
        if not self.gamma <= 1.0:
            raise ValueError("gamma must not exceed 1")
        if self.batch_size > self.buffer_capacity:
            raise ValueError("batch_size must not exceed buffer_capacity")


def parse_config(path: str | Path) -> TrainerConfig:
    """Flat key=value text config; unknown keys are rejected."""
    types = {f.name: f.type for f in fields(TrainerConfig)}
    values = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise DataError(f"{path}:{lineno}: expected key = value")
        key, _, text = (part.strip() for part in line.partition("="))
        if key not in types:
            raise DataError(f"{path}:{lineno}: unknown config key {key!r}")
        try:
            values[key] = int(text) if types[key] == "int" else float(text)
        except ValueError as exc:
            raise DataError(f"{path}:{lineno}: bad value for {key}: {text!r}") from exc
    try:
        return TrainerConfig(**values)
    except ValueError as exc:
        raise DataError(str(exc)) from exc


@dataclass(frozen=True)
class RewardBreakdown:
    critic_delta: float
    entropy_penalty: float
    reuse_penalty: float

    @property
    def total(self) -> float:
        return self.critic_delta + self.entropy_penalty + self.reuse_penalty


def compute_reward(
    d_before: float,
    d_after: float,
    dist: np.ndarray,
    reused: bool,
    entropy_coefficient: float = 0.05,
    reuse_penalty: float = 1.0,
) -> RewardBreakdown:
    """R' = (D(s') - D(s)) - c*(log|F| + sum p log p) - [reused]."""
    p = np.asarray(dist)
    plogp = float(np.where(p > 0, p * np.log(np.maximum(p, 1e-300)), 0.0).sum())
    return RewardBreakdown(
        critic_delta=d_after - d_before,
        entropy_penalty=-entropy_coefficient * (math.log(N_FILTERS) + plogp),
        reuse_penalty=-reuse_penalty if reused else 0.0,
    )


class TrajectoryBuffer:
    """Fixed-capacity pool of in-flight episodes, stepped out of order."""

    def __init__(self, entries: list[AgentState]):
        self.entries = list(entries)

    @property
    def capacity(self) -> int:
        return len(self.entries)

    @property
    def finished_count(self) -> int:
        return sum(1 for e in self.entries if e.finished)

    def sample(self, b: int, rng: np.random.Generator) -> np.ndarray:
        """Slot indices of a uniform sample without replacement."""
        if b > self.capacity:
            raise ValueError("batch larger than buffer capacity")
        return rng.choice(self.capacity, size=b, replace=False)

    def replace(self, indices: np.ndarray, states: list[AgentState]) -> None:
        for i, state in zip(indices, states):
            self.entries[int(i)] = state


def _proxy(image: LinearImage) -> LinearImage:
    if image.width == PROXY_SIDE and image.height == PROXY_SIDE:
        return image
    return downsample(image, PROXY_SIDE)


class Trainer:
    def __init__(
        self,
        config: TrainerConfig,
        raws: list[LinearImage],
        targets: list[LinearImage],
        model: AgentModel,
    ):
        if not raws or not targets:
            raise DataError("raw and target datasets must be non-empty")
        self.config = config
        self.raws = [_proxy(img) for img in raws]
        self.targets = [_proxy(img) for img in targets]
        self.model = model
        self.agent = Agent(model)
        self.rng = np.random.default_rng(config.seed)
        self.buffer = TrajectoryBuffer(
            [self._fresh_state() for _ in range(config.buffer_capacity)]
        )
        self.finished_pool: list[LinearImage] = []
        total = config.total_iterations
        self.opt_critic = Adam(model.critic.params(), config.lr_critic, total)
        self.opt_policy1 = Adam(model.policy1.params(), config.lr_actor, total)
        self.opt_policy2 = Adam(model.actor_params(), config.lr_actor, total)
        self.opt_value = Adam(model.value.params(), config.lr_value, total)

    def _fresh_state(self) -> AgentState:
        return AgentState(self.raws[int(self.rng.integers(len(self.raws)))])

    def _push_finished(self, image: LinearImage) -> None:
        self.finished_pool.append(image)
        if len(self.finished_pool) > self.config.buffer_capacity:
            del self.finished_pool[0]

    def _generated_batch(self, b: int) -> list[LinearImage]:
        # until enough episodes have finished, fall back to current buffer
        # states so every outer iteration still takes n_critic critic steps
        pool = self.finished_pool if len(self.finished_pool) >= b else [
            e.image for e in self.buffer.entries
        ]
        idx = self.rng.choice(len(pool), size=b, replace=False)
        return [pool[int(i)] for i in idx]

    def critic_step(self, iteration: int) -> float:
        b = self.config.batch_size
        generated = self._generated_batch(b)
        tgt_idx = self.rng.integers(len(self.targets), size=b)
        batch = CriticBatch(
            generated,
            [self.targets[int(i)] for i in tgt_idx],
            self.rng.uniform(0.0, 1.0, b),
        )
        loss, grads, _ = critic_loss(self.model.critic, batch, self.config.gp_lambda, self.rng)
        self.opt_critic.step(grads, iteration)
        return loss

    def actor_step(self, iteration: int) -> dict:
        cfg = self.config
        b = cfg.batch_size
        slots = self.buffer.sample(b, self.rng)
        states = []
        for i in slots:
            entry = self.buffer.entries[int(i)]
            if entry.finished:
                self._push_finished(entry.image)
                entry = self._fresh_state()
            states.append(entry)

        x = batch_policy_input(states)
        probs, p1_tape = self.agent.policy1_batch(x, self.rng)
        a1 = np.array([sample_filter(p, self.rng) for p in probs])
        raws, p2_cache = self.agent.policy2_batch(x, a1, self.rng)
        actions = [FilterAction(FILTER_KINDS[k], raw) for k, raw in zip(a1, raws)]
        next_states = [
            s.advanced(act, apply_filter(act, s.image))
            for s, act in zip(states, actions)
        ]
        terminal = np.array([s.finished for s in next_states])

        d_before, _ = score_batch(self.model.critic, [s.image.data for s in states], self.rng)
        next_data = [s.image.data for s in next_states]
        d_after, d_tape = score_batch(self.model.critic, next_data, self.rng)
        rewards = [
            compute_reward(
                float(db), float(da), p, bool(s.used_filters[k]),
                cfg.entropy_coefficient, cfg.reuse_penalty,
            )
            for db, da, p, s, k in zip(d_before, d_after, probs, states, a1)
        ]
        r = np.array([rb.total for rb in rewards])

        v_s, v_tape = self.agent.value_batch(x, self.rng)
        x_next = batch_policy_input(next_states)
        v_next, v_next_tape = self.agent.value_batch(x_next, self.rng)
        cont = cfg.gamma * (~terminal)
        delta = r + cont * v_next - v_s

        # dQ/da2 chains D(s') and the bootstrapped value through the filter
        d_img = batch_score_input_gradients(self.model.critic, next_data, d_tape, np.ones(b))
        v_img = self.agent.value_input_gradients(v_next_tape, cont)
        dq_da2 = [
            filter_vjp(act, s.image, gd + gv)[0]
            for act, s, gd, gv in zip(actions, states, d_img, v_img)
        ]

        self.opt_policy1.step(
            [-g for g in self.agent.policy1_gradients(p1_tape, probs, a1, delta)], iteration
        )
        self.opt_policy2.step(
            [-g for g in self.agent.policy2_gradients(p2_cache, dq_da2)], iteration
        )
        self.opt_value.step(self.agent.value_gradients(v_tape, delta), iteration)

        self.buffer.replace(slots, next_states)
        return {
            "reward": float(r.mean()),
            "delta_sq": float((delta**2).mean()),
            "entropy_penalty": float(np.mean([rb.entropy_penalty for rb in rewards])),
        }

    def iteration(self, t: int) -> dict:
        losses = [self.critic_step(t) for _ in range(self.config.n_critic)]
        stats = self.actor_step(t)
        stats["loss_w"] = float(np.mean(losses))
        stats["finished"] = self.buffer.finished_count
        return stats


def train(
    config: TrainerConfig,
    raw_dir: str | Path,
    target_dir: str | Path,
    out_path: str | Path,
    metrics_path: str | Path | None = None,
    model_config: ModelConfig = ModelConfig(),
    checkpoint_every: int = 500,
) -> AgentModel:
    """Run the full loop over two image directories; writes the checkpoint
    and a tab-separated metrics log; on a numeric failure the last good
    checkpoint is kept and the error re-raised."""
    raws = load_directory(raw_dir)
    targets = load_directory(target_dir)
    model = AgentModel(model_config, seed=config.seed)
    trainer = Trainer(config, raws, targets, model)
    lines = []
    try:
        for t in range(config.total_iterations):
            stats = trainer.iteration(t)
            lines.append(
                "{}\t{:.6g}\t{:.6g}\t{:.6g}\t{:.6g}\t{}".format(
                    t,
                    stats["loss_w"],
                    stats["reward"],
                    stats["delta_sq"],
                    stats["entropy_penalty"],
                    stats["finished"],
                )
            )
            if (t + 1) % checkpoint_every == 0:
                save_checkpoint(model, out_path)
    except NumericError:
        if metrics_path is not None:
            Path(metrics_path).write_text("\n".join(lines) + "\n")
        raise
    save_checkpoint(model, out_path)
    if metrics_path is not None:
        Path(metrics_path).write_text("\n".join(lines) + "\n")
    return model
