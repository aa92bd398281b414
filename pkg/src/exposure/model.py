"""The four networks (filter policy, parameter policy, value, critic) and
their versioned binary checkpoint format."""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np

from .errors import CheckpointError
from .filters import ARITY, FILTER_KINDS, N_FILTERS
from .nn import Dense, Network, build_backbone

MAGIC = b"EXPNET1"
POLICY_PLANES = 9  # 8 used-filter booleans + normalized step count
CRITIC_PLANES = 3  # mean luminance, contrast, saturation
POLICY_IN_CHANNELS = 3 + POLICY_PLANES
CRITIC_IN_CHANNELS = 3 + CRITIC_PLANES


@dataclass(frozen=True)
class ModelConfig:
    conv_widths: tuple[int, int, int, int] = (16, 32, 64, 128)
    fc_width: int = 128
    dropout: float = 0.5

    def to_dict(self) -> dict:
        d = asdict(self)
        d["conv_widths"] = list(self.conv_widths)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(tuple(d["conv_widths"]), d["fc_width"], d["dropout"])


class AgentModel:
    """Weight collections for the filter policy, parameter policy heads,
    value network, and WGAN discriminator. Construction is deterministic
    for a fixed seed."""

    def __init__(self, config: ModelConfig = ModelConfig(), seed: int = 0):
        self.config = config
        self.seed = seed
        rng = np.random.default_rng(seed)
        kw = dict(conv_widths=config.conv_widths, fc_width=config.fc_width)
        self.policy1 = build_backbone(
            POLICY_IN_CHANNELS, N_FILTERS, rng, dropout_rate=config.dropout, **kw
        )
        self.policy2_trunk = build_backbone(
            POLICY_IN_CHANNELS, 0, rng, dropout_rate=config.dropout, head=False, **kw
        )
        self.policy2_heads = [Dense(config.fc_width, ARITY[k], rng) for k in FILTER_KINDS]
        self.value = build_backbone(POLICY_IN_CHANNELS, 1, rng, dropout_rate=config.dropout, **kw)
        self.critic = build_backbone(CRITIC_IN_CHANNELS, 1, rng, dropout_rate=0.0, **kw)

    def sections(self) -> list[tuple[str, list[np.ndarray]]]:
        out = [
            ("policy1", self.policy1.params()),
            ("policy2_trunk", self.policy2_trunk.params()),
        ]
        for kind, head in zip(FILTER_KINDS, self.policy2_heads):
            out.append((f"policy2_head_{kind.value}", head.params()))
        out += [("value", self.value.params()), ("critic", self.critic.params())]
        return out

    def actor_params(self) -> list[np.ndarray]:
        """theta2 parameter list: shared trunk followed by all heads."""
        out = list(self.policy2_trunk.params())
        for head in self.policy2_heads:
            out.extend(head.params())
        return out

    def arch(self) -> dict:
        return {
            "format": 1,
            "config": self.config.to_dict(),
            "sections": [
                {"name": name, "shapes": [list(p.shape) for p in params]}
                for name, params in self.sections()
            ],
        }


def arch_hash(arch: dict) -> str:
    return hashlib.sha256(json.dumps(arch, sort_keys=True).encode()).hexdigest()


def save_checkpoint(model: AgentModel, path: str | Path) -> None:
    arch = model.arch()
    header = json.dumps(
        {"arch": arch, "arch_hash": arch_hash(arch), "seed": model.seed}
    ).encode()
    blobs = [MAGIC, struct.pack("<I", len(header)), header]
    for _, params in model.sections():
        for p in params:
            blobs.append(p.astype("<f4").tobytes())
    Path(path).write_bytes(b"".join(blobs))


def load_checkpoint(path: str | Path) -> AgentModel:
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if raw[: len(MAGIC)] != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    pos = len(MAGIC)
    try:
        (hlen,) = struct.unpack_from("<I", raw, pos)
        pos += 4
        header = json.loads(raw[pos : pos + hlen])
        pos += hlen
    except (struct.error, ValueError, UnicodeDecodeError) as exc:
        raise CheckpointError(f"corrupt checkpoint header: {exc}") from exc
    if not isinstance(header, dict) or {"arch", "arch_hash", "seed"} - header.keys():
        raise CheckpointError("corrupt checkpoint header: missing fields")
    arch = header["arch"]
    if arch_hash(arch) != header["arch_hash"]:
        raise CheckpointError("architecture hash mismatch")
    model = AgentModel(ModelConfig.from_dict(arch["config"]), seed=header["seed"])
    expected = model.arch()
    if expected != arch:
        raise CheckpointError("checkpoint architecture does not match this build")
    for _, params in model.sections():
        for p in params:
            n = p.size * 4
            if pos + n > len(raw):
                raise CheckpointError("checkpoint truncated: missing weight data")
            p[...] = np.frombuffer(raw[pos : pos + n], dtype="<f4").reshape(p.shape)
            pos += n
    if pos != len(raw):
        raise CheckpointError("trailing data after weights")
    return model
