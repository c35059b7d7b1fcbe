"""Run configuration: one JSON file plus flag overrides (flags win).

The DUALREAL_SEED environment variable overrides the seed from any source.
"""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass
from pathlib import Path

from .adapters import AdapterConfig
from .dit import BackboneConfig

ABLATION_MODES = ("full", "no-joint", "no-controller", "no-groups")


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    # backbone
    frames: int = 8
    height: int = 32
    width: int = 32
    channels: int = 3
    patch_t: int = 2
    patch_s: int = 4
    model_dim: int = 64
    heads: int = 4
    depth: int = 8
    mlp_ratio: int = 4
    t_dim: int = 64
    timesteps: int = 100
    identity_vocab: int = 16
    motion_vocab: int = 16
    use_pos_emb: bool = True
    # customization modules
    adapter_dim: int = 16
    cond_dim: int = 32
    groups: int = 4
    mode: str = "full"
    # training
    gamma: float = 0.5
    lr: float = 1e-3
    weight_decay: float = 0.01
    pretrain_steps: int = 3000
    customize_steps: int = 1000
    checkpoint_every: int = 500
    sample_steps: int = 20
    seed: int = 0

    def validate(self, source: str = "config") -> None:
        checks = [
            (self.groups <= self.depth, f"groups ({self.groups}) must be <= depth ({self.depth})"),
            (self.groups >= 1, "groups must be positive"),
            (self.mode in ABLATION_MODES, f"mode {self.mode!r} not one of {ABLATION_MODES}"),
            (self.frames % self.patch_t == 0, "frames not divisible by patch_t"),
            (self.height % self.patch_s == 0, "height not divisible by patch_s"),
            (self.width % self.patch_s == 0, "width not divisible by patch_s"),
            (self.model_dim % self.heads == 0, "model_dim not divisible by heads"),
            (0.0 <= self.gamma <= 1.0, "gamma must be in [0,1]"),
            (self.sample_steps <= self.timesteps, "sample_steps must be <= timesteps"),
            (self.t_dim % 2 == 0, "t_dim must be even"),
        ]
        for ok, message in checks:
            if not ok:
                raise ConfigError(f"{source}: {message}")

    def backbone_config(self) -> BackboneConfig:
        return BackboneConfig(
            frames=self.frames, height=self.height, width=self.width, channels=self.channels,
            patch_t=self.patch_t, patch_s=self.patch_s, model_dim=self.model_dim,
            heads=self.heads, depth=self.depth, mlp_ratio=self.mlp_ratio, t_dim=self.t_dim,
            timesteps=self.timesteps, identity_vocab=self.identity_vocab,
            motion_vocab=self.motion_vocab, use_pos_emb=self.use_pos_emb)

    def adapter_config(self) -> AdapterConfig:
        return AdapterConfig(bottleneck=self.adapter_dim, cond_dim=self.cond_dim)

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), indent=2, sort_keys=True) + "\n"


def load_config(path: str | None, overrides: dict | None = None) -> RunConfig:
    """Build a RunConfig from an optional JSON file and CLI overrides."""
    values: dict = {}
    source = path or "defaults"
    if path is not None:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"{path}: {exc.strerror or exc}") from None
        try:
            values = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from None
        if not isinstance(values, dict):
            raise ConfigError(f"{path}:1: top-level value must be an object")
    known = {f.name for f in dataclasses.fields(RunConfig)}
    for key in values:
        if key not in known:
            raise ConfigError(f"{source}: unknown field {key!r}")
    if overrides:
        values.update({k: v for k, v in overrides.items() if v is not None})
    env_seed = os.environ.get("DUALREAL_SEED")
    if env_seed is not None:
        try:
            values["seed"] = int(env_seed)
        except ValueError:
            raise ConfigError(f"DUALREAL_SEED: {env_seed!r} is not an integer") from None
    try:
        cfg = RunConfig(**values)
    except TypeError as exc:
        raise ConfigError(f"{source}: {exc}") from None
    cfg.validate(source)
    return cfg
