"""Identity and motion bottleneck adapters fused into each block's residual.

Every transformer block gets two GELU bottleneck adapters with skip
connections: an unconditional identity adapter and a motion adapter whose
input is shifted by a projected reference-image embedding (shared projection
across blocks). A blend weight in (0,1) mixes the two before the block's own
residual contribution is added.

All up-projections and the conditioning projection start at exact zeros, so
a freshly attached adapter stack is an exact no-op around the frozen
backbone.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import ParamRegistry, Tensor


@dataclass(frozen=True)
class AdapterConfig:
    bottleneck: int = 16
    cond_dim: int = 32


class AdapterBank:
    """Per-block adapter weights; identity/motion tags drive gradient masking."""

    def __init__(self, cfg: AdapterConfig, model_dim: int, depth: int,
                 registry: ParamRegistry, rng: np.random.Generator):
        self.cfg = cfg
        self.depth = depth
        self.registry = registry
        c, d = model_dim, cfg.bottleneck
        scale = 1.0 / np.sqrt(c)
        for i in range(depth):
            registry.register(f"adapter.block{i}.identity.down",
                              Tensor(rng.normal(0.0, scale, size=(c, d))), "identity")
            registry.register(f"adapter.block{i}.identity.up",
                              Tensor(np.zeros((d, c))), "identity")
            registry.register(f"adapter.block{i}.motion.down",
                              Tensor(rng.normal(0.0, scale, size=(c, d))), "motion")
            registry.register(f"adapter.block{i}.motion.up",
                              Tensor(np.zeros((d, c))), "motion")
        # Zero start keeps the conditioning path silent until motion training
        # moves it; anything else would leak into the zero-init transparency
        # guarantee through the blend.
        registry.register("adapter.cond.w", Tensor(np.zeros((cfg.cond_dim, c))), "motion")

    def _p(self, name: str) -> Tensor:
        return self.registry.get(f"adapter.{name}")

    def identity_forward(self, i: int, f_in: Tensor) -> Tensor:
        if not 0 <= i < self.depth:
            raise ValueError(f"adapter index {i} out of range")
        down = self._p(f"block{i}.identity.down")
        up = self._p(f"block{i}.identity.up")
        return T.add(f_in, T.matmul(T.gelu(T.matmul(f_in, down)), up))

    def motion_forward(self, i: int, f_in: Tensor, ref: Tensor) -> Tensor:
        if not 0 <= i < self.depth:
            raise ValueError(f"adapter index {i} out of range")
        cond_row = T.reshape(T.matmul(T.reshape(ref, (1, self.cfg.cond_dim)), self._p("cond.w")), (-1,))
        f_cond = T.broadcast_add(f_in, cond_row)
        down = self._p(f"block{i}.motion.down")
        up = self._p(f"block{i}.motion.up")
        return T.add(f_cond, T.matmul(T.gelu(T.matmul(f_cond, down)), up))


def blend_residual(f_id: Tensor, f_mo: Tensor, f_dit: Tensor, weight) -> Tensor:
    """Mix adapter branches with motion share `weight`, then add the block delta."""
    w_val = weight.item() if isinstance(weight, Tensor) else float(weight)
    if not 0.0 < w_val < 1.0:
        raise ValueError(f"blend weight {w_val} outside (0,1); controller contract violated")
    if isinstance(weight, Tensor):
        mixed = T.add(T.mul(f_mo, weight), T.mul(f_id, T.sub(1.0, weight)))
    else:
        mixed = T.add(T.mul(f_mo, w_val), T.mul(f_id, 1.0 - w_val))
    return T.add(mixed, f_dit)
