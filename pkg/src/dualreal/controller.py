"""Stage-aware blend controller.

Once per denoising (or training) step, the controller maps the first block's
input sequence and the timestep embedding to one motion-share weight per
block group: token mean-pool and projection, adaptive layer-norm modulation
driven by the timestep, a gated fusion of the two streams, and a two-logit
head per block whose logits are averaged over contiguous block groups and
softmaxed pairwise. Each group weight is therefore an independent value in
(0,1); the complementary share goes to the identity branch.

The final linear layers of the gate and logit heads start at zero, so an
untrained controller emits exactly 0.5 everywhere.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import ParamRegistry, Tensor


def block_partition(depth: int, groups: int) -> tuple[int, ...]:
    """Contiguous block->group map; sizes differ by at most one."""
    if groups > depth:
        raise ValueError(f"group count {groups} exceeds depth {depth}")
    if groups < 1:
        raise ValueError("group count must be positive")
    base, rem = divmod(depth, groups)
    sizes = [base + 1 if g < rem else base for g in range(groups)]
    out: list[int] = []
    for g, s in enumerate(sizes):
        out.extend([g] * s)
    return tuple(out)


@dataclass
class BlendSchedule:
    """Grouped motion-share weights plus the block->group assignment."""

    weights: list          # per group; Tensor scalars (graph-attached) or floats
    partition: tuple[int, ...]

    @property
    def group_count(self) -> int:
        return len(self.weights)

    def weight_for_block(self, i: int):
        return self.weights[self.partition[i]]

    def values(self) -> np.ndarray:
        return np.array([w.item() if isinstance(w, Tensor) else float(w) for w in self.weights])


def fixed_schedule(depth: int, groups: int, value: float = 0.5) -> BlendSchedule:
    return BlendSchedule([value] * groups, block_partition(depth, groups))


class Controller:
    """Trainable hypernetwork emitting the per-step BlendSchedule."""

    def __init__(self, model_dim: int, t_dim: int, depth: int, groups: int,
                 registry: ParamRegistry, rng: np.random.Generator):
        self.model_dim = model_dim
        self.t_dim = t_dim
        self.depth = depth
        self.groups = groups
        self.partition = block_partition(depth, groups)
        self.registry = registry
        self.invocations = 0
        s = 1.0 / np.sqrt(t_dim)
        reg = lambda name, t: registry.register(f"controller.{name}", t, "controller")
        reg("pool.w", Tensor(rng.normal(0.0, 1.0 / np.sqrt(model_dim), size=(model_dim, t_dim))))
        reg("adaln.w1", Tensor(rng.normal(0.0, s, size=(t_dim, t_dim))))
        reg("adaln.b1", Tensor(np.zeros(t_dim)))
        reg("adaln.w2", Tensor(rng.normal(0.0, s, size=(t_dim, t_dim))))
        reg("adaln.b2", Tensor(np.zeros(t_dim)))
        reg("gate.w1", Tensor(rng.normal(0.0, s, size=(t_dim, t_dim))))
        reg("gate.b1", Tensor(np.zeros(t_dim)))
        reg("gate.w2", Tensor(np.zeros((t_dim, 3 * t_dim))))
        reg("gate.b2", Tensor(np.zeros(3 * t_dim)))
        reg("logits.w1", Tensor(rng.normal(0.0, s, size=(t_dim, t_dim))))
        # Nonzero hidden bias keeps the logit head trainable while its output
        # layer sits at zero and the fused feature is still identically zero.
        reg("logits.b1", Tensor(rng.normal(0.0, 0.5, size=(t_dim,))))
        reg("logits.w2", Tensor(np.zeros((t_dim, 2 * depth))))
        reg("logits.b2", Tensor(np.zeros(2 * depth)))

    def _p(self, name: str) -> Tensor:
        return self.registry.get(f"controller.{name}")

    def _mlp(self, prefix: str, x: Tensor) -> Tensor:
        h = T.gelu(T.broadcast_add(T.matmul(x, self._p(f"{prefix}.w1")), self._p(f"{prefix}.b1")))
        return T.broadcast_add(T.matmul(h, self._p(f"{prefix}.w2")), self._p(f"{prefix}.b2"))

    # --- pipeline stages (each is independently testable) ---------------

    def pool_project(self, f_in: Tensor) -> Tensor:
        pooled = T.reshape(T.mean_pool_axis(f_in, axis=0), (1, self.model_dim))
        return T.matmul(pooled, self._p("pool.w"))

    def gate_chunks(self, t_vec: Tensor) -> tuple[Tensor, Tensor, Tensor]:
        h = self._mlp("gate", T.silu(T.reshape(t_vec, (1, self.t_dim))))
        h = T.reshape(h, (3 * self.t_dim,))
        chunk = lambda k: T.slice_chunk(h, 0, k * self.t_dim, self.t_dim)
        return chunk(0), chunk(1), chunk(2)

    def adaln_modulate(self, pooled: Tensor, scale: Tensor, shift: Tensor) -> Tensor:
        out = self._mlp("adaln", T.layer_norm(pooled))
        return T.broadcast_add(T.mul(out, scale), shift)

    @staticmethod
    def gate_fuse(modulated: Tensor, pooled: Tensor, gate: Tensor) -> Tensor:
        return T.add(modulated, T.mul(pooled, gate))

    # softmax pairs saturate to exact 0/1 in float64 once the logit gap
    # exceeds ~36; bounding keeps every weight strictly inside (0,1)
    LOGIT_BOUND = 17.0

    def group_weights(self, fused: Tensor) -> BlendSchedule:
        logits = T.clip_values(T.reshape(self._mlp("logits", fused), (self.depth, 2)),
                               -self.LOGIT_BOUND, self.LOGIT_BOUND)
        weights = []
        start = 0
        for g in range(self.groups):
            size = self.partition.count(g)
            pair = T.mean_pool_axis(T.slice_chunk(logits, 0, start, size), axis=0)
            share = T.softmax_axis(pair, axis=-1)
            weights.append(T.reshape(T.slice_chunk(share, 0, 0, 1), ()))
            start += size
        return BlendSchedule(weights, self.partition)

    def controller_step(self, f_in_block0: Tensor, t_vec: Tensor) -> BlendSchedule:
        """Full pipeline; call exactly once per denoising/training step."""
        self.invocations += 1
        pooled = self.pool_project(f_in_block0)
        scale, shift, gate = self.gate_chunks(t_vec)
        modulated = self.adaln_modulate(pooled, scale, shift)
        fused = self.gate_fuse(modulated, pooled, gate)
        return self.group_weights(fused)
