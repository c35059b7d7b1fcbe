"""Toy text-conditioned video diffusion transformer.

The backbone is a small pre-LN DiT: patchified video tokens plus two learned
concept tokens (one identity slot, one motion slot), transformer blocks with
timestep-conditioned scale/shift modulation, and a linear head predicting the
injected noise per patch. It is trained once on a generic sprite pool and
then frozen; customization attaches adapters around it.

Blocks expose their residual delta separately from the full output so the
adapter stack can splice into the residual stream without perturbing the
frozen computation (zero-initialized adapters reproduce the backbone output
bit for bit).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .tensor import ParamRegistry, ShapeError, Tensor


@dataclass(frozen=True)
class BackboneConfig:
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

    def __post_init__(self):
        if self.frames % self.patch_t or self.height % self.patch_s or self.width % self.patch_s:
            raise ValueError("frames/height/width must be divisible by patch sizes")
        if self.model_dim % self.heads:
            raise ValueError("model_dim must be divisible by heads")

    @property
    def n_visual(self) -> int:
        return (self.frames // self.patch_t) * (self.height // self.patch_s) * (self.width // self.patch_s)

    @property
    def n_text(self) -> int:
        return 2

    @property
    def patch_dim(self) -> int:
        return self.patch_t * self.patch_s * self.patch_s * self.channels


@dataclass
class DiffusionSchedule:
    """Linear-beta forward process with cached cumulative products.

    beta_end is scaled for the short 100-step horizon so the terminal
    signal level is negligible (alpha-bar ~ 2e-4); sampling then starts
    from a distribution the model actually trained on.
    """

    timesteps: int = 100
    beta_start: float = 0.004
    beta_end: float = 0.16
    betas: np.ndarray = field(init=False)
    alphas_cumprod: np.ndarray = field(init=False)

    def __post_init__(self):
        self.betas = np.linspace(self.beta_start, self.beta_end, self.timesteps, dtype=np.float64)
        self.alphas_cumprod = np.cumprod(1.0 - self.betas)

    def add_noise(self, x0: np.ndarray, eps: np.ndarray, step: int) -> np.ndarray:
        if x0.shape != eps.shape:
            raise ShapeError("add_noise", x0.shape, eps.shape)
        a = self.alphas_cumprod[step]
        return np.sqrt(a) * x0 + np.sqrt(1.0 - a) * eps

    def recover_noise(self, x0: np.ndarray, xt: np.ndarray, step: int) -> np.ndarray:
        a = self.alphas_cumprod[step]
        return (xt - np.sqrt(a) * x0) / np.sqrt(1.0 - a)


def embed_timestep(step: int, t_dim: int, max_period: float = 10000.0) -> np.ndarray:
    """Sinusoidal timestep embedding: [sin(step*f_k) | cos(step*f_k)]."""
    if step < 0:
        raise ValueError(f"timestep {step} out of range")
    half = t_dim // 2
    freqs = np.exp(-np.log(max_period) * np.arange(half, dtype=np.float64) / half)
    return np.concatenate([np.sin(step * freqs), np.cos(step * freqs)])


def extract_patches(video: np.ndarray, cfg: BackboneConfig) -> np.ndarray:
    """Rearrange F,H,W,C video into (n_visual, patch_dim) rows."""
    f, h, w, c = video.shape
    if (f, h, w, c) != (cfg.frames, cfg.height, cfg.width, cfg.channels):
        raise ShapeError("patchify", video.shape, (cfg.frames, cfg.height, cfg.width, cfg.channels))
    pt, ps = cfg.patch_t, cfg.patch_s
    v = video.reshape(f // pt, pt, h // ps, ps, w // ps, ps, c)
    v = v.transpose(0, 2, 4, 1, 3, 5, 6)
    return np.ascontiguousarray(v).reshape(cfg.n_visual, cfg.patch_dim)


def assemble_patches(tokens: np.ndarray, cfg: BackboneConfig) -> np.ndarray:
    """Inverse of extract_patches: (n_visual, patch_dim) rows back to a video."""
    pt, ps = cfg.patch_t, cfg.patch_s
    f, h, w, c = cfg.frames, cfg.height, cfg.width, cfg.channels
    v = tokens.reshape(f // pt, h // ps, w // ps, pt, ps, ps, c)
    v = v.transpose(0, 3, 1, 4, 2, 5, 6)
    return np.ascontiguousarray(v).reshape(f, h, w, c)


def visual_pos_embedding(n_tokens: int, dim: int) -> np.ndarray:
    """Fixed sinusoidal position code over flattened (frame, row, col) order."""
    half = dim // 2
    freqs = np.exp(-np.log(10000.0) * np.arange(half, dtype=np.float64) / half)
    angles = np.arange(n_tokens, dtype=np.float64)[:, None] * freqs[None, :]
    return np.concatenate([np.sin(angles), np.cos(angles)], axis=1)


def _init(rng: np.random.Generator, rows: int, cols: int) -> Tensor:
    return Tensor(rng.normal(0.0, 1.0 / np.sqrt(rows), size=(rows, cols)))


class Backbone:
    """Frozen-after-pretraining DiT; all parameters carry the `backbone` tag."""

    def __init__(self, cfg: BackboneConfig, registry: ParamRegistry, rng: np.random.Generator):
        self.cfg = cfg
        self.registry = registry
        c, td = cfg.model_dim, cfg.t_dim
        reg = lambda name, t: registry.register(f"backbone.{name}", t, "backbone")
        reg("patch_embed.w", _init(rng, cfg.patch_dim, c))
        reg("patch_embed.b", Tensor(np.zeros(c)))
        reg("tokens.identity", Tensor(rng.normal(0.0, 0.5, size=(cfg.identity_vocab, c))))
        reg("tokens.motion", Tensor(rng.normal(0.0, 0.5, size=(cfg.motion_vocab, c))))
        for i in range(cfg.depth):
            p = f"block{i}"
            for mat in ("wq", "wk", "wv", "wo"):
                reg(f"{p}.attn.{mat}", _init(rng, c, c))
            reg(f"{p}.attn.bo", Tensor(np.zeros(c)))
            hidden = c * cfg.mlp_ratio
            reg(f"{p}.mlp.w1", _init(rng, c, hidden))
            reg(f"{p}.mlp.b1", Tensor(np.zeros(hidden)))
            reg(f"{p}.mlp.w2", _init(rng, hidden, c))
            reg(f"{p}.mlp.b2", Tensor(np.zeros(c)))
            reg(f"{p}.mod.w", Tensor(np.zeros((td, 4 * c))))
            reg(f"{p}.mod.b", Tensor(np.zeros(4 * c)))
        reg("final.w", _init(rng, c, cfg.patch_dim))
        reg("final.b", Tensor(np.zeros(cfg.patch_dim)))
        # Timestep-gated passthrough of the raw noised patches. The token
        # width is narrower than a patch, so a feature-only head could never
        # represent the full noise field; the gated raw path closes that
        # rank gap (gate starts closed).
        reg("final.skip.w", Tensor(np.eye(cfg.patch_dim)))
        reg("final.skip.gate_w", Tensor(np.zeros((td, cfg.patch_dim))))
        reg("final.skip.gate_b", Tensor(np.zeros(cfg.patch_dim)))
        self._pos = visual_pos_embedding(cfg.n_visual, c)

    def _p(self, name: str) -> Tensor:
        return self.registry.get(f"backbone.{name}")

    # --- embedding ----------------------------------------------------

    def embed_tokens(self, video: np.ndarray, prompt: tuple[int, int]) -> Tensor:
        """Build the joint [text, visual] sequence feeding block 0."""
        cfg = self.cfg
        id_slot, mo_slot = prompt
        if not (0 <= id_slot < cfg.identity_vocab and 0 <= mo_slot < cfg.motion_vocab):
            raise ValueError(f"prompt slots {prompt} outside vocab")
        patches = Tensor(extract_patches(video, cfg))
        visual = T.broadcast_add(T.matmul(patches, self._p("patch_embed.w")), self._p("patch_embed.b"))
        if cfg.use_pos_emb:
            visual = T.add(visual, Tensor(self._pos))
        id_row = T.slice_chunk(self._p("tokens.identity"), 0, id_slot, 1)
        mo_row = T.slice_chunk(self._p("tokens.motion"), 0, mo_slot, 1)
        return T.concat([id_row, mo_row, visual], axis=0)

    def timestep_embedding(self, step: int) -> Tensor:
        if not 0 <= step < self.cfg.timesteps:
            raise ValueError(f"timestep {step} out of [0,{self.cfg.timesteps})")
        return Tensor(embed_timestep(step, self.cfg.t_dim))

    # --- transformer --------------------------------------------------

    def _attention(self, i: int, x: Tensor) -> Tensor:
        cfg = self.cfg
        n = x.shape[0]
        heads, dh = cfg.heads, cfg.model_dim // cfg.heads
        q = T.matmul(x, self._p(f"block{i}.attn.wq"))
        k = T.matmul(x, self._p(f"block{i}.attn.wk"))
        v = T.matmul(x, self._p(f"block{i}.attn.wv"))
        split = lambda t: T.transpose(T.reshape(t, (n, heads, dh)), (1, 0, 2))
        q, k, v = split(q), split(k), split(v)
        scores = T.mul(T.matmul(q, T.transpose(k, (0, 2, 1))), 1.0 / np.sqrt(dh))
        probs = T.softmax_axis(scores, axis=-1)
        ctx = T.reshape(T.transpose(T.matmul(probs, v), (1, 0, 2)), (n, cfg.model_dim))
        return T.broadcast_add(T.matmul(ctx, self._p(f"block{i}.attn.wo")), self._p(f"block{i}.attn.bo"))

    def _modulation(self, i: int, t_vec: Tensor) -> tuple[Tensor, Tensor, Tensor, Tensor]:
        c = self.cfg.model_dim
        trow = T.reshape(t_vec, (1, self.cfg.t_dim))
        m = T.broadcast_add(T.matmul(T.silu(trow), self._p(f"block{i}.mod.w")), self._p(f"block{i}.mod.b"))
        m = T.reshape(m, (4 * c,))
        chunk = lambda k: T.slice_chunk(m, 0, k * c, c)
        return chunk(0), chunk(1), chunk(2), chunk(3)

    def block_delta(self, i: int, x: Tensor, t_vec: Tensor) -> tuple[Tensor, Tensor]:
        """Return (delta, out) where out = x + delta is the block's output."""
        if not 0 <= i < self.cfg.depth:
            raise ValueError(f"block index {i} out of range")
        shift1, scale1, shift2, scale2 = self._modulation(i, t_vec)
        h = T.broadcast_add(T.mul(T.layer_norm(x), T.add(scale1, 1.0)), shift1)
        attn = self._attention(i, h)
        u = T.add(x, attn)
        h2 = T.broadcast_add(T.mul(T.layer_norm(u), T.add(scale2, 1.0)), shift2)
        h2 = T.broadcast_add(T.gelu(T.broadcast_add(T.matmul(h2, self._p(f"block{i}.mlp.w1")), self._p(f"block{i}.mlp.b1"))) @ self._p(f"block{i}.mlp.w2"), self._p(f"block{i}.mlp.b2"))
        delta = T.add(attn, h2)
        return delta, T.add(x, delta)

    def backbone_block(self, i: int, x: Tensor, t_vec: Tensor) -> Tensor:
        return self.block_delta(i, x, t_vec)[1]

    def readout(self, x: Tensor, t_vec: Tensor, noised_patches: Tensor) -> Tensor:
        """Map final visual tokens plus the gated raw patches to noise predictions."""
        cfg = self.cfg
        vis = T.slice_chunk(x, 0, cfg.n_text, cfg.n_visual)
        head = T.broadcast_add(T.matmul(T.layer_norm(vis), self._p("final.w")), self._p("final.b"))
        trow = T.silu(T.reshape(t_vec, (1, cfg.t_dim)))
        gate = T.reshape(T.broadcast_add(T.matmul(trow, self._p("final.skip.gate_w")),
                                         self._p("final.skip.gate_b")), (cfg.patch_dim,))
        skip = T.mul(T.matmul(noised_patches, self._p("final.skip.w")), gate)
        return T.add(head, skip)


def ddim_steps(timesteps: int, sample_steps: int) -> list[int]:
    """Descending step indices, evenly spaced, always ending at 0."""
    if sample_steps > timesteps:
        raise ValueError("sample_steps must be <= timesteps")
    stride = timesteps / sample_steps
    return sorted({int(np.floor(i * stride)) for i in range(sample_steps)}, reverse=True)


def ddim_sample(eps_fn, schedule: DiffusionSchedule, shape: tuple[int, ...],
                sample_steps: int, seed: int) -> tuple[np.ndarray, list]:
    """Deterministic epsilon-prediction sampler.

    `eps_fn(x_t, step)` returns (eps, per_step_record); records are collected
    so the controller's blend weights can be exported per denoising step.
    """
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(shape)
    records = []
    steps = ddim_steps(schedule.timesteps, sample_steps)
    x0_hat = x
    with T.no_grad():
        for idx, step in enumerate(steps):
            eps, rec = eps_fn(x, step)
            records.append((step, rec))
            a = schedule.alphas_cumprod[step]
            x0_hat = (x - np.sqrt(1.0 - a) * eps) / np.sqrt(a)
            if idx + 1 < len(steps):
                a_prev = schedule.alphas_cumprod[steps[idx + 1]]
                x = np.sqrt(a_prev) * x0_hat + np.sqrt(1.0 - a_prev) * eps
    return np.clip(x0_hat, 0.0, 1.0), records
