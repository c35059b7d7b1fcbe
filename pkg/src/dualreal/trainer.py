"""Alternating identity/motion training with gradient-masked updates.

Each step draws a phase (motion with probability `gamma`), pulls a clip from
the matching source, noises it at a uniform timestep, runs the full
customized forward (both adapters always contribute) and applies the
optimizer only to parameters whose tag the phase selects. Controller
parameters update in both phases; backbone parameters never update. Skipped
parameters keep their values and optimizer moments bit-identical: masked
gradients never enter the moment accumulators.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as T
from .dit import extract_patches
from .model import ModelBundle
from .tensor import ParamRegistry, Tensor


@dataclass
class PhaseSelector:
    """Seeded Bernoulli phase switch: 1 = motion step, 0 = identity step."""

    gamma: float
    rng: np.random.Generator

    def draw(self) -> int:
        return int(self.rng.random() < self.gamma)


def build_mask(z: int, registry: ParamRegistry, train_controller: bool = True) -> dict[str, bool]:
    """Per-parameter update mask for phase `z` (1 = motion)."""
    mask: dict[str, bool] = {}
    for name, _, tag in registry.entries():
        if tag == "motion":
            mask[name] = z == 1
        elif tag == "identity":
            mask[name] = z == 0
        elif tag == "controller":
            mask[name] = train_controller
        elif tag == "backbone":
            mask[name] = False
        else:
            raise ValueError(f"parameter {name!r} has no dimension tag")
    return mask


class MaskedSGD:
    def __init__(self, lr: float):
        self.lr = lr

    def masked_update(self, registry: ParamRegistry, grads: dict[str, Tensor],
                      mask: dict[str, bool]) -> None:
        for name, active in mask.items():
            if not active:
                continue
            p = registry.get(name)
            registry.replace(name, Tensor(p.data - self.lr * grads[name].data))


class MaskedAdamW:
    """AdamW with decoupled weight decay and per-parameter step counters.

    Moments and counters exist only for parameters that have actually been
    updated; a masked-out step leaves them untouched.
    """

    def __init__(self, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8, weight_decay: float = 0.01):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.weight_decay = weight_decay
        self.state: dict[str, tuple[np.ndarray, np.ndarray, int]] = {}

    def masked_update(self, registry: ParamRegistry, grads: dict[str, Tensor],
                      mask: dict[str, bool]) -> None:
        for name, active in mask.items():
            if not active:
                continue
            p = registry.get(name)
            g = grads[name].data
            m, v, t = self.state.get(name, (np.zeros_like(p.data), np.zeros_like(p.data), 0))
            t += 1
            m = self.beta1 * m + (1.0 - self.beta1) * g
            v = self.beta2 * v + (1.0 - self.beta2) * g * g
            m_hat = m / (1.0 - self.beta1 ** t)
            v_hat = v / (1.0 - self.beta2 ** t)
            step = m_hat / (np.sqrt(v_hat) + self.eps) + self.weight_decay * p.data
            self.state[name] = (m, v, t)
            registry.replace(name, Tensor(p.data - self.lr * step))

    def moment_snapshot(self) -> dict[str, tuple[np.ndarray, np.ndarray, int]]:
        return {n: (m.copy(), v.copy(), t) for n, (m, v, t) in self.state.items()}


@dataclass
class ClipBatch:
    """One training clip with its prompt and candidate reference embeddings.

    Identity clips carry a single embedding (the reference image); motion
    clips carry one embedding per frame so motion steps can condition on a
    randomly chosen frame of the clip being reconstructed.
    """

    video: np.ndarray
    prompt: tuple[int, int]
    ref_embeddings: np.ndarray


@dataclass
class JointTrainer:
    bundle: ModelBundle
    identity_clips: list[ClipBatch]
    motion_clips: list[ClipBatch]
    gamma: float
    optimizer: MaskedAdamW
    seed: int
    train_controller: bool = True
    history: list[tuple[int, int, float]] = field(default_factory=list)

    def __post_init__(self):
        if not self.identity_clips or not self.motion_clips:
            raise ValueError("both identity and motion clip sources must be non-empty")
        self.rng = np.random.default_rng(self.seed)
        self.phase = PhaseSelector(self.gamma, self.rng)
        # Backbone stays frozen for the whole customization; skipping its
        # gradient accumulation leaves the update semantics untouched.
        self.bundle.registry.set_trainable({"identity", "motion", "controller"})

    def select_phase(self) -> tuple[int, list[ClipBatch]]:
        z = self.phase.draw()
        return z, (self.motion_clips if z == 1 else self.identity_clips)

    def train_step(self) -> tuple[int, float]:
        cfg = self.bundle.cfg
        z, source = self.select_phase()
        clip = source[int(self.rng.integers(len(source)))]
        step = int(self.rng.integers(cfg.timesteps))
        eps = self.rng.standard_normal(clip.video.shape)
        ref = clip.ref_embeddings[int(self.rng.integers(len(clip.ref_embeddings)))]
        x_t = self.bundle.diffusion.add_noise(clip.video, eps, step)
        pred, _ = self.bundle.predict_eps_tokens(x_t, clip.prompt, step, ref)
        loss = T.mse_loss(pred, Tensor(extract_patches(eps, cfg)))
        mask = build_mask(z, self.bundle.registry, self.train_controller)
        grads = T.backward(loss, self.bundle.registry,
                           [n for n, active in mask.items() if active])
        self.optimizer.masked_update(self.bundle.registry, grads, mask)
        value = loss.item()
        self.history.append((len(self.history), z, value))
        return z, value

    def run(self, steps: int, log_path: Path | None = None,
            checkpoint_every: int | None = None,
            checkpoint_dir: Path | None = None) -> list[tuple[int, int, float]]:
        from .checkpoint import save_checkpoint
        for _ in range(steps):
            self.train_step()
            if (checkpoint_every and checkpoint_dir is not None
                    and len(self.history) % checkpoint_every == 0):
                save_checkpoint(Path(checkpoint_dir) / f"step_{len(self.history):06d}.drck",
                                self.bundle.registry)
        if log_path is not None:
            write_training_log(log_path, self.history)
        return self.history


def write_training_log(path: Path, history: list[tuple[int, int, float]]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "phase", "loss"])
        for step, z, loss in history:
            writer.writerow([step, "motion" if z == 1 else "identity", f"{loss:.12g}"])
