"""Composition of backbone, adapters and controller into one denoiser.

The customized model runs the frozen backbone blocks, evaluates both
adapters on every block input (the inactive dimension stays present in the
forward pass; training only masks its gradients), asks the controller for
one grouped blend schedule per step, and mixes the branches into the
residual stream.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .adapters import AdapterBank, AdapterConfig, blend_residual
from .controller import BlendSchedule, Controller, fixed_schedule
from .dit import (Backbone, BackboneConfig, DiffusionSchedule, assemble_patches,
                  ddim_sample, extract_patches)
from .tensor import ParamRegistry, Tensor


@dataclass
class ModelBundle:
    cfg: BackboneConfig
    registry: ParamRegistry
    backbone: Backbone
    diffusion: DiffusionSchedule
    adapters: AdapterBank | None = None
    controller: Controller | None = None
    groups: int = 1

    @property
    def customized(self) -> bool:
        return self.adapters is not None

    def predict_eps_tokens(self, video: np.ndarray, prompt: tuple[int, int], step: int,
                           ref: np.ndarray | None = None) -> tuple[Tensor, BlendSchedule | None]:
        """One denoiser evaluation; the schedule is computed once and shared by all blocks."""
        bb = self.backbone
        noised = Tensor(extract_patches(video, self.cfg))
        x = bb.embed_tokens(video, prompt)
        t_vec = bb.timestep_embedding(step)
        if not self.customized:
            for i in range(self.cfg.depth):
                x = bb.backbone_block(i, x, t_vec)
            return bb.readout(x, t_vec, noised), None
        if ref is None:
            raise ValueError("customized model requires a reference embedding")
        if self.controller is not None:
            schedule = self.controller.controller_step(x, t_vec)
        else:
            schedule = fixed_schedule(self.cfg.depth, self.groups)
        ref_t = Tensor(np.asarray(ref, dtype=np.float64))
        for i in range(self.cfg.depth):
            delta, _ = bb.block_delta(i, x, t_vec)
            f_id = self.adapters.identity_forward(i, x)
            f_mo = self.adapters.motion_forward(i, x, ref_t)
            x = blend_residual(f_id, f_mo, delta, schedule.weight_for_block(i))
        return bb.readout(x, t_vec, noised), schedule

    def predict_eps_video(self, video: np.ndarray, prompt: tuple[int, int], step: int,
                          ref: np.ndarray | None = None) -> tuple[np.ndarray, BlendSchedule | None]:
        tokens, schedule = self.predict_eps_tokens(video, prompt, step, ref)
        return assemble_patches(tokens.data, self.cfg), schedule


def build_bundle(cfg: BackboneConfig, seed: int, adapter_cfg: AdapterConfig | None = None,
                 groups: int = 4, mode: str = "full") -> ModelBundle:
    """Construct a fresh model; `mode` controls which customization parts exist.

    mode "full": adapters + grouped controller; "no-controller": adapters with
    the blend pinned at 0.5; "no-groups": controller collapsed to one group;
    "backbone": bare backbone. "no-joint" shares the full architecture (the
    difference is the training protocol, see the trainer).
    """
    registry = ParamRegistry()
    rng = np.random.default_rng(seed)
    backbone = Backbone(cfg, registry, rng)
    diffusion = DiffusionSchedule(timesteps=cfg.timesteps)
    if adapter_cfg is None:
        return ModelBundle(cfg, registry, backbone, diffusion)
    adapters = AdapterBank(adapter_cfg, cfg.model_dim, cfg.depth, registry, rng)
    controller = None
    if mode != "no-controller":
        n = 1 if mode == "no-groups" else groups
        controller = Controller(cfg.model_dim, cfg.t_dim, cfg.depth, n, registry, rng)
        groups = n
    return ModelBundle(cfg, registry, backbone, diffusion, adapters, controller, groups)


def sample_video(bundle: ModelBundle, prompt: tuple[int, int], sample_steps: int, seed: int,
                 ref: np.ndarray | None = None) -> tuple[np.ndarray, list]:
    """DDIM-sample a clip; returns (video, [(step, blend weights or None), ...])."""
    cfg = bundle.cfg

    def eps_fn(x, step):
        eps, schedule = bundle.predict_eps_video(x, prompt, step, ref)
        return eps, None if schedule is None else schedule.values()

    shape = (cfg.frames, cfg.height, cfg.width, cfg.channels)
    return ddim_sample(eps_fn, bundle.diffusion, shape, sample_steps, seed)
