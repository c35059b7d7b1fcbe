"""Joint identity/motion customization of a toy video diffusion transformer."""

from .adapters import AdapterBank, AdapterConfig, blend_residual
from .config import RunConfig, load_config
from .controller import BlendSchedule, Controller, block_partition, fixed_schedule
from .dit import Backbone, BackboneConfig, DiffusionSchedule, ddim_sample, embed_timestep
from .model import ModelBundle, build_bundle, sample_video
from .tensor import ParamRegistry, ShapeError, Tensor, apply_primitive, backward, finite_diff_check, no_grad
from .trainer import ClipBatch, JointTrainer, MaskedAdamW, MaskedSGD, PhaseSelector, build_mask

__all__ = [
    "AdapterBank", "AdapterConfig", "Backbone", "BackboneConfig", "BlendSchedule",
    "ClipBatch", "Controller", "DiffusionSchedule", "JointTrainer", "MaskedAdamW",
    "MaskedSGD", "ModelBundle", "ParamRegistry", "PhaseSelector", "RunConfig",
    "ShapeError", "Tensor", "apply_primitive", "backward", "blend_residual",
    "block_partition", "build_bundle", "build_mask", "ddim_sample", "embed_timestep",
    "finite_diff_check", "fixed_schedule", "load_config", "no_grad", "sample_video",
]

__version__ = "0.1.0"
