"""Conditional denoiser: context featurisation, model, optimiser."""

from .context import ContextBatch, ContextSpec, make_context
from .layers import mish, time_embedding
from .model import (
    DenoiserConfig,
    DenoiserModel,
    denoise,
    encode_scene,
    load_checkpoint,
    loss_and_gradients,
    loss_for_noise,
)
from .optim import AdamW, CosineLR, optimizer_step

__all__ = [
    "AdamW",
    "ContextBatch",
    "ContextSpec",
    "CosineLR",
    "DenoiserConfig",
    "DenoiserModel",
    "denoise",
    "encode_scene",
    "load_checkpoint",
    "loss_and_gradients",
    "loss_for_noise",
    "make_context",
    "mish",
    "optimizer_step",
    "time_embedding",
]
