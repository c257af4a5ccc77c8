"""Minimal trainable transformer stack with explicit gradients.

Houses the bidirectional mask predictor and the causal baseline: forward
pass with a recorded tape, exact reverse-mode backprop, AdamW, the
warmup-cosine schedule, and checkpoint I/O.
"""

from .checkpoint import load_checkpoint, save_checkpoint
from .config import ModelConfig
from .model import (
    Grads,
    Params,
    PromptLayout,
    Tape,
    backprop,
    forward,
    init_params,
    tensor_specs,
    zero_grads,
)
from .optim import AdamWHyper, AdamWState, LrSchedule, adamw_update, lr_at

__all__ = [
    "AdamWHyper",
    "AdamWState",
    "Grads",
    "LrSchedule",
    "ModelConfig",
    "Params",
    "PromptLayout",
    "Tape",
    "adamw_update",
    "backprop",
    "forward",
    "init_params",
    "load_checkpoint",
    "lr_at",
    "save_checkpoint",
    "tensor_specs",
    "zero_grads",
]
