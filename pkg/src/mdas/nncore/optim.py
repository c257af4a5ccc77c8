"""AdamW with decoupled weight decay, and the warmup-cosine learning rate."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigurationError, ContractError, TrainingError
from .model import Params


@dataclass(frozen=True)
class AdamWHyper:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.05


@dataclass
class AdamWState:
    """First/second moment buffers, keyed like Params.tensors.

    Owned by a single logical training thread; mutated in place by
    `adamw_update`.
    """

    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]

    @classmethod
    def zeros(cls, params: Params) -> "AdamWState":
        return cls(
            m={k: np.zeros_like(t) for k, t in params.tensors.items()},
            v={k: np.zeros_like(t) for k, t in params.tensors.items()},
        )


def adamw_update(
    params: Params,
    grads: dict[str, np.ndarray],
    state: AdamWState,
    hyper: AdamWHyper,
    lr: float,
    step: int,
) -> Params:
    """One decoupled-weight-decay step; returns new params, mutates `state`.

    Decay applies uniformly to every tensor: p' = p - lr*wd*p - lr*mhat/(sqrt(vhat)+eps).
    """
    if step < 1:
        raise ContractError("adamw step counter starts at 1")
    b1, b2 = hyper.beta1, hyper.beta2
    c1 = 1.0 - b1**step
    c2 = 1.0 - b2**step
    new = {}
    for name, p in params.tensors.items():
        g = grads[name]
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient in tensor {name!r}")
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        update = (m / c1) / (np.sqrt(v / c2) + hyper.eps)
        new[name] = p - lr * hyper.weight_decay * p - lr * update
    return Params(params.config, new)


@dataclass(frozen=True)
class LrSchedule:
    """Linear warmup from lr_start to lr_peak, then cosine decay to lr_min."""

    lr_start: float
    lr_peak: float
    lr_min: float
    warmup_steps: int
    total_steps: int

    def __post_init__(self) -> None:
        if self.lr_start > self.lr_peak or self.lr_min > self.lr_peak:
            raise ConfigurationError("need lr_start <= lr_peak and lr_min <= lr_peak")
        if not 0 <= self.warmup_steps <= self.total_steps:
            raise ConfigurationError("need 0 <= warmup_steps <= total_steps")


def lr_at(schedule: LrSchedule, step: int) -> float:
    """Rate at `step`; steps past total_steps clamp to lr_min."""
    if step < 0:
        raise ContractError("step must be >= 0")
    s = schedule
    if step > s.total_steps:
        return s.lr_min
    if step < s.warmup_steps:
        return s.lr_start + (s.lr_peak - s.lr_start) * step / s.warmup_steps
    if step == s.warmup_steps:
        return s.lr_peak
    if step == s.total_steps:
        return s.lr_min
    frac = (step - s.warmup_steps) / (s.total_steps - s.warmup_steps)
    return s.lr_min + 0.5 * (s.lr_peak - s.lr_min) * (1.0 + math.cos(math.pi * frac))
