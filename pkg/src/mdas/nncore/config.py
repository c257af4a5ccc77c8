"""Model shape configuration."""

from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np

from ..errors import ConfigurationError

ATTENTION_MODES = ("bidirectional", "causal")
PRECISIONS = ("single", "double")

_DTYPES = {"single": np.float32, "double": np.float64}


@dataclass(frozen=True)
class ModelConfig:
    """Shape of one transformer stack (denoiser or causal baseline).

    `attention_mode` selects full attention (mask predictor) or a
    lower-triangular mask (autoregressive baseline). `audio_dim` is the
    width of pooled acoustic features; the in-params projection maps them
    to `model_dim` (0 disables the audio pathway entirely).
    """

    vocab_size: int
    model_dim: int
    num_layers: int
    num_heads: int
    ffn_dim: int
    max_positions: int
    attention_mode: str = "bidirectional"
    precision: str = "single"
    audio_dim: int = 0

    def validate(self) -> None:
        if self.model_dim % self.num_heads != 0:
            raise ConfigurationError(
                f"model_dim {self.model_dim} not divisible by num_heads {self.num_heads}"
            )
        for name in ("vocab_size", "model_dim", "num_layers", "num_heads",
                     "ffn_dim", "max_positions"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be >= 1")
        if self.audio_dim < 0:
            raise ConfigurationError("audio_dim must be >= 0")
        if self.attention_mode not in ATTENTION_MODES:
            raise ConfigurationError(f"unknown attention_mode {self.attention_mode!r}")
        if self.precision not in PRECISIONS:
            raise ConfigurationError(f"unknown precision {self.precision!r}")

    @property
    def head_dim(self) -> int:
        return self.model_dim // self.num_heads

    @property
    def dtype(self) -> np.dtype:
        return np.dtype(_DTYPES[self.precision])

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        cfg = cls(**d)
        cfg.validate()
        return cfg
