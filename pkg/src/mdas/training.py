"""Training drivers for the mask predictor and the causal baseline.

Both loops shuffle the corpus per epoch with a seeded generator and log
one CSV line per step (step, t-draw summary, loss, lr), so a rerun from
the same (config, seed) reproduces the checkpoint bit-for-bit.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .diffusion import (
    ObjectiveMode,
    OptimizerState,
    TrainExample,
    make_train_example,
    train_step,
)
from .nncore import AdamWHyper, LrSchedule, ModelConfig, Params, init_params
from .toytask import ASR_INSTRUCTION, Utterance, ar_train_step, make_ar_example
from .toytask.frontend import pad_windows, pool_frames
from .vocab import NUM_RESERVED


@dataclass(frozen=True)
class TrainSettings:
    objective: str = "audio_sft"  # audio_sft | sft | pretrain
    block_length: int = 32
    pool_window: int = 4
    audio_windows: int = 24  # zero-pad pooled audio to this many rows (0 = off)
    batch_size: int = 16
    total_steps: int = 2000
    lr_start: float = 1e-5
    lr_peak: float = 3e-3
    lr_min: float = 3e-4
    warmup_steps: int = 200
    weight_decay: float = 0.05
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    length_normalize: bool = False
    exact_count_masking: bool = False

    def schedule(self) -> LrSchedule:
        return LrSchedule(
            self.lr_start, self.lr_peak, self.lr_min, self.warmup_steps, self.total_steps
        )

    def hyper(self) -> AdamWHyper:
        return AdamWHyper(self.beta1, self.beta2, self.adam_eps, self.weight_decay)


def model_config_for(
    corpus_num_content: int,
    feature_dim: int,
    settings: TrainSettings,
    model_dim: int = 32,
    num_layers: int = 2,
    num_heads: int = 4,
    ffn_dim: int = 64,
    attention_mode: str = "bidirectional",
    precision: str = "single",
    max_positions: int | None = None,
) -> ModelConfig:
    """Derive the full ModelConfig from corpus shape plus model knobs.

    max_positions defaults to instruction + one audio window per pooled
    frame group + the (BOS-extended) response block, with slack.
    """
    if max_positions is None:
        # instruction(1) + audio(<= block) + response(block + 1 for the AR BOS)
        max_positions = 1 + settings.block_length + settings.block_length + 1
    audio_dim = feature_dim if settings.objective == "audio_sft" else 0
    return ModelConfig(
        vocab_size=NUM_RESERVED + corpus_num_content,
        model_dim=model_dim,
        num_layers=num_layers,
        num_heads=num_heads,
        ffn_dim=ffn_dim,
        max_positions=max_positions,
        attention_mode=attention_mode,
        precision=precision,
        audio_dim=audio_dim,
    )


def _examples_for(
    utts: list[Utterance], settings: TrainSettings, ar: bool
) -> list[TrainExample]:
    out = []
    with_audio = ar or settings.objective == "audio_sft"
    for u in utts:
        feats = None
        if with_audio:
            feats = pad_windows(
                pool_frames(u.frames, settings.pool_window), settings.audio_windows
            )
        if ar:
            out.append(
                make_ar_example(ASR_INSTRUCTION, feats, u.reference, settings.block_length)
            )
        else:
            out.append(
                make_train_example(ASR_INSTRUCTION, feats, u.reference, settings.block_length)
            )
    return out


class _Batcher:
    """Seeded epoch shuffling; hands out fixed-size batches forever."""

    def __init__(self, n: int, batch_size: int, rng: np.random.Generator):
        self.n = n
        self.batch_size = batch_size
        self.rng = rng
        self.order = rng.permutation(n)
        self.pos = 0

    def next_indices(self) -> np.ndarray:
        idx = []
        while len(idx) < self.batch_size:
            if self.pos == self.n:
                self.order = self.rng.permutation(self.n)
                self.pos = 0
            take = min(self.batch_size - len(idx), self.n - self.pos)
            idx.extend(self.order[self.pos : self.pos + take])
            self.pos += take
        return np.array(idx)


def train_denoiser(
    utterances: list[Utterance],
    model_cfg: ModelConfig,
    settings: TrainSettings,
    seed: int,
    log_path: str | Path | None = None,
) -> Params:
    """Train the mask predictor with the settings' objective; returns params."""
    mode = ObjectiveMode(settings.objective)
    params = init_params(model_cfg, seed)
    opt = OptimizerState.fresh(params, settings.schedule(), settings.hyper())
    rng = np.random.default_rng([seed, 7001])
    examples = _examples_for(utterances, settings, ar=False)
    batcher = _Batcher(len(examples), settings.batch_size, np.random.default_rng([seed, 7002]))
    log = _StepLog(log_path, ["step", "t_mean", "t_min", "t_max", "loss", "lr"])
    try:
        for step in range(1, settings.total_steps + 1):
            batch = [examples[i] for i in batcher.next_indices()]
            loss, params, t_draws = train_step(
                params,
                batch,
                mode,
                rng,
                opt,
                step,
                length_normalize=settings.length_normalize,
                exact_count=settings.exact_count_masking,
            )
            log.row(
                [
                    step,
                    f"{np.mean(t_draws):.6f}",
                    f"{np.min(t_draws):.6f}",
                    f"{np.max(t_draws):.6f}",
                    f"{loss:.6f}",
                    f"{_lr(opt, step):.8g}",
                ]
            )
    finally:
        log.close()
    return params


def train_ar(
    utterances: list[Utterance],
    model_cfg: ModelConfig,
    settings: TrainSettings,
    seed: int,
    log_path: str | Path | None = None,
) -> Params:
    """Train the causal baseline with next-token cross entropy."""
    params = init_params(model_cfg, seed)
    opt = OptimizerState.fresh(params, settings.schedule(), settings.hyper())
    examples = _examples_for(utterances, settings, ar=True)
    batcher = _Batcher(len(examples), settings.batch_size, np.random.default_rng([seed, 7003]))
    log = _StepLog(log_path, ["step", "loss", "lr"])
    try:
        for step in range(1, settings.total_steps + 1):
            batch = [examples[i] for i in batcher.next_indices()]
            loss, params = ar_train_step(params, batch, opt, step)
            log.row([step, f"{loss:.6f}", f"{_lr(opt, step):.8g}"])
    finally:
        log.close()
    return params


def _lr(opt: OptimizerState, step: int) -> float:
    from .nncore import lr_at

    return lr_at(opt.schedule, step)


class _StepLog:
    def __init__(self, path: str | Path | None, header: list[str]):
        self.file = None
        self.writer = None
        if path is not None:
            self.file = open(path, "w", newline="")
            self.writer = csv.writer(self.file)
            self.writer.writerow(header)

    def row(self, values: list) -> None:
        if self.writer is not None:
            self.writer.writerow(values)

    def close(self) -> None:
        if self.file is not None:
            self.file.close()
