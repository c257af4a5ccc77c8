"""Reverse-process inference over a response block.

Parallel diffusion decoding starts from an all-MASK block and repeatedly
(1) predicts every masked position in one forward pass, (2) commits the
top-K greedy tokens ranked by softmax confidence, and (3) optionally
forces everything after the first committed EOS to EOS. The
semi-autoregressive variant runs the same loop over contiguous sub-blocks
left to right, conditioning each on everything committed so far.

Commitment is greedy argmax with no sampling; ties in the confidence
ranking break lowest-position-first, so decoding is a pure function of
(params, inputs, config).
"""

from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, ContractError
from .nncore import Params, PromptLayout, forward
from .vocab import EOS, MASK, TokenSeq, tokens, truncate_at_eos

# Force-filled EOS positions are committed without consuming top-K budget;
# flip this to let them count against K instead.
EARLY_STOP_COUNTS_TOWARD_K = False

TIE_BREAKS = ("lowest-position-first",)


@dataclass(frozen=True)
class DecodeConfig:
    """Schedule knobs: block length L, step budget N, sub-block count M."""

    L: int = 32
    N: int = 8
    M: int = 1
    tie_break: str = "lowest-position-first"
    early_stop: bool = True

    def validate(self) -> None:
        if self.L < 1 or self.N < 1:
            raise ConfigurationError("need L >= 1 and N >= 1")
        if not 1 <= self.M <= self.L:
            raise ConfigurationError(f"need 1 <= M <= L, got M={self.M} L={self.L}")
        if self.tie_break not in TIE_BREAKS:
            raise ConfigurationError(f"unknown tie_break {self.tie_break!r}")

    @property
    def steps_per_sub_block(self) -> int:
        return max(1, min(self.N // self.M, self.L // self.M))


@dataclass
class Hypothesis:
    """Decoded output: EOS-truncated tokens with their commit confidences."""

    tokens: TokenSeq
    confidences: np.ndarray
    denoiser_calls: int
    elapsed: float
    block: TokenSeq  # full response block before EOS truncation
    truncated: bool = False  # AR decode hit max_len before EOS


@dataclass
class IterationRecord:
    """One denoising iteration, as written to the optional decode trace."""

    call_index: int
    sub_block: int
    committed: list[int]
    tokens: list[int]
    confidences: list[float]
    forced: list[int]


@dataclass
class DecodeTrace:
    records: list[IterationRecord] = field(default_factory=list)

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(
                ["iteration", "sub_block", "committed", "tokens", "confidences", "forced"]
            )
            for r in self.records:
                w.writerow(
                    [
                        r.call_index,
                        r.sub_block,
                        " ".join(map(str, r.committed)),
                        " ".join(map(str, r.tokens)),
                        " ".join(f"{c:.6g}" for c in r.confidences),
                        " ".join(map(str, r.forced)),
                    ]
                )


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    ez = np.exp(z)
    return ez / ez.sum(axis=-1, keepdims=True)


def confidences(logits: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Greedy token and its softmax probability at every position."""
    probs = softmax(logits)
    greedy = probs.argmax(axis=-1)
    return greedy, probs[np.arange(len(greedy)), greedy]


def select_commit(
    masked_positions: np.ndarray,
    conf: np.ndarray,
    k: int,
    tie_break: str = "lowest-position-first",
) -> np.ndarray:
    """The min(k, |masked|) masked positions with highest confidence.

    `conf` is indexed by absolute position; ties break lowest-position-first.
    """
    if tie_break not in TIE_BREAKS:
        raise ConfigurationError(f"unknown tie_break {tie_break!r}")
    if k < 1:
        raise ContractError("k must be >= 1")
    masked_positions = np.asarray(masked_positions, dtype=np.int64)
    if masked_positions.size == 0:
        raise ContractError("no masked positions to commit")
    order = np.lexsort((masked_positions, -conf[masked_positions]))
    return np.sort(masked_positions[order[: min(k, masked_positions.size)]])


def apply_early_stop(
    block: TokenSeq, masked: np.ndarray
) -> tuple[TokenSeq, np.ndarray, np.ndarray]:
    """Force every position after the first committed EOS to EOS.

    Returns (block, masked, forced positions). Forced positions are
    committed (unmasked) but were never selected by top-K; a previously
    committed non-EOS token after the first EOS is overwritten, which is
    the one sanctioned rewrite in the whole schedule.
    """
    committed_eos = np.flatnonzero((block == EOS) & ~masked)
    if committed_eos.size == 0:
        return block, masked, np.empty(0, dtype=np.int64)
    first = committed_eos[0]
    tail = np.arange(first + 1, len(block))
    forced = tail[(block[tail] != EOS) | masked[tail]]
    block = block.copy()
    masked = masked.copy()
    block[forced] = EOS
    masked[forced] = False
    return block, masked, forced


def _denoise_spans(
    params: Params,
    instruction: TokenSeq,
    audio: np.ndarray | None,
    length: int,
    spans: list[tuple[int, int]],
    steps_per_span: int,
    early_stop: bool,
    tie_break: str,
    trace: DecodeTrace | None,
) -> tuple[TokenSeq, np.ndarray, int]:
    """Shared engine: denoise an all-MASK block span by span, left to right."""
    block = np.full(length, MASK, dtype=np.int64)
    masked = np.ones(length, dtype=bool)
    conf = np.zeros(length, dtype=np.float64)
    calls = 0
    for si, (lo, hi) in enumerate(spans):
        k = math.ceil((hi - lo) / steps_per_span)
        for _ in range(steps_per_span):
            span_masked = np.flatnonzero(masked[lo:hi]) + lo
            if span_masked.size == 0:
                break
            logits, _ = forward(params, PromptLayout(instruction, audio, block))
            calls += 1
            probs = softmax(logits)
            greedy = probs.argmax(axis=-1)
            maxp = probs[np.arange(length), greedy]
            commit = select_commit(span_masked, maxp, k, tie_break)
            block[commit] = greedy[commit]
            conf[commit] = maxp[commit]
            masked[commit] = False
            forced = np.empty(0, dtype=np.int64)
            if early_stop:
                block, masked, forced = apply_early_stop(block, masked)
                conf[forced] = probs[forced, EOS]
            if trace is not None:
                trace.records.append(
                    IterationRecord(
                        call_index=calls,
                        sub_block=si,
                        committed=commit.tolist(),
                        tokens=block[commit].tolist(),
                        confidences=conf[commit].tolist(),
                        forced=forced.tolist(),
                    )
                )
    if masked.any():
        raise AssertionError("scheduling bug: masked positions left after budget")
    return block, conf, calls


def _finish(block, conf, calls, t0) -> Hypothesis:
    out = truncate_at_eos(block)
    return Hypothesis(
        tokens=out,
        confidences=conf[: len(out)].copy(),
        denoiser_calls=calls,
        elapsed=time.perf_counter() - t0,
        block=block,
    )


def diffusion_decode(
    denoiser: Params,
    instruction: TokenSeq,
    audio: np.ndarray | None,
    cfg: DecodeConfig,
    trace: DecodeTrace | None = None,
) -> Hypothesis:
    """Fully parallel reverse process over one block of length cfg.L.

    At most N denoiser calls; each commits the ceil(L/N) highest-confidence
    greedy tokens, then early stopping (if enabled) force-fills everything
    after the first committed EOS.
    """
    cfg.validate()
    t0 = time.perf_counter()
    steps = max(1, min(cfg.N, cfg.L))
    block, conf, calls = _denoise_spans(
        denoiser,
        tokens(instruction),
        audio,
        cfg.L,
        [(0, cfg.L)],
        steps,
        cfg.early_stop,
        cfg.tie_break,
        trace,
    )
    return _finish(block, conf, calls, t0)


def semi_ar_decode(
    denoiser: Params,
    instruction: TokenSeq,
    audio: np.ndarray | None,
    cfg: DecodeConfig,
    trace: DecodeTrace | None = None,
) -> Hypothesis:
    """Diffusion within each of M equal sub-blocks, autoregressive across them.

    Each sub-block gets clamp(N // M, 1, L/M) denoising steps; with M = 1
    this is bit-identical to `diffusion_decode`. Early stopping ends the
    entire decode by force-filling every later position with EOS.
    """
    cfg.validate()
    if cfg.L % cfg.M != 0:
        raise ConfigurationError(f"M={cfg.M} does not divide L={cfg.L}")
    t0 = time.perf_counter()
    size = cfg.L // cfg.M
    spans = [(i * size, (i + 1) * size) for i in range(cfg.M)]
    block, conf, calls = _denoise_spans(
        denoiser,
        tokens(instruction),
        audio,
        cfg.L,
        spans,
        cfg.steps_per_sub_block,
        cfg.early_stop,
        cfg.tie_break,
        trace,
    )
    return _finish(block, conf, calls, t0)
