"""Cascade refinement of first-pass transcripts.

A transcript from an external recognizer initializes the response block
(block length equals the transcript length, so refinement can only fix
substitutions, never length errors). A chosen subset of positions is
remasked and reconstructed by the mask predictor in a single pass:

  random          mask round(p * len) uniformly chosen positions
  low_confidence  mask the round(p * len) positions the denoiser itself
                  scores lowest (scored with the block fully masked, i.e.
                  transcript-blind, from prompt and audio alone)
  semi_ar         split into near-equal contiguous sub-blocks; fully mask
                  and reconstruct them left to right, one pass each

With use_audio off the layout carries no acoustic segment at all: the
plain-text setting that reproduces the audio-free negative finding.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from .decoding import softmax
from .errors import ConfigurationError, ContractError
from .nncore import Params, PromptLayout, forward
from .vocab import MASK, TokenSeq, tokens

STRATEGIES = ("random", "low_confidence", "semi_ar")


@dataclass(frozen=True)
class DeliberationConfig:
    strategy: str = "low_confidence"
    mask_ratio: float = 0.9  # random / low_confidence only
    sub_blocks: int = 4  # semi_ar only
    use_audio: bool = True
    seed: int = 0
    # Ablation: score the transcript with its own tokens visible instead of
    # the default fully masked block.
    score_with_visible_transcript: bool = False
    # Extension: repeat the whole mask/reconstruct cycle; 1 = paper-style
    # single pass.
    refine_passes: int = 1

    def validate(self) -> None:
        if self.strategy not in STRATEGIES:
            raise ConfigurationError(f"unknown strategy {self.strategy!r}")
        if not 0.0 <= self.mask_ratio <= 1.0:
            raise ConfigurationError(f"mask_ratio {self.mask_ratio} outside [0, 1]")
        if self.sub_blocks < 1:
            raise ConfigurationError("sub_blocks must be >= 1")
        if self.refine_passes < 1:
            raise ConfigurationError("refine_passes must be >= 1")


@dataclass
class FirstPassTranscript:
    """A MASK-free hypothesis from an external system, plus its audio length."""

    tokens: TokenSeq
    source: str
    duration: float

    def validate(self) -> None:
        if len(self.tokens) < 1:
            raise ContractError("transcript must be nonempty")
        if np.any(self.tokens == MASK):
            raise ContractError("transcript contains MASK")


@dataclass
class RefineResult:
    transcript: FirstPassTranscript
    denoiser_calls: int
    elapsed: float
    masked_per_pass: list[int]


def mask_count(length: int, p: float) -> int:
    """round(p * length), half away from zero, clamped to [0, length]."""
    return min(length, max(0, int(math.floor(p * length + 0.5))))


def score_transcript(
    denoiser: Params,
    instruction: TokenSeq,
    audio: np.ndarray | None,
    transcript: FirstPassTranscript,
    visible: bool = False,
) -> np.ndarray:
    """Probability the denoiser assigns each transcript token at its position.

    One forward pass with the response block fully masked (transcript-blind);
    `visible` scores against a block holding the transcript instead.
    """
    transcript.validate()
    n = len(transcript.tokens)
    block = transcript.tokens.copy() if visible else np.full(n, MASK, dtype=np.int64)
    logits, _ = forward(denoiser, PromptLayout(tokens(instruction), audio, block))
    probs = softmax(logits)
    return probs[np.arange(n), transcript.tokens]


def plan_mask_random(length: int, p: float, rng: np.random.Generator) -> np.ndarray:
    """Exactly round(p * length) distinct positions, uniform without replacement."""
    if not 0.0 <= p <= 1.0:
        raise ContractError(f"mask ratio {p} outside [0, 1]")
    k = mask_count(length, p)
    return np.sort(rng.permutation(length)[:k])


def plan_mask_lowconf(conf: np.ndarray, p: float) -> np.ndarray:
    """The round(p * len) lowest-confidence positions; ties lowest-position-first."""
    if not 0.0 <= p <= 1.0:
        raise ContractError(f"mask ratio {p} outside [0, 1]")
    n = len(conf)
    k = mask_count(n, p)
    order = np.lexsort((np.arange(n), conf))
    return np.sort(order[:k])


def refine_once(
    denoiser: Params,
    instruction: TokenSeq,
    audio: np.ndarray | None,
    transcript: FirstPassTranscript,
    positions: np.ndarray,
) -> FirstPassTranscript:
    """Remask the given positions and reconstruct them in one forward pass.

    Unmasked tokens are bit-identical to the input; the output has the
    input's length. An empty position set is the identity.
    """
    transcript.validate()
    positions = np.asarray(positions, dtype=np.int64)
    n = len(transcript.tokens)
    if positions.size and (positions.min() < 0 or positions.max() >= n):
        raise ContractError("mask positions outside the transcript")
    out = transcript.tokens.copy()
    if positions.size == 0:
        return FirstPassTranscript(out, transcript.source, transcript.duration)
    block = out.copy()
    block[positions] = MASK
    logits, _ = forward(denoiser, PromptLayout(tokens(instruction), audio, block))
    out[positions] = logits[positions].argmax(axis=-1)
    return FirstPassTranscript(out, transcript.source, transcript.duration)


def split_spans(length: int, sub_blocks: int) -> list[tuple[int, int]]:
    """Contiguous spans with sizes differing by <= 1, remainder leftmost."""
    base, rem = divmod(length, sub_blocks)
    spans = []
    lo = 0
    for i in range(sub_blocks):
        hi = lo + base + (1 if i < rem else 0)
        spans.append((lo, hi))
        lo = hi
    return spans


def refine_semi_ar(
    denoiser: Params,
    instruction: TokenSeq,
    audio: np.ndarray | None,
    transcript: FirstPassTranscript,
    sub_blocks: int,
) -> FirstPassTranscript:
    """Fully remask and reconstruct each sub-block left to right, one pass per
    sub-block, conditioning on refined earlier spans and original later ones."""
    transcript.validate()
    if not 1 <= sub_blocks <= len(transcript.tokens):
        raise ContractError(
            f"sub_blocks {sub_blocks} outside [1, {len(transcript.tokens)}]"
        )
    current = transcript
    for lo, hi in split_spans(len(transcript.tokens), sub_blocks):
        current = refine_once(
            denoiser, instruction, audio, current, np.arange(lo, hi, dtype=np.int64)
        )
    return current


def deliberate(
    denoiser: Params,
    instruction: TokenSeq,
    audio: np.ndarray | None,
    transcript: FirstPassTranscript,
    cfg: DeliberationConfig,
    rng: np.random.Generator | None = None,
) -> RefineResult:
    """Apply one deliberation strategy; audio is ignored when use_audio is off.

    `rng` overrides the generator seeded from cfg.seed (used for
    per-utterance derived streams). Transcripts shorter than `sub_blocks`
    clamp the sub-block count to their length.
    """
    cfg.validate()
    if not cfg.use_audio:
        audio = None
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    t0 = time.perf_counter()
    calls = 0
    masked_per_pass: list[int] = []
    current = transcript
    for _ in range(cfg.refine_passes):
        if cfg.strategy == "semi_ar":
            blocks = min(cfg.sub_blocks, len(current.tokens))
            current = refine_semi_ar(denoiser, instruction, audio, current, blocks)
            calls += blocks
            masked_per_pass.append(len(current.tokens))
            continue
        if cfg.strategy == "random":
            positions = plan_mask_random(len(current.tokens), cfg.mask_ratio, rng)
        else:
            conf = score_transcript(
                denoiser,
                instruction,
                audio,
                current,
                visible=cfg.score_with_visible_transcript,
            )
            calls += 1
            positions = plan_mask_lowconf(conf, cfg.mask_ratio)
        if positions.size:
            current = refine_once(denoiser, instruction, audio, current, positions)
            calls += 1
        masked_per_pass.append(int(positions.size))
    return RefineResult(
        transcript=current,
        denoiser_calls=calls,
        elapsed=time.perf_counter() - t0,
        masked_per_pass=masked_per_pass,
    )
