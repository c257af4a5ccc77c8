"""Forward masking process and the masked cross-entropy training objectives.

Three layouts share one loss: response-only (pretraining), instruction +
response (text fine-tuning), and instruction + audio + response
(audio-conditioned fine-tuning). In every mode the response block is
corrupted by replacing each supervisable token independently with MASK at
probability t ~ U(0,1], and the model is penalised (1/t)-weighted cross
entropy at exactly the masked positions.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from . import vocab
from .errors import ContractError, EmptyMaskRedraw, TrainingError
from .nncore import (
    AdamWHyper,
    AdamWState,
    LrSchedule,
    Params,
    PromptLayout,
    adamw_update,
    backprop,
    forward,
    lr_at,
    zero_grads,
)
from .nncore.model import backprop_batch, forward_batch
from .vocab import EOS, MASK, PAD, TokenSeq


class ObjectiveMode(enum.Enum):
    PRETRAIN = "pretrain"  # response only
    SFT = "sft"  # instruction + response
    AUDIO_SFT = "audio_sft"  # instruction + audio + response


@dataclass
class MaskedBlock:
    """A response block after forward masking at time t.

    tokens[i] == MASK exactly for i in masked_set; everything else is the
    clean token.
    """

    tokens: TokenSeq
    masked_set: np.ndarray  # sorted positions
    t: float

    def __post_init__(self) -> None:
        if not 0.0 < self.t <= 1.0:
            raise ContractError(f"masking time t={self.t} outside (0, 1]")


@dataclass
class TrainExample:
    """One supervised pair: instruction, optional pooled audio features,
    and a response block whose first `supervised` positions are eligible
    for masking and loss."""

    instruction: TokenSeq
    audio_features: np.ndarray | None
    response: TokenSeq
    supervised: int

    def __post_init__(self) -> None:
        if not 1 <= self.supervised <= len(self.response):
            raise ContractError(
                f"supervised prefix {self.supervised} outside [1, {len(self.response)}]"
            )


def make_train_example(
    instruction: TokenSeq,
    audio_features: np.ndarray | None,
    reference: TokenSeq,
    block_length: int,
) -> TrainExample:
    """Reference filled to the block length with supervised EOS tokens.

    The terminal EOS and the EOS fill behind it are ordinary maskable,
    predictable targets; that is what makes the decoder's EOS-based early
    stop learnable from an all-MASK block, where no visible length cue
    exists.
    """
    if len(reference) + 1 > block_length:
        raise ContractError(
            f"reference length {len(reference)} + EOS exceeds block {block_length}"
        )
    resp = np.full(block_length, EOS, dtype=np.int64)
    resp[: len(reference)] = reference
    return TrainExample(
        vocab.tokens(instruction), audio_features, resp, supervised=block_length
    )


def sample_t(rng: np.random.Generator) -> float:
    """Masking time, uniform on (0, 1] (never exactly 0)."""
    return 1.0 - float(rng.random())


def forward_mask(
    r0: TokenSeq,
    t: float,
    rng: np.random.Generator,
    exact_count: bool = False,
) -> MaskedBlock:
    """Independently replace each position of r0 with MASK at probability t.

    `exact_count` switches to masking exactly ceil(t * len) uniformly chosen
    positions (variance-reduction mode; default off, Bernoulli is canonical).
    """
    if not 0.0 < t <= 1.0:
        raise ContractError(f"masking time t={t} outside (0, 1]")
    r0 = np.asarray(r0, dtype=np.int64)
    if np.any(r0 == MASK):
        raise ContractError("clean sequence already contains MASK")
    n = len(r0)
    if exact_count:
        k = int(np.ceil(t * n))
        positions = np.sort(rng.permutation(n)[:k])
    else:
        positions = np.flatnonzero(rng.random(n) < t)
    tokens = r0.copy()
    tokens[positions] = MASK
    return MaskedBlock(tokens=tokens, masked_set=positions, t=t)


def masked_ce_loss(
    logits: np.ndarray, r0: TokenSeq, block: MaskedBlock
) -> tuple[float, np.ndarray]:
    """(1/t)-weighted cross entropy over the masked positions.

    Returns (loss, dlogits); dlogits rows are exactly zero at unmasked
    positions. An empty masked set raises EmptyMaskRedraw: the caller must
    redraw (t, mask) rather than count the example as zero loss.
    """
    positions = block.masked_set
    if positions.size == 0:
        raise EmptyMaskRedraw("zero masked positions; redraw (t, mask)")
    rows = logits[positions]
    true = np.asarray(r0, dtype=np.int64)[positions]
    z = rows - rows.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1))
    logp = z[np.arange(len(positions)), true] - lse
    loss = -float(logp.sum()) / block.t
    if not np.isfinite(loss):
        raise TrainingError(f"non-finite masked CE loss ({loss})")
    drows = np.exp(z - lse[:, None])
    drows[np.arange(len(positions)), true] -= 1.0
    drows /= block.t
    dlogits = np.zeros_like(logits)
    dlogits[positions] = drows
    return loss, dlogits


def _mode_layout(
    params: Params, example: TrainExample, mode: ObjectiveMode, block_tokens: TokenSeq
) -> tuple[PromptLayout, np.ndarray | None]:
    """Layout for one objective; returns (layout, pooled features used)."""
    has_audio = example.audio_features is not None
    if mode is ObjectiveMode.AUDIO_SFT:
        if not has_audio:
            raise ContractError("audio_sft example lacks audio features")
        feats = example.audio_features
        audio = feats @ params.tensors["audio_proj"]
        return PromptLayout(example.instruction, audio, block_tokens), feats
    if has_audio:
        raise ContractError(f"{mode.value} example must not carry audio features")
    if mode is ObjectiveMode.PRETRAIN:
        return PromptLayout(vocab.tokens([]), None, block_tokens), None
    return PromptLayout(example.instruction, None, block_tokens), None


def draw_masked_block(
    example: TrainExample, rng: np.random.Generator, exact_count: bool = False
) -> MaskedBlock:
    """Draw (t, mask) over the supervised prefix, redrawing empty masks.

    Positions past `example.supervised` (the AR examples' PAD tail) are
    excluded from masking and from the loss; the returned block keeps the
    full block length with that tail untouched.
    """
    sup = example.supervised
    while True:
        t = sample_t(rng)
        partial = forward_mask(example.response[:sup], t, rng, exact_count=exact_count)
        if partial.masked_set.size:
            break
    tokens = example.response.copy()
    tokens[:sup] = partial.tokens
    return MaskedBlock(tokens=tokens, masked_set=partial.masked_set, t=partial.t)


def train_step(
    params: Params,
    examples: TrainExample | list[TrainExample],
    mode: ObjectiveMode,
    rng: np.random.Generator,
    opt: "OptimizerState",
    step: int,
    length_normalize: bool = False,
    exact_count: bool = False,
) -> tuple[float, Params, list[float]]:
    """One optimization step over a single example or a batch.

    Per example: draw (t, mask), run the mode's layout, accumulate exact
    gradients of the mean per-example loss, then apply one AdamW update at
    lr_at(schedule, step). Deterministic given (rng state, step). Returns
    (mean loss, new params, drawn t values).

    Batches whose examples share one layout shape run as a single batched
    forward/backward; the result is numerically equivalent to per-example
    accumulation (same draws, same reduction) up to GEMM summation order.
    """
    if isinstance(examples, TrainExample):
        examples = [examples]
    if not examples:
        raise ContractError("empty batch")
    blocks = [draw_masked_block(e, rng, exact_count=exact_count) for e in examples]
    losses, grads = _batch_loss_and_grads(
        params, examples, blocks, mode, length_normalize
    )
    mean_loss = float(np.mean(losses))
    if not np.isfinite(mean_loss):
        raise TrainingError(f"non-finite batch loss at step {step}: {losses}")
    lr = lr_at(opt.schedule, step)
    new_params = adamw_update(params, grads, opt.adam, opt.hyper, lr, step)
    return mean_loss, new_params, [bl.t for bl in blocks]


def _uniform_shapes(examples: list[TrainExample]) -> bool:
    first = examples[0]
    a_shape = None if first.audio_features is None else first.audio_features.shape
    for e in examples[1:]:
        e_a = None if e.audio_features is None else e.audio_features.shape
        if (
            len(e.instruction) != len(first.instruction)
            or len(e.response) != len(first.response)
            or e_a != a_shape
        ):
            return False
    return True


def _batch_loss_and_grads(
    params: Params,
    examples: list[TrainExample],
    blocks: list[MaskedBlock],
    mode: ObjectiveMode,
    length_normalize: bool,
) -> tuple[list[float], dict[str, np.ndarray]]:
    b = len(examples)
    if b > 1 and _uniform_shapes(examples):
        for e in examples:
            _check_mode(e, mode)
        instructions = np.stack(
            [e.instruction if mode is not ObjectiveMode.PRETRAIN else e.instruction[:0]
             for e in examples]
        )
        feats = None
        audio = None
        if mode is ObjectiveMode.AUDIO_SFT:
            feats = np.stack([e.audio_features for e in examples])
            audio = feats @ params.tensors["audio_proj"]
        responses = np.stack([bl.tokens for bl in blocks])
        logits, tape = forward_batch(params, instructions, audio, responses)
        losses = []
        dlogits = np.zeros_like(logits)
        for i, (example, block) in enumerate(zip(examples, blocks)):
            loss_e, dl = masked_ce_loss(logits[i], example.response, block)
            if length_normalize:
                loss_e /= float(example.supervised)
                dl /= float(example.supervised)
            losses.append(loss_e)
            dlogits[i] = dl / b
        g = backprop_batch(tape, dlogits)
        grads = g.tensors
        if feats is not None:
            grads["audio_proj"] += np.einsum("baf,bad->fd", feats, g.d_audio)
        return losses, grads

    grads = zero_grads(params)
    losses = []
    for example, block in zip(examples, blocks):
        layout, feats = _mode_layout(params, example, mode, block.tokens)
        logits, tape = forward(params, layout)
        loss_e, dl = masked_ce_loss(logits, example.response, block)
        if length_normalize:
            loss_e /= float(example.supervised)
            dl /= float(example.supervised)
        g = backprop(tape, dl / b)
        for name, arr in g.tensors.items():
            grads[name] += arr
        if feats is not None:
            grads["audio_proj"] += feats.T @ g.d_audio
        losses.append(loss_e)
    return losses, grads


def _check_mode(example: TrainExample, mode: ObjectiveMode) -> None:
    has_audio = example.audio_features is not None
    if mode is ObjectiveMode.AUDIO_SFT and not has_audio:
        raise ContractError("audio_sft example lacks audio features")
    if mode is not ObjectiveMode.AUDIO_SFT and has_audio:
        raise ContractError(f"{mode.value} example must not carry audio features")


@dataclass
class OptimizerState:
    """Everything train_step needs besides params: moments, hyper, schedule."""

    adam: AdamWState
    hyper: AdamWHyper
    schedule: LrSchedule

    @classmethod
    def fresh(
        cls, params: Params, schedule: LrSchedule, hyper: AdamWHyper | None = None
    ) -> "OptimizerState":
        return cls(AdamWState.zeros(params), hyper or AdamWHyper(), schedule)
