"""Autoregressive first-pass baseline: next-token training and greedy decode.

Shares the ModelConfig family with the mask predictor but runs with a
causal attention mask. Its response block is BOS-prefixed so the first
real token is predicted from the BOS row; decode recomputes the full
forward each step (no cache), which keeps the call count equal to the
number of emitted tokens.
"""

from __future__ import annotations

import time

import numpy as np

from ..decoding import Hypothesis, softmax
from ..diffusion import OptimizerState, TrainExample
from ..errors import ContractError, TrainingError
from ..nncore import Params, PromptLayout, adamw_update, backprop, forward, lr_at, zero_grads
from ..nncore.model import backprop_batch, forward_batch
from ..vocab import BOS, EOS, PAD, TokenSeq, tokens, truncate_at_eos


def make_ar_example(
    instruction: TokenSeq,
    audio_features: np.ndarray | None,
    reference: TokenSeq,
    block_length: int,
) -> TrainExample:
    """Response laid out as BOS + reference + EOS + PAD (block_length + 1 slots)."""
    if len(reference) + 1 > block_length:
        raise ContractError(
            f"reference length {len(reference)} + EOS exceeds block {block_length}"
        )
    resp = np.full(block_length + 1, PAD, dtype=np.int64)
    resp[0] = BOS
    resp[1 : 1 + len(reference)] = reference
    resp[1 + len(reference)] = EOS
    return TrainExample(
        tokens(instruction), audio_features, resp, supervised=len(reference) + 2
    )


def _example_dlogits(logits, example):
    """Per-example next-token CE and its gradient rows (unscaled)."""
    sup = example.supervised  # BOS..EOS inclusive
    n_pred = sup - 1  # rows 0..sup-2 predict tokens 1..sup-1
    rows = logits[:n_pred]
    targets = example.response[1:sup]
    z = rows - rows.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1))
    logp = z[np.arange(n_pred), targets] - lse
    loss_e = -float(logp.mean())
    drows = np.exp(z - lse[:, None])
    drows[np.arange(n_pred), targets] -= 1.0
    dlogits = np.zeros_like(logits)
    dlogits[:n_pred] = drows / n_pred
    return loss_e, dlogits


def ar_train_step(
    params: Params,
    examples: TrainExample | list[TrainExample],
    opt: OptimizerState,
    step: int,
) -> tuple[float, Params]:
    """Standard next-token cross entropy over the response, mean per token."""
    if isinstance(examples, TrainExample):
        examples = [examples]
    if not examples:
        raise ContractError("empty batch")
    b = len(examples)
    if b > 1 and all(e.audio_features is not None for e in examples):
        feats = np.stack([e.audio_features for e in examples])
        audio = feats @ params.tensors["audio_proj"]
        instructions = np.stack([e.instruction for e in examples])
        responses = np.stack([e.response for e in examples])
        logits, tape = forward_batch(params, instructions, audio, responses)
        losses = []
        dlogits = np.zeros_like(logits)
        for i, example in enumerate(examples):
            loss_e, dl = _example_dlogits(logits[i], example)
            losses.append(loss_e)
            dlogits[i] = dl / b
        g = backprop_batch(tape, dlogits)
        grads = g.tensors
        grads["audio_proj"] += np.einsum("baf,bad->fd", feats, g.d_audio)
    else:
        grads = zero_grads(params)
        losses = []
        for example in examples:
            feats = example.audio_features
            audio = None if feats is None else feats @ params.tensors["audio_proj"]
            layout = PromptLayout(example.instruction, audio, example.response)
            logits, tape = forward(params, layout)
            loss_e, dl = _example_dlogits(logits, example)
            g = backprop(tape, dl / b)
            for name, arr in g.tensors.items():
                grads[name] += arr
            if feats is not None:
                grads["audio_proj"] += feats.T @ g.d_audio
            losses.append(loss_e)
    mean_loss = float(np.mean(losses))
    if not np.isfinite(mean_loss):
        raise TrainingError(f"non-finite AR batch loss at step {step}")
    lr = lr_at(opt.schedule, step)
    return mean_loss, adamw_update(params, grads, opt.adam, opt.hyper, lr, step)


def ar_greedy_transcribe(
    ar_params: Params,
    instruction: TokenSeq,
    audio: np.ndarray | None,
    max_len: int,
) -> Hypothesis:
    """Greedy left-to-right decode until EOS or max_len emitted tokens.

    Each step recomputes the full forward; denoiser_calls equals the
    emitted length (EOS included). Hitting max_len without an EOS sets the
    truncation flag.
    """
    if max_len < 1:
        raise ContractError("max_len must be >= 1")
    t0 = time.perf_counter()
    instruction = tokens(instruction)
    emitted: list[int] = []
    confs: list[float] = []
    calls = 0
    while len(emitted) < max_len:
        resp = np.array([BOS] + emitted, dtype=np.int64)
        logits, _ = forward(ar_params, PromptLayout(instruction, audio, resp))
        calls += 1
        probs = softmax(logits[-1])
        tok = int(probs.argmax())
        emitted.append(tok)
        confs.append(float(probs[tok]))
        if tok == EOS:
            break
    block = np.array(emitted, dtype=np.int64)
    out = truncate_at_eos(block)
    return Hypothesis(
        tokens=out,
        confidences=np.array(confs[: len(out)], dtype=np.float64),
        denoiser_calls=calls,
        elapsed=time.perf_counter() - t0,
        block=block,
        truncated=EOS not in emitted,
    )
