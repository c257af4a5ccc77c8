"""Split-level runners shared by the CLI, the sweep driver, and tests.

Utterances decode independently; everything here runs serially so timed
rows measure one decode at a time (parallelism 1).
"""

from __future__ import annotations

import numpy as np

from ..decoding import DecodeConfig, diffusion_decode, semi_ar_decode
from ..deliberation import DeliberationConfig, FirstPassTranscript, deliberate
from ..errors import ContractError
from ..nncore import Params
from ..toytask import ASR_INSTRUCTION, Utterance, ar_greedy_transcribe
from ..toytask.frontend import frontend_pool, pad_windows
from ..vocab import tokens, truncate_at_eos
from .hypio import HypRecord
from .metrics import WerBreakdown, aggregate, wer


def _audio_embeds(
    params: Params, utt: Utterance, pool_window: int, audio_pad: int
) -> np.ndarray | None:
    if params.config.audio_dim == 0:
        return None
    pooled = frontend_pool(utt.frames, pool_window, params.tensors["audio_proj"])
    return pad_windows(pooled, audio_pad)


def decode_split(
    params: Params,
    utterances: list[Utterance],
    cfg: DecodeConfig,
    pool_window: int,
    audio_pad: int = 0,
) -> list[HypRecord]:
    """Diffusion decode (M=1) or semi-AR decode (M>1) over a whole split."""
    fn = diffusion_decode if cfg.M == 1 else semi_ar_decode
    out = []
    for utt in utterances:
        audio = _audio_embeds(params, utt, pool_window, audio_pad)
        hyp = fn(params, ASR_INSTRUCTION, audio, cfg)
        out.append(
            HypRecord(
                id=utt.id,
                tokens=hyp.tokens.tolist(),
                confidences=hyp.confidences.tolist(),
                duration_s=utt.duration,
                elapsed_s=hyp.elapsed,
                denoiser_calls=hyp.denoiser_calls,
                provenance={
                    "system": "diffusion" if cfg.M == 1 else "semi_ar",
                    "L": cfg.L,
                    "N": cfg.N,
                    "M": cfg.M,
                    "early_stop": cfg.early_stop,
                },
            )
        )
    return out


def ar_split(
    params: Params,
    utterances: list[Utterance],
    pool_window: int,
    max_len: int,
    audio_pad: int = 0,
) -> list[HypRecord]:
    out = []
    for utt in utterances:
        audio = _audio_embeds(params, utt, pool_window, audio_pad)
        hyp = ar_greedy_transcribe(params, ASR_INSTRUCTION, audio, max_len)
        out.append(
            HypRecord(
                id=utt.id,
                tokens=hyp.tokens.tolist(),
                confidences=hyp.confidences.tolist(),
                duration_s=utt.duration,
                elapsed_s=hyp.elapsed,
                denoiser_calls=hyp.denoiser_calls,
                truncated=hyp.truncated,
                provenance={"system": "ar", "max_len": max_len},
            )
        )
    return out


def deliberate_split(
    params: Params,
    utterances: list[Utterance],
    first_pass: list[HypRecord],
    cfg: DeliberationConfig,
    pool_window: int,
    audio_pad: int = 0,
) -> list[HypRecord]:
    """Refine first-pass hypotheses; empty transcripts pass through unchanged.

    Each utterance gets its own generator derived from (cfg.seed, index) so
    results do not depend on processing order.
    """
    by_id = {u.id: u for u in utterances}
    out = []
    for idx, fp in enumerate(first_pass):
        if fp.id not in by_id:
            raise ContractError(f"hypothesis {fp.id} not in the given split")
        utt = by_id[fp.id]
        prov = {
            "system": "deliberation",
            "strategy": cfg.strategy,
            "mask_ratio": cfg.mask_ratio,
            "sub_blocks": cfg.sub_blocks,
            "use_audio": cfg.use_audio,
            "source": fp.provenance.get("system", "unknown"),
        }
        if not fp.tokens:
            out.append(
                HypRecord(
                    id=fp.id,
                    tokens=[],
                    confidences=[],
                    duration_s=fp.duration_s,
                    elapsed_s=0.0,
                    denoiser_calls=0,
                    provenance={**prov, "skipped": "empty first pass"},
                )
            )
            continue
        audio = _audio_embeds(params, utt, pool_window, audio_pad) if cfg.use_audio else None
        transcript = FirstPassTranscript(
            tokens=tokens(fp.tokens), source=prov["source"], duration=fp.duration_s
        )
        rng = np.random.default_rng([cfg.seed, idx])
        result = deliberate(params, ASR_INSTRUCTION, audio, transcript, cfg, rng=rng)
        refined = truncate_at_eos(result.transcript.tokens)
        out.append(
            HypRecord(
                id=fp.id,
                tokens=refined.tolist(),
                confidences=[],
                duration_s=fp.duration_s,
                elapsed_s=result.elapsed,
                denoiser_calls=result.denoiser_calls,
                provenance=prov,
            )
        )
    return out


def evaluate(
    utterances: list[Utterance], hypotheses: list[HypRecord]
) -> tuple[WerBreakdown, list[tuple[str, WerBreakdown]]]:
    """Aggregate WER plus per-utterance breakdowns (id order of hypotheses)."""
    by_id = {u.id: u for u in utterances}
    rows = []
    for hyp in hypotheses:
        if hyp.id not in by_id:
            raise ContractError(f"hypothesis {hyp.id} has no reference")
        rows.append((hyp.id, wer(by_id[hyp.id].reference, np.array(hyp.tokens, dtype=np.int64))))
    return aggregate([b for _, b in rows]), rows
