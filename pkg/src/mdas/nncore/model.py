"""Transformer forward pass with a recorded tape and exact reverse-mode gradients.

One stack serves both roles in the toolkit: with full attention it is the
mask predictor used by the diffusion objectives and decoders; with a causal
mask it is the autoregressive first-pass baseline. Everything is plain
NumPy so the backward pass is exact and auditable against finite
differences.

Layout convention (one sequence, no batch axis): instruction tokens, then
pooled-and-projected audio embeddings, then the response block. Audio rows
bypass the token embedding table and enter the residual stream directly;
the learned positional table is added to every row. Logits are returned
for response positions only.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigurationError, ContractError, LengthError
from ..vocab import TokenSeq
from .config import ModelConfig

_RMS_EPS = 1e-6


# ---------------------------------------------------------------------------
# Parameters


def tensor_specs(config: ModelConfig) -> list[tuple[str, tuple[int, ...], str]]:
    """Ordered (name, shape, kind) for every tensor; kind in {matrix, bias, gain}."""
    d, f = config.model_dim, config.ffn_dim
    specs: list[tuple[str, tuple[int, ...], str]] = [
        ("tok_emb", (config.vocab_size, d), "matrix"),
        ("pos_emb", (config.max_positions, d), "matrix"),
    ]
    if config.audio_dim > 0:
        specs.append(("audio_proj", (config.audio_dim, d), "matrix"))
    for i in range(config.num_layers):
        p = f"layers.{i}."
        specs += [
            (p + "attn_norm_g", (d,), "gain"),
            (p + "attn_wq", (d, d), "matrix"),
            (p + "attn_bq", (d,), "bias"),
            (p + "attn_wk", (d, d), "matrix"),
            (p + "attn_bk", (d,), "bias"),
            (p + "attn_wv", (d, d), "matrix"),
            (p + "attn_bv", (d,), "bias"),
            (p + "attn_wo", (d, d), "matrix"),
            (p + "attn_bo", (d,), "bias"),
            # Learned additive attention bias per head, indexed by relative
            # offset j - i; absolute tables alone cannot express the
            # neighbor lookups masked prediction depends on.
            (p + "attn_rel_bias", (config.num_heads, 2 * config.max_positions - 1), "bias"),
            (p + "ffn_norm_g", (d,), "gain"),
            (p + "ffn_w1", (d, f), "matrix"),
            (p + "ffn_b1", (f,), "bias"),
            (p + "ffn_w2", (f, d), "matrix"),
            (p + "ffn_b2", (d,), "bias"),
        ]
    specs += [
        ("out_norm_g", (d,), "gain"),
        ("out_proj", (d, config.vocab_size), "matrix"),
    ]
    return specs


@dataclass
class Params:
    """Immutable-by-convention weight set; share freely across threads."""

    config: ModelConfig
    tensors: dict[str, np.ndarray]

    def num_params(self) -> int:
        return sum(t.size for t in self.tensors.values())

    def copy(self) -> "Params":
        return Params(self.config, {k: v.copy() for k, v in self.tensors.items()})


def init_params(config: ModelConfig, seed: int) -> Params:
    """Scaled-normal init: matrices ~ N(0, 1/model_dim), biases 0, gains 1."""
    config.validate()
    rng = np.random.default_rng(seed)
    std = 1.0 / math.sqrt(config.model_dim)
    tensors: dict[str, np.ndarray] = {}
    for name, shape, kind in tensor_specs(config):
        if kind == "matrix":
            t = rng.standard_normal(shape) * std
        elif kind == "gain":
            t = np.ones(shape)
        else:
            t = np.zeros(shape)
        tensors[name] = t.astype(config.dtype)
    return Params(config, tensors)


def zero_grads(params: Params) -> dict[str, np.ndarray]:
    return {k: np.zeros_like(v) for k, v in params.tensors.items()}


# ---------------------------------------------------------------------------
# Layout


@dataclass(frozen=True)
class PromptLayout:
    """Ordered context: instruction tokens, audio embeddings, response block.

    `audio` rows must already have width model_dim (pool + project first);
    None means the layout has no acoustic segment at all.
    """

    instruction: TokenSeq
    audio: np.ndarray | None
    response: TokenSeq

    @property
    def instruction_len(self) -> int:
        return len(self.instruction)

    @property
    def audio_len(self) -> int:
        return 0 if self.audio is None else self.audio.shape[0]

    @property
    def response_len(self) -> int:
        return len(self.response)

    @property
    def total_len(self) -> int:
        return self.instruction_len + self.audio_len + self.response_len


# ---------------------------------------------------------------------------
# Forward


@dataclass
class _LayerTape:
    x_in: np.ndarray
    s1: np.ndarray
    h1: np.ndarray
    q: np.ndarray
    k: np.ndarray
    v: np.ndarray
    attn_w: np.ndarray  # (H, T, T)
    ctx: np.ndarray
    x_mid: np.ndarray
    s2: np.ndarray
    h2: np.ndarray
    f1: np.ndarray
    act: np.ndarray


@dataclass
class Tape:
    """Activations of one forward pass, sufficient for exact backprop."""

    params: Params
    layout: PromptLayout
    layers: list[_LayerTape] = field(default_factory=list)
    x_out: np.ndarray | None = None
    sf: np.ndarray | None = None
    offset_idx: np.ndarray | None = None


def _rmsnorm(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Row-wise x / rms(x); returns (normalized, scale per row)."""
    s = ((x * x).mean(axis=1) + _RMS_EPS) ** -0.5
    return x * s[:, None], s


def _rmsnorm_bwd(dn: np.ndarray, x: np.ndarray, s: np.ndarray) -> np.ndarray:
    d = x.shape[1]
    dot = (x * dn).sum(axis=1)
    return s[:, None] * dn - (s**3 / d * dot)[:, None] * x


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # sigma(x) = (1 + tanh(x/2)) / 2: one stable ufunc pass, no overflow.
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _heads(x: np.ndarray, num_heads: int) -> np.ndarray:
    """(T, d) -> (H, T, head_dim)."""
    t, d = x.shape
    return x.reshape(t, num_heads, d // num_heads).transpose(1, 0, 2)


def _unheads(x: np.ndarray) -> np.ndarray:
    """(H, T, head_dim) -> (T, d)."""
    h, t, hd = x.shape
    return x.transpose(1, 0, 2).reshape(t, h * hd)


def forward(params: Params, layout: PromptLayout) -> tuple[np.ndarray, Tape]:
    """Run the stack over a layout; logits (response_len, vocab) plus tape.

    Pure function of (params, layout): repeated calls agree bit-exactly.
    """
    cfg = params.config
    w = params.tensors
    dtype = cfg.dtype
    instr, audio, resp = layout.instruction, layout.audio, layout.response

    t_total = layout.total_len
    if t_total > cfg.max_positions:
        raise LengthError(
            f"layout length {t_total} exceeds max_positions {cfg.max_positions}"
        )
    if layout.response_len < 1:
        raise ContractError("layout needs a nonempty response block")
    if audio is not None and audio.shape[1] != cfg.model_dim:
        raise ContractError(
            f"audio embeddings have width {audio.shape[1]}, expected {cfg.model_dim}"
        )
    for seg in (instr, resp):
        if len(seg) and (seg.min() < 0 or seg.max() >= cfg.vocab_size):
            raise ContractError("token id outside vocabulary")

    i_len, a_len = layout.instruction_len, layout.audio_len
    x = np.empty((t_total, cfg.model_dim), dtype=dtype)
    if i_len:
        x[:i_len] = w["tok_emb"][instr]
    if a_len:
        x[i_len : i_len + a_len] = audio.astype(dtype, copy=False)
    x[i_len + a_len :] = w["tok_emb"][resp]
    x = x + w["pos_emb"][:t_total]

    causal = cfg.attention_mode == "causal"
    mask = None
    if causal:
        mask = np.triu(np.full((t_total, t_total), -np.inf, dtype=dtype), k=1)
    # offset_idx[i, j] = (j - i) + max_positions - 1, indexes the rel-bias row
    pos = np.arange(t_total)
    offset_idx = np.subtract.outer(-pos, -pos) + cfg.max_positions - 1

    scale = 1.0 / math.sqrt(cfg.head_dim)
    tape = Tape(params=params, layout=layout)
    tape.offset_idx = offset_idx

    for li in range(cfg.num_layers):
        p = f"layers.{li}."
        x_in = x
        n1, s1 = _rmsnorm(x_in)
        h1 = n1 * w[p + "attn_norm_g"]
        q = h1 @ w[p + "attn_wq"] + w[p + "attn_bq"]
        k = h1 @ w[p + "attn_wk"] + w[p + "attn_bk"]
        v = h1 @ w[p + "attn_wv"] + w[p + "attn_bv"]
        q3, k3, v3 = (_heads(a, cfg.num_heads) for a in (q, k, v))
        scores = q3 @ k3.transpose(0, 2, 1) * scale
        scores += w[p + "attn_rel_bias"][:, offset_idx]
        if mask is not None:
            scores = scores + mask
        scores -= scores.max(axis=2, keepdims=True)
        ew = np.exp(scores)
        attn_w = ew / ew.sum(axis=2, keepdims=True)
        ctx = _unheads(attn_w @ v3)
        x_mid = x_in + ctx @ w[p + "attn_wo"] + w[p + "attn_bo"]

        n2, s2 = _rmsnorm(x_mid)
        h2 = n2 * w[p + "ffn_norm_g"]
        f1 = h2 @ w[p + "ffn_w1"] + w[p + "ffn_b1"]
        act = f1 * _sigmoid(f1)
        x = x_mid + act @ w[p + "ffn_w2"] + w[p + "ffn_b2"]

        tape.layers.append(
            _LayerTape(x_in, s1, h1, q, k, v, attn_w, ctx, x_mid, s2, h2, f1, act)
        )

    nf, sf = _rmsnorm(x)
    hf = nf * w["out_norm_g"]
    logits = hf[i_len + a_len :] @ w["out_proj"]
    tape.x_out, tape.sf = x, sf
    return logits, tape


# ---------------------------------------------------------------------------
# Backward


@dataclass
class Grads:
    """Parameter gradients plus the gradient at the audio embedding inputs.

    `d_audio` lets the caller chain through whatever produced the audio
    embeddings (the pooled-feature projection during end-to-end training).
    """

    tensors: dict[str, np.ndarray]
    d_audio: np.ndarray | None


def backprop(tape: Tape, dlogits: np.ndarray) -> Grads:
    """Exact reverse-mode gradients of (dlogits . logits) w.r.t. all params."""
    params, layout = tape.params, tape.layout
    cfg = params.config
    w = params.tensors
    resp_len = layout.response_len
    if dlogits.shape != (resp_len, cfg.vocab_size):
        raise ContractError(
            f"dlogits shape {dlogits.shape} does not match "
            f"(response_len={resp_len}, vocab={cfg.vocab_size})"
        )

    g = zero_grads(params)
    i_len, a_len = layout.instruction_len, layout.audio_len
    t_total = layout.total_len
    off = i_len + a_len
    dtype = cfg.dtype
    dlogits = dlogits.astype(dtype, copy=False)
    scale = 1.0 / math.sqrt(cfg.head_dim)

    nf = tape.x_out * tape.sf[:, None]
    hf = nf * w["out_norm_g"]
    g["out_proj"] += hf[off:].T @ dlogits
    dhf = np.zeros((t_total, cfg.model_dim), dtype=dtype)
    dhf[off:] = dlogits @ w["out_proj"].T
    g["out_norm_g"] += (dhf * nf).sum(axis=0)
    dx = _rmsnorm_bwd(dhf * w["out_norm_g"], tape.x_out, tape.sf)

    for li in range(cfg.num_layers - 1, -1, -1):
        p = f"layers.{li}."
        lt = tape.layers[li]

        # FFN block: x = x_mid + silu(h2 @ W1 + b1) @ W2 + b2
        df2 = dx
        g[p + "ffn_w2"] += lt.act.T @ df2
        g[p + "ffn_b2"] += df2.sum(axis=0)
        dact = df2 @ w[p + "ffn_w2"].T
        sig = _sigmoid(lt.f1)
        df1 = dact * sig * (1.0 + lt.f1 * (1.0 - sig))
        g[p + "ffn_w1"] += lt.h2.T @ df1
        g[p + "ffn_b1"] += df1.sum(axis=0)
        dh2 = df1 @ w[p + "ffn_w1"].T
        n2 = lt.x_mid * lt.s2[:, None]
        g[p + "ffn_norm_g"] += (dh2 * n2).sum(axis=0)
        dx_mid = dx + _rmsnorm_bwd(dh2 * w[p + "ffn_norm_g"], lt.x_mid, lt.s2)

        # Attention block: x_mid = x_in + ctx @ Wo + bo
        g[p + "attn_wo"] += lt.ctx.T @ dx_mid
        g[p + "attn_bo"] += dx_mid.sum(axis=0)
        dctx = dx_mid @ w[p + "attn_wo"].T
        dctx3 = _heads(dctx, cfg.num_heads)
        v3 = _heads(lt.v, cfg.num_heads)
        q3 = _heads(lt.q, cfg.num_heads)
        k3 = _heads(lt.k, cfg.num_heads)
        dw_attn = dctx3 @ v3.transpose(0, 2, 1)
        ds = lt.attn_w * (dw_attn - (dw_attn * lt.attn_w).sum(axis=2, keepdims=True))
        for head in range(cfg.num_heads):
            np.add.at(g[p + "attn_rel_bias"][head], tape.offset_idx, ds[head])
        dq = _unheads(ds @ k3 * scale)
        dk = _unheads(ds.transpose(0, 2, 1) @ q3 * scale)
        dv = _unheads(lt.attn_w.transpose(0, 2, 1) @ dctx3)
        dh1 = dq @ w[p + "attn_wq"].T + dk @ w[p + "attn_wk"].T + dv @ w[p + "attn_wv"].T
        g[p + "attn_wq"] += lt.h1.T @ dq
        g[p + "attn_bq"] += dq.sum(axis=0)
        g[p + "attn_wk"] += lt.h1.T @ dk
        g[p + "attn_bk"] += dk.sum(axis=0)
        g[p + "attn_wv"] += lt.h1.T @ dv
        g[p + "attn_bv"] += dv.sum(axis=0)
        n1 = lt.x_in * lt.s1[:, None]
        g[p + "attn_norm_g"] += (dh1 * n1).sum(axis=0)
        dx = dx_mid + _rmsnorm_bwd(dh1 * w[p + "attn_norm_g"], lt.x_in, lt.s1)

    g["pos_emb"][:t_total] += dx
    if i_len:
        np.add.at(g["tok_emb"], layout.instruction, dx[:i_len])
    np.add.at(g["tok_emb"], layout.response, dx[off:])
    d_audio = dx[i_len:off].copy() if a_len else None
    return Grads(tensors=g, d_audio=d_audio)


# ---------------------------------------------------------------------------
# Batched twin for training
#
# Training batches share one layout shape (instruction, padded audio,
# response block), so the whole batch runs as single GEMMs. Same math as
# the single-layout path; used internally by the train steps.


@dataclass
class BatchTape:
    params: Params
    instructions: np.ndarray  # (B, I) int
    audio: np.ndarray | None  # (B, A, d)
    responses: np.ndarray  # (B, R) int
    offset_idx: np.ndarray
    layers: list[_LayerTape] = field(default_factory=list)
    x_out: np.ndarray | None = None
    sf: np.ndarray | None = None


def _rmsnorm_b(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    s = ((x * x).mean(axis=-1) + _RMS_EPS) ** -0.5
    return x * s[..., None], s


def _rmsnorm_bwd_b(dn: np.ndarray, x: np.ndarray, s: np.ndarray) -> np.ndarray:
    d = x.shape[-1]
    dot = (x * dn).sum(axis=-1)
    return s[..., None] * dn - (s**3 / d * dot)[..., None] * x


def _heads_b(x: np.ndarray, num_heads: int) -> np.ndarray:
    """(B, T, d) -> (B, H, T, head_dim)."""
    b, t, d = x.shape
    return x.reshape(b, t, num_heads, d // num_heads).transpose(0, 2, 1, 3)


def _unheads_b(x: np.ndarray) -> np.ndarray:
    b, h, t, hd = x.shape
    return x.transpose(0, 2, 1, 3).reshape(b, t, h * hd)


def forward_batch(
    params: Params,
    instructions: np.ndarray,
    audio: np.ndarray | None,
    responses: np.ndarray,
) -> tuple[np.ndarray, BatchTape]:
    """Forward over B same-shape layouts; logits (B, response_len, vocab)."""
    cfg = params.config
    w = params.tensors
    dtype = cfg.dtype
    b, i_len = instructions.shape
    a_len = 0 if audio is None else audio.shape[1]
    r_len = responses.shape[1]
    t_total = i_len + a_len + r_len
    if t_total > cfg.max_positions:
        raise LengthError(
            f"layout length {t_total} exceeds max_positions {cfg.max_positions}"
        )

    x = np.empty((b, t_total, cfg.model_dim), dtype=dtype)
    if i_len:
        x[:, :i_len] = w["tok_emb"][instructions]
    if a_len:
        x[:, i_len : i_len + a_len] = audio.astype(dtype, copy=False)
    x[:, i_len + a_len :] = w["tok_emb"][responses]
    x = x + w["pos_emb"][:t_total]

    mask = None
    if cfg.attention_mode == "causal":
        mask = np.triu(np.full((t_total, t_total), -np.inf, dtype=dtype), k=1)
    pos = np.arange(t_total)
    offset_idx = np.subtract.outer(-pos, -pos) + cfg.max_positions - 1
    scale = 1.0 / math.sqrt(cfg.head_dim)
    tape = BatchTape(params, instructions, audio, responses, offset_idx)

    for li in range(cfg.num_layers):
        p = f"layers.{li}."
        x_in = x
        n1, s1 = _rmsnorm_b(x_in)
        h1 = n1 * w[p + "attn_norm_g"]
        q = h1 @ w[p + "attn_wq"] + w[p + "attn_bq"]
        k = h1 @ w[p + "attn_wk"] + w[p + "attn_bk"]
        v = h1 @ w[p + "attn_wv"] + w[p + "attn_bv"]
        q4, k4, v4 = (_heads_b(a, cfg.num_heads) for a in (q, k, v))
        scores = q4 @ k4.transpose(0, 1, 3, 2) * scale
        scores += w[p + "attn_rel_bias"][:, offset_idx]
        if mask is not None:
            scores = scores + mask
        scores -= scores.max(axis=3, keepdims=True)
        ew = np.exp(scores)
        attn_w = ew / ew.sum(axis=3, keepdims=True)
        ctx = _unheads_b(attn_w @ v4)
        x_mid = x_in + ctx @ w[p + "attn_wo"] + w[p + "attn_bo"]

        n2, s2 = _rmsnorm_b(x_mid)
        h2 = n2 * w[p + "ffn_norm_g"]
        f1 = h2 @ w[p + "ffn_w1"] + w[p + "ffn_b1"]
        act = f1 * _sigmoid(f1)
        x = x_mid + act @ w[p + "ffn_w2"] + w[p + "ffn_b2"]
        tape.layers.append(
            _LayerTape(x_in, s1, h1, q, k, v, attn_w, ctx, x_mid, s2, h2, f1, act)
        )

    nf, sf = _rmsnorm_b(x)
    hf = nf * w["out_norm_g"]
    logits = hf[:, i_len + a_len :] @ w["out_proj"]
    tape.x_out, tape.sf = x, sf
    return logits, tape


def backprop_batch(tape: BatchTape, dlogits: np.ndarray) -> Grads:
    """Gradients summed over the batch; d_audio keeps its batch axis."""
    params = tape.params
    cfg = params.config
    w = params.tensors
    b, i_len = tape.instructions.shape
    a_len = 0 if tape.audio is None else tape.audio.shape[1]
    t_total = tape.x_out.shape[1]
    off = i_len + a_len
    dtype = cfg.dtype
    dlogits = dlogits.astype(dtype, copy=False)
    scale = 1.0 / math.sqrt(cfg.head_dim)
    g = zero_grads(params)

    def _flat(a):
        return a.reshape(-1, a.shape[-1])

    nf = tape.x_out * tape.sf[..., None]
    hf = nf * w["out_norm_g"]
    g["out_proj"] += _flat(hf[:, off:]).T @ _flat(dlogits)
    dhf = np.zeros((b, t_total, cfg.model_dim), dtype=dtype)
    dhf[:, off:] = dlogits @ w["out_proj"].T
    g["out_norm_g"] += (dhf * nf).sum(axis=(0, 1))
    dx = _rmsnorm_bwd_b(dhf * w["out_norm_g"], tape.x_out, tape.sf)

    for li in range(cfg.num_layers - 1, -1, -1):
        p = f"layers.{li}."
        lt = tape.layers[li]
        df2 = dx
        g[p + "ffn_w2"] += _flat(lt.act).T @ _flat(df2)
        g[p + "ffn_b2"] += df2.sum(axis=(0, 1))
        dact = df2 @ w[p + "ffn_w2"].T
        sig = _sigmoid(lt.f1)
        df1 = dact * sig * (1.0 + lt.f1 * (1.0 - sig))
        g[p + "ffn_w1"] += _flat(lt.h2).T @ _flat(df1)
        g[p + "ffn_b1"] += df1.sum(axis=(0, 1))
        dh2 = df1 @ w[p + "ffn_w1"].T
        n2 = lt.x_mid * lt.s2[..., None]
        g[p + "ffn_norm_g"] += (dh2 * n2).sum(axis=(0, 1))
        dx_mid = dx + _rmsnorm_bwd_b(dh2 * w[p + "ffn_norm_g"], lt.x_mid, lt.s2)

        g[p + "attn_wo"] += _flat(lt.ctx).T @ _flat(dx_mid)
        g[p + "attn_bo"] += dx_mid.sum(axis=(0, 1))
        dctx = dx_mid @ w[p + "attn_wo"].T
        dctx4 = _heads_b(dctx, cfg.num_heads)
        v4 = _heads_b(lt.v, cfg.num_heads)
        q4 = _heads_b(lt.q, cfg.num_heads)
        k4 = _heads_b(lt.k, cfg.num_heads)
        dw_attn = dctx4 @ v4.transpose(0, 1, 3, 2)
        ds = lt.attn_w * (dw_attn - (dw_attn * lt.attn_w).sum(axis=3, keepdims=True))
        ds_heads = ds.sum(axis=0)  # (H, T, T)
        for head in range(cfg.num_heads):
            np.add.at(g[p + "attn_rel_bias"][head], tape.offset_idx, ds_heads[head])
        dq = _unheads_b(ds @ k4 * scale)
        dk = _unheads_b(ds.transpose(0, 1, 3, 2) @ q4 * scale)
        dv = _unheads_b(lt.attn_w.transpose(0, 1, 3, 2) @ dctx4)
        dh1 = dq @ w[p + "attn_wq"].T + dk @ w[p + "attn_wk"].T + dv @ w[p + "attn_wv"].T
        h1_flat = _flat(lt.h1)
        g[p + "attn_wq"] += h1_flat.T @ _flat(dq)
        g[p + "attn_bq"] += dq.sum(axis=(0, 1))
        g[p + "attn_wk"] += h1_flat.T @ _flat(dk)
        g[p + "attn_bk"] += dk.sum(axis=(0, 1))
        g[p + "attn_wv"] += h1_flat.T @ _flat(dv)
        g[p + "attn_bv"] += dv.sum(axis=(0, 1))
        n1 = lt.x_in * lt.s1[..., None]
        g[p + "attn_norm_g"] += (dh1 * n1).sum(axis=(0, 1))
        dx = dx_mid + _rmsnorm_bwd_b(dh1 * w[p + "attn_norm_g"], lt.x_in, lt.s1)

    g["pos_emb"][:t_total] += dx.sum(axis=0)
    if i_len:
        np.add.at(g["tok_emb"], tape.instructions.ravel(), dx[:, :i_len].reshape(-1, cfg.model_dim))
    np.add.at(g["tok_emb"], tape.responses.ravel(), dx[:, off:].reshape(-1, cfg.model_dim))
    d_audio = dx[:, i_len:off].copy() if a_len else None
    return Grads(tensors=g, d_audio=d_audio)
