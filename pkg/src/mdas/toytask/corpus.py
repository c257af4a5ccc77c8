"""Synthetic speech-like corpus.

References are drawn from a fixed random bigram source (learnable
structure); each token emits `frames_per_token` acoustic frames equal to
its unit-norm prototype vector plus Gaussian noise. The noise level
differs per split: train/dev/test_clean use sigma_clean, test_other uses
sigma_other, giving an easy/hard split analog.

Everything is reproducible byte-for-byte from (config, seed): the language
and prototypes hash off the corpus seed, and every utterance uses its own
generator derived from (seed, split, index), so generation order does not
matter.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np

from ..errors import ConfigurationError, ContractError
from ..vocab import NUM_RESERVED, TokenSeq

SPLITS = ("train", "dev", "test_clean", "test_other")
_SPLIT_IDS = {name: i for i, name in enumerate(SPLITS)}


@dataclass(frozen=True)
class CorpusConfig:
    num_content: int = 32
    min_len: int = 3
    max_len: int = 24
    frames_per_token: int = 4
    feature_dim: int = 16
    noise_sigma_clean: float = 0.4
    noise_sigma_other: float = 0.7
    # Cosine similarity within prototype pairs (2k, 2k+1): the toy analog of
    # homophones. At 1.0 pair members are acoustically identical, so member
    # identity is recoverable only from token context; 0 disables pairing.
    pair_similarity: float = 1.0
    # With pairing on, a transition into a pair puts this fraction of its
    # mass on one member (chosen per source token). Conditionals stay sharp
    # while pair members' marginals even out, so context, not frequency,
    # resolves the member.
    pair_branch_bias: float = 0.9
    train_size: int = 20000
    dev_size: int = 1000
    test_clean_size: int = 1000
    test_other_size: int = 1000
    frame_period: float = 0.025
    seed: int = 0

    def validate(self) -> None:
        if self.num_content < 2:
            raise ConfigurationError("need at least 2 content tokens")
        if not 1 <= self.min_len <= self.max_len:
            raise ConfigurationError("need 1 <= min_len <= max_len")
        if self.frames_per_token < 1 or self.feature_dim < 1:
            raise ConfigurationError("frames_per_token and feature_dim must be >= 1")
        if self.noise_sigma_other <= self.noise_sigma_clean:
            raise ConfigurationError("noise_sigma_other must exceed noise_sigma_clean")
        if self.frame_period <= 0:
            raise ConfigurationError("frame_period must be positive")
        if not 0.0 <= self.pair_similarity <= 1.0:
            raise ConfigurationError("pair_similarity must be in [0, 1]")
        if not 0.5 <= self.pair_branch_bias < 1.0:
            raise ConfigurationError("pair_branch_bias must be in [0.5, 1)")

    def split_size(self, split: str) -> int:
        return {
            "train": self.train_size,
            "dev": self.dev_size,
            "test_clean": self.test_clean_size,
            "test_other": self.test_other_size,
        }[split]

    def split_sigma(self, split: str) -> float:
        return self.noise_sigma_other if split == "test_other" else self.noise_sigma_clean

    def audio_windows(self, pool_window: int) -> int:
        """Pooled rows of the longest utterance; the fixed audio segment length."""
        return -(-(self.max_len * self.frames_per_token) // pool_window)


@dataclass
class Utterance:
    id: str
    reference: TokenSeq  # content token ids (>= NUM_RESERVED)
    frames: np.ndarray  # (num_frames, feature_dim) float32
    duration: float

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]


@dataclass
class LanguageModel:
    """Fixed bigram source over content tokens (indices 0..C-1)."""

    initial: np.ndarray  # (C,)
    transitions: np.ndarray  # (C, C) rows sum to 1
    prototypes: np.ndarray  # (C, feature_dim) unit rows


def build_language(cfg: CorpusConfig) -> LanguageModel:
    rng = np.random.default_rng([cfg.seed, 101])
    c = cfg.num_content
    if cfg.pair_similarity > 0.0:
        initial, trans = _paired_source(cfg, rng)
    else:
        logits = rng.normal(0.0, 3.0, size=(c, c))
        trans = np.exp(logits - logits.max(axis=1, keepdims=True))
        trans /= trans.sum(axis=1, keepdims=True)
        init_logits = rng.normal(0.0, 1.0, size=c)
        initial = np.exp(init_logits - init_logits.max())
        initial /= initial.sum()
    protos = _build_prototypes(cfg, rng)
    return LanguageModel(initial=initial, transitions=trans, prototypes=protos)


def _paired_source(cfg: CorpusConfig, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Bigram source whose pair members differ in conditionals, not marginals.

    Transitions first pick a target pair (peaky softmax rows), then give
    `pair_branch_bias` of that mass to one member, the choice varying with
    the source token. Averaged over sources the members come out near
    equiprobable, so a context-free decoder is reduced to the marginal coin
    while one visible neighbor makes the member nearly deterministic.
    """
    c = cfg.num_content
    n_pairs = c // 2
    n_groups = n_pairs + (c % 2)
    logits = rng.normal(0.0, 3.0, size=(c, n_groups))
    group_probs = np.exp(logits - logits.max(axis=1, keepdims=True))
    group_probs /= group_probs.sum(axis=1, keepdims=True)
    bias = np.where(rng.random((c, n_pairs)) < 0.5, cfg.pair_branch_bias, 1.0 - cfg.pair_branch_bias)
    trans = np.zeros((c, c))
    trans[:, 0 : 2 * n_pairs : 2] = group_probs[:, :n_pairs] * bias
    trans[:, 1 : 2 * n_pairs : 2] = group_probs[:, :n_pairs] * (1.0 - bias)
    if c % 2:
        trans[:, -1] = group_probs[:, -1]
    initial = np.zeros(c)
    init_logits = rng.normal(0.0, 1.0, size=n_groups)
    init_groups = np.exp(init_logits - init_logits.max())
    init_groups /= init_groups.sum()
    initial[0 : 2 * n_pairs : 2] = init_groups[:n_pairs] / 2.0
    initial[1 : 2 * n_pairs : 2] = init_groups[:n_pairs] / 2.0
    if c % 2:
        initial[-1] = init_groups[-1]
    return initial, trans


def _build_prototypes(cfg: CorpusConfig, rng: np.random.Generator) -> np.ndarray:
    """Unit-norm prototypes; consecutive pairs share a base direction.

    For pair_similarity s, tokens (2k, 2k+1) are normalize(u ± delta*w)
    with delta = sqrt((1-s)/(1+s)), giving cosine ~ s between pair members
    (the confusable-pair mechanism). An odd trailing token stands alone.
    """
    c, d = cfg.num_content, cfg.feature_dim
    if cfg.pair_similarity == 0.0:
        protos = rng.normal(size=(c, d))
        return protos / np.linalg.norm(protos, axis=1, keepdims=True)
    delta = np.sqrt((1.0 - cfg.pair_similarity) / (1.0 + cfg.pair_similarity))
    protos = np.empty((c, d))
    for k in range(c // 2):
        u = rng.normal(size=d)
        u /= np.linalg.norm(u)
        w = rng.normal(size=d)
        w -= (w @ u) * u
        w /= np.linalg.norm(w)
        protos[2 * k] = u + delta * w
        protos[2 * k + 1] = u - delta * w
    if c % 2:
        protos[-1] = rng.normal(size=d)
    return protos / np.linalg.norm(protos, axis=1, keepdims=True)


def generate_utterance(
    cfg: CorpusConfig, lang: LanguageModel, split: str, index: int
) -> Utterance:
    """Deterministic per (cfg.seed, split, index) regardless of call order."""
    rng = np.random.default_rng([cfg.seed, _SPLIT_IDS[split], index])
    length = int(rng.integers(cfg.min_len, cfg.max_len + 1))
    toks = np.empty(length, dtype=np.int64)
    toks[0] = rng.choice(cfg.num_content, p=lang.initial)
    for i in range(1, length):
        toks[i] = rng.choice(cfg.num_content, p=lang.transitions[toks[i - 1]])
    sigma = cfg.split_sigma(split)
    protos = lang.prototypes[toks]  # (length, feature_dim)
    frames = np.repeat(protos, cfg.frames_per_token, axis=0)
    if sigma > 0:
        frames = frames + rng.normal(0.0, sigma, size=frames.shape)
    frames = frames.astype(np.float32)
    return Utterance(
        id=f"{split}-{index:06d}",
        reference=toks + NUM_RESERVED,
        frames=frames,
        duration=frames.shape[0] * cfg.frame_period,
    )


def generate_split(cfg: CorpusConfig, split: str) -> list[Utterance]:
    cfg.validate()
    lang = build_language(cfg)
    return [
        generate_utterance(cfg, lang, split, i) for i in range(cfg.split_size(split))
    ]


# ---------------------------------------------------------------------------
# On-disk formats


def write_features(path: Path, utt_id: str, frames: np.ndarray) -> None:
    """Binary feature file: u16 id length, id, u32 rows, u32 cols, f32 LE data."""
    idb = utt_id.encode("utf-8")
    with open(path, "wb") as f:
        f.write(struct.pack("<H", len(idb)))
        f.write(idb)
        f.write(struct.pack("<II", frames.shape[0], frames.shape[1]))
        f.write(np.ascontiguousarray(frames.astype("<f4")).tobytes())


def read_features(path: Path) -> tuple[str, np.ndarray]:
    data = Path(path).read_bytes()
    (id_len,) = struct.unpack_from("<H", data, 0)
    utt_id = data[2 : 2 + id_len].decode("utf-8")
    rows, cols = struct.unpack_from("<II", data, 2 + id_len)
    arr = np.frombuffer(data, dtype="<f4", offset=2 + id_len + 8, count=rows * cols)
    return utt_id, arr.reshape(rows, cols).astype(np.float32)


def gen_corpus(cfg: CorpusConfig, out_dir: str | Path) -> dict[str, Path]:
    """Write manifests (JSON lines) and per-utterance feature files.

    Manifest record: id, reference (space-separated integer ids), feature
    file path relative to the corpus root, num_frames, duration_s.
    """
    cfg.validate()
    out = Path(out_dir)
    feats_dir = out / "feats"
    feats_dir.mkdir(parents=True, exist_ok=True)
    (out / "corpus_config.json").write_text(
        json.dumps(asdict(cfg), sort_keys=True, indent=2) + "\n"
    )
    lang = build_language(cfg)
    manifests: dict[str, Path] = {}
    for split in SPLITS:
        manifest = out / f"{split}.jsonl"
        with open(manifest, "w") as mf:
            for i in range(cfg.split_size(split)):
                utt = generate_utterance(cfg, lang, split, i)
                rel = f"feats/{utt.id}.bin"
                write_features(out / rel, utt.id, utt.frames)
                record = {
                    "id": utt.id,
                    "reference": " ".join(map(str, utt.reference.tolist())),
                    "features": rel,
                    "num_frames": utt.num_frames,
                    "duration_s": round(utt.duration, 9),
                }
                mf.write(json.dumps(record) + "\n")
        manifests[split] = manifest
    return manifests


def load_corpus_config(corpus_dir: str | Path) -> CorpusConfig:
    return CorpusConfig(**json.loads((Path(corpus_dir) / "corpus_config.json").read_text()))


def load_split(corpus_dir: str | Path, split: str) -> list[Utterance]:
    """Read one split's manifest and feature files back into memory."""
    corpus_dir = Path(corpus_dir)
    manifest = corpus_dir / f"{split}.jsonl"
    if not manifest.exists():
        raise ContractError(f"missing manifest {manifest}")
    utts = []
    for line in manifest.read_text().splitlines():
        rec = json.loads(line)
        _, frames = read_features(corpus_dir / rec["features"])
        utts.append(
            Utterance(
                id=rec["id"],
                reference=np.array([int(x) for x in rec["reference"].split()], dtype=np.int64),
                frames=frames,
                duration=float(rec["duration_s"]),
            )
        )
    return utts
