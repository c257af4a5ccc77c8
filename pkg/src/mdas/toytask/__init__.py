"""Synthetic speech-like task: corpus, acoustic frontend, and the AR baseline."""

import numpy as np

from ..vocab import BOS
from .ar import ar_greedy_transcribe, ar_train_step, make_ar_example
from .corpus import (
    SPLITS,
    CorpusConfig,
    LanguageModel,
    Utterance,
    build_language,
    gen_corpus,
    generate_split,
    generate_utterance,
    load_corpus_config,
    load_split,
    read_features,
    write_features,
)
from .frontend import frontend_pool, pool_frames

# The recognition task's fixed textual instruction analog.
ASR_INSTRUCTION = np.array([BOS], dtype=np.int64)

__all__ = [
    "ASR_INSTRUCTION",
    "SPLITS",
    "CorpusConfig",
    "LanguageModel",
    "Utterance",
    "ar_greedy_transcribe",
    "ar_train_step",
    "build_language",
    "frontend_pool",
    "gen_corpus",
    "generate_split",
    "generate_utterance",
    "load_corpus_config",
    "load_split",
    "make_ar_example",
    "pool_frames",
    "read_features",
    "write_features",
]
