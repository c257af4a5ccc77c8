"""Token id conventions.

Every model in this package shares one discrete symbol space with four
reserved ids at the bottom of the table, followed by content tokens:

    0 PAD   inert filler after EOS in padded training blocks
    1 BOS   sequence anchor (instruction token, AR start symbol)
    2 EOS   end of response; decoders truncate at the first EOS
    3 MASK  the absorbing state of the forward masking process

Content tokens occupy ids ``4 .. 4 + num_content - 1``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

PAD = 0
BOS = 1
EOS = 2
MASK = 3
NUM_RESERVED = 4

# 1-D int64 array of token ids.
TokenSeq = np.ndarray


@dataclass(frozen=True)
class Vocabulary:
    """Symbol space: 4 reserved ids plus `num_content` content tokens."""

    num_content: int

    @property
    def size(self) -> int:
        return NUM_RESERVED + self.num_content

    @property
    def first_content(self) -> int:
        return NUM_RESERVED

    def content_ids(self) -> np.ndarray:
        return np.arange(NUM_RESERVED, self.size, dtype=np.int64)

    def is_content(self, token: int) -> bool:
        return NUM_RESERVED <= token < self.size


def tokens(ids) -> TokenSeq:
    """Coerce a python sequence of ids into the canonical array form."""
    return np.asarray(ids, dtype=np.int64)


def truncate_at_eos(seq: TokenSeq) -> TokenSeq:
    """Tokens strictly before the first EOS (whole sequence if none)."""
    hits = np.flatnonzero(seq == EOS)
    if hits.size == 0:
        return np.array(seq, dtype=np.int64)
    return np.array(seq[: hits[0]], dtype=np.int64)
