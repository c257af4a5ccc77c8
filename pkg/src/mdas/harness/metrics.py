"""Error-rate and speed metrics.

The toy task has no word segmentation, so "WER" here is token error rate:
minimum-edit-distance alignment with unit costs, reported against the
reference length. RTF aggregates as total elapsed over total duration
(ratio of sums), which is stable under many short utterances.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ContractError
from ..vocab import TokenSeq


@dataclass(frozen=True)
class WerBreakdown:
    substitutions: int
    insertions: int
    deletions: int
    reference_length: int

    @property
    def errors(self) -> int:
        return self.substitutions + self.insertions + self.deletions

    @property
    def wer(self) -> float:
        return self.errors / self.reference_length


def wer(reference: TokenSeq, hypothesis: TokenSeq) -> WerBreakdown:
    """Levenshtein alignment of hypothesis against a nonempty reference.

    Among minimum-cost alignments the backtrace prefers substitution, then
    deletion, then insertion, so the S/I/D split is deterministic.
    """
    ref = np.asarray(reference, dtype=np.int64)
    hyp = np.asarray(hypothesis, dtype=np.int64)
    n, m = len(ref), len(hyp)
    if n == 0:
        raise ContractError("empty reference")
    dp = np.zeros((n + 1, m + 1), dtype=np.int64)
    dp[:, 0] = np.arange(n + 1)
    dp[0, :] = np.arange(m + 1)
    for i in range(1, n + 1):
        sub = dp[i - 1, :-1] + (hyp != ref[i - 1])
        row = dp[i]
        prev = dp[i - 1]
        for j in range(1, m + 1):
            row[j] = min(sub[j - 1], prev[j] + 1, row[j - 1] + 1)
    s = ins = dels = 0
    i, j = n, m
    while i > 0 or j > 0:
        if i > 0 and j > 0 and dp[i, j] == dp[i - 1, j - 1] + (ref[i - 1] != hyp[j - 1]):
            if ref[i - 1] != hyp[j - 1]:
                s += 1
            i -= 1
            j -= 1
        elif i > 0 and dp[i, j] == dp[i - 1, j] + 1:
            dels += 1
            i -= 1
        else:
            ins += 1
            j -= 1
    return WerBreakdown(s, ins, dels, n)


def aggregate(breakdowns: list[WerBreakdown]) -> WerBreakdown:
    """Corpus-level counts: ratio of sums, not mean of ratios."""
    if not breakdowns:
        raise ContractError("nothing to aggregate")
    return WerBreakdown(
        substitutions=sum(b.substitutions for b in breakdowns),
        insertions=sum(b.insertions for b in breakdowns),
        deletions=sum(b.deletions for b in breakdowns),
        reference_length=sum(b.reference_length for b in breakdowns),
    )


def rtf(total_elapsed: float, total_duration: float) -> float:
    """Processing time over audio time; lower is faster than real time."""
    if total_duration <= 0:
        raise ContractError("total_duration must be positive")
    return total_elapsed / total_duration
