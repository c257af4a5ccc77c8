"""Evaluation metrics, hypothesis files, split runners, and sweeps."""

from .hypio import HypRecord, read_hypotheses, write_hypotheses
from .metrics import WerBreakdown, aggregate, rtf, wer
from .run import ar_split, decode_split, deliberate_split, evaluate
from .sweep import BenchRecord, run_sweep

__all__ = [
    "BenchRecord",
    "HypRecord",
    "WerBreakdown",
    "aggregate",
    "ar_split",
    "decode_split",
    "deliberate_split",
    "evaluate",
    "read_hypotheses",
    "rtf",
    "run_sweep",
    "wer",
    "write_hypotheses",
]
