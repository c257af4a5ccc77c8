"""Experiment sweeps from a key = value spec file.

A spec is an INI-style file; grid axes are space-separated lists. One
benchmark row is produced per (grid point, split, seed), and every row's
WER columns are bit-reproducible; only the timing columns vary between
runs. Example:

    [sweep]
    label = step_grid
    task = decode
    corpus = runs/corpus
    splits = test_other
    seeds = 1 2 3

    [checkpoints]
    denoiser = runs/denoiser_s{seed}.ckpt

    [decode]
    L = 32
    steps = 1 4 8 16 32
    sub_blocks = 1
    pool_window = 4

Deliberation sweeps add a [deliberate] section with `strategies`,
`mask_ratios`, `sub_blocks`, `use_audio`, and `hypotheses` (the first-pass
file, `{seed}`/`{split}` substituted).
"""

from __future__ import annotations

import configparser
import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..decoding import DecodeConfig
from ..deliberation import DeliberationConfig
from ..errors import SweepError
from ..nncore import load_checkpoint
from ..toytask import load_corpus_config, load_split
from .hypio import read_hypotheses, write_hypotheses
from .metrics import WerBreakdown, rtf
from .run import ar_split, decode_split, deliberate_split, evaluate

RECORD_FIELDS = [
    "label",
    "task",
    "split",
    "seed",
    "steps",
    "sub_blocks",
    "strategy",
    "mask_ratio",
    "use_audio",
    "utterances",
    "wer",
    "substitutions",
    "insertions",
    "deletions",
    "reference_length",
    "mean_calls",
    "rtf",
    "total_elapsed_s",
    "total_duration_s",
]


@dataclass
class BenchRecord:
    label: str
    task: str
    split: str
    seed: int
    breakdown: WerBreakdown
    mean_calls: float
    rtf: float
    total_elapsed_s: float
    total_duration_s: float
    utterances: int
    steps: int | None = None
    sub_blocks: int | None = None
    strategy: str | None = None
    mask_ratio: float | None = None
    use_audio: bool | None = None
    extra: dict = field(default_factory=dict)

    def row(self) -> dict:
        return {
            "label": self.label,
            "task": self.task,
            "split": self.split,
            "seed": self.seed,
            "steps": "" if self.steps is None else self.steps,
            "sub_blocks": "" if self.sub_blocks is None else self.sub_blocks,
            "strategy": self.strategy or "",
            "mask_ratio": "" if self.mask_ratio is None else self.mask_ratio,
            "use_audio": "" if self.use_audio is None else self.use_audio,
            "utterances": self.utterances,
            "wer": f"{self.breakdown.wer:.6f}",
            "substitutions": self.breakdown.substitutions,
            "insertions": self.breakdown.insertions,
            "deletions": self.breakdown.deletions,
            "reference_length": self.breakdown.reference_length,
            "mean_calls": f"{self.mean_calls:.4f}",
            "rtf": f"{self.rtf:.6f}",
            "total_elapsed_s": f"{self.total_elapsed_s:.6f}",
            "total_duration_s": f"{self.total_duration_s:.6f}",
        }


def _ints(raw: str) -> list[int]:
    return [int(x) for x in raw.split()]


def _floats(raw: str) -> list[float]:
    return [float(x) for x in raw.split()]


def _checkpoint(spec: configparser.ConfigParser, entry: str, seed: int):
    if not spec.has_option("checkpoints", entry):
        raise SweepError(f"sweep spec lacks [checkpoints] {entry}")
    path = Path(spec.get("checkpoints", entry).format(seed=seed))
    if not path.exists():
        raise SweepError(f"[checkpoints] {entry} not found: {path}")
    params, _ = load_checkpoint(path)
    return params


def _summarize(
    label, task, split, seed, hyps, agg, **knobs
) -> BenchRecord:
    total_elapsed = sum(h.elapsed_s for h in hyps)
    total_duration = sum(h.duration_s for h in hyps)
    return BenchRecord(
        label=label,
        task=task,
        split=split,
        seed=seed,
        breakdown=agg,
        mean_calls=float(np.mean([h.denoiser_calls for h in hyps])),
        rtf=rtf(total_elapsed, total_duration),
        total_elapsed_s=total_elapsed,
        total_duration_s=total_duration,
        utterances=len(hyps),
        **knobs,
    )


def run_sweep(spec_path: str | Path, out_dir: str | Path) -> list[BenchRecord]:
    """Execute every grid point; write records.csv, plotdata.csv, and the
    per-row hypothesis files under `out_dir`."""
    spec = configparser.ConfigParser()
    if not Path(spec_path).exists():
        raise SweepError(f"sweep spec not found: {spec_path}")
    spec.read(spec_path)
    try:
        label = spec.get("sweep", "label")
        task = spec.get("sweep", "task")
        corpus = spec.get("sweep", "corpus")
        splits = spec.get("sweep", "splits").split()
        seeds = _ints(spec.get("sweep", "seeds"))
    except (configparser.NoSectionError, configparser.NoOptionError) as e:
        raise SweepError(f"incomplete [sweep] section: {e}") from e
    if task not in ("decode", "ar", "deliberate"):
        raise SweepError(f"unknown task {task!r} in [sweep]")

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    corpus_cfg = load_corpus_config(corpus)
    utt_cache = {s: load_split(corpus, s) for s in splits}
    records: list[BenchRecord] = []
    plot_rows: list[tuple[str, float, float]] = []

    for split in splits:
        utts = utt_cache[split]
        for seed in seeds:
            if task == "decode":
                params = _checkpoint(spec, "denoiser", seed)
                window = spec.getint("decode", "pool_window", fallback=4)
                big_l = spec.getint("decode", "L", fallback=32)
                early = spec.getboolean("decode", "early_stop", fallback=True)
                steps_axis = _ints(spec.get("decode", "steps", fallback="8"))
                m_axis = _ints(spec.get("decode", "sub_blocks", fallback="1"))
                pad = corpus_cfg.audio_windows(window)
                for m in m_axis:
                    for n in steps_axis:
                        cfg = DecodeConfig(L=big_l, N=n, M=m, early_stop=early)
                        hyps = decode_split(params, utts, cfg, window, pad)
                        agg, _ = evaluate(utts, hyps)
                        rec = _summarize(
                            label, task, split, seed, hyps, agg, steps=n, sub_blocks=m
                        )
                        records.append(rec)
                        axis = n if len(steps_axis) > 1 or len(m_axis) == 1 else m
                        plot_rows.append((f"{split}/M={m}" if len(m_axis) > 1 else split, axis, agg.wer))
                        name = f"hyp_{task}_{split}_s{seed}_N{n}_M{m}.jsonl"
                        write_hypotheses(out / name, hyps)
            elif task == "ar":
                params = _checkpoint(spec, "ar", seed)
                window = spec.getint("decode", "pool_window", fallback=4)
                max_len = spec.getint("decode", "max_len", fallback=33)
                hyps = ar_split(params, utts, window, max_len, corpus_cfg.audio_windows(window))
                agg, _ = evaluate(utts, hyps)
                records.append(_summarize(label, task, split, seed, hyps, agg))
                plot_rows.append((split, 0, agg.wer))
                write_hypotheses(out / f"hyp_ar_{split}_s{seed}.jsonl", hyps)
            else:  # deliberate
                window = spec.getint("deliberate", "pool_window", fallback=4)
                use_audio = spec.getboolean("deliberate", "use_audio", fallback=True)
                params = _checkpoint(
                    spec, "denoiser" if use_audio else "text_denoiser", seed
                )
                hyp_pattern = spec.get("deliberate", "hypotheses", fallback=None)
                if hyp_pattern is None:
                    raise SweepError("sweep spec lacks [deliberate] hypotheses")
                hyp_path = Path(hyp_pattern.format(seed=seed, split=split))
                if not hyp_path.exists():
                    raise SweepError(f"[deliberate] hypotheses not found: {hyp_path}")
                first_pass = read_hypotheses(hyp_path)
                strategies = spec.get("deliberate", "strategies", fallback="random").split()
                ratios = _floats(spec.get("deliberate", "mask_ratios", fallback="0.9"))
                blocks = _ints(spec.get("deliberate", "sub_blocks", fallback="4"))
                for strategy in strategies:
                    settings = (
                        [(None, b) for b in blocks]
                        if strategy == "semi_ar"
                        else [(p, None) for p in ratios]
                    )
                    for p, b in settings:
                        cfg = DeliberationConfig(
                            strategy=strategy,
                            mask_ratio=0.0 if p is None else p,
                            sub_blocks=b or 1,
                            use_audio=use_audio,
                            seed=seed,
                        )
                        hyps = deliberate_split(
                            params, utts, first_pass, cfg, window, corpus_cfg.audio_windows(window)
                        )
                        agg, _ = evaluate(utts, hyps)
                        rec = _summarize(
                            label,
                            task,
                            split,
                            seed,
                            hyps,
                            agg,
                            strategy=strategy,
                            mask_ratio=p,
                            sub_blocks=b,
                            use_audio=use_audio,
                        )
                        records.append(rec)
                        axis = b if strategy == "semi_ar" else p
                        plot_rows.append((f"{split}/{strategy}", float(axis), agg.wer))
                        tag = f"M{b}" if strategy == "semi_ar" else f"p{p}"
                        name = f"hyp_delib_{split}_s{seed}_{strategy}_{tag}.jsonl"
                        write_hypotheses(out / name, hyps)

    with open(out / "records.csv", "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=RECORD_FIELDS)
        w.writeheader()
        for r in records:
            w.writerow(r.row())
    with open(out / "plotdata.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["series", "x", "y"])
        for series, x, y in plot_rows:
            w.writerow([series, x, f"{y:.6f}"])
    return records
