"""Command-line surface.

Subcommands: gen-data, train-denoiser, train-ar, decode, deliberate, eval,
sweep. Every knob a flag can set also has a spec-file equivalent in the
INI config (--config); flags win. Exit code 0 on success; any failure
prints a single machine-parsable line `error: <Kind>: <message>` to stderr
and exits 2.
"""

from __future__ import annotations

import argparse
import configparser
import json
import sys
from dataclasses import fields as dc_fields
from pathlib import Path

import numpy as np

from .decoding import DecodeConfig, DecodeTrace, diffusion_decode, semi_ar_decode
from .deliberation import DeliberationConfig
from .harness import (
    ar_split,
    decode_split,
    deliberate_split,
    evaluate,
    read_hypotheses,
    run_sweep,
    write_hypotheses,
)
from .harness.hypio import HypRecord
from .harness.metrics import rtf
from .nncore import load_checkpoint, save_checkpoint
from .toytask import ASR_INSTRUCTION, CorpusConfig, gen_corpus, load_corpus_config, load_split
from .toytask.frontend import frontend_pool, pad_windows
from .training import TrainSettings, model_config_for, train_ar, train_denoiser


def _read_ini(path: str | None) -> configparser.ConfigParser:
    cp = configparser.ConfigParser()
    if path:
        if not Path(path).exists():
            raise FileNotFoundError(f"config file not found: {path}")
        cp.read(path)
    return cp


def _section_kwargs(cp: configparser.ConfigParser, section: str, cls) -> dict:
    """Pull a dataclass' fields from an INI section, casting by field type."""
    out = {}
    if not cp.has_section(section):
        return out
    types = {f.name: f.type for f in dc_fields(cls)}
    for key, raw in cp.items(section):
        if key not in types:
            raise ValueError(f"unknown key {key!r} in [{section}]")
        t = types[key]
        if t in ("int", int):
            out[key] = int(raw)
        elif t in ("float", float):
            out[key] = float(raw)
        elif t in ("bool", bool):
            out[key] = raw.strip().lower() in ("1", "true", "yes", "on")
        else:
            out[key] = raw
    return out


def _corpus_config(cp, seed: int | None) -> CorpusConfig:
    kwargs = _section_kwargs(cp, "corpus", CorpusConfig)
    if seed is not None:
        kwargs["seed"] = seed
    return CorpusConfig(**kwargs)


def _train_settings(cp, args) -> TrainSettings:
    kwargs = _section_kwargs(cp, "train", TrainSettings)
    if getattr(args, "objective", None):
        kwargs["objective"] = args.objective
    if getattr(args, "steps", None):
        kwargs["total_steps"] = args.steps
    return TrainSettings(**kwargs)


def _model_kwargs(cp) -> dict:
    out = {}
    if cp.has_section("model"):
        for key, raw in cp.items("model"):
            if key in ("model_dim", "num_layers", "num_heads", "ffn_dim", "max_positions"):
                out[key] = int(raw)
            elif key == "precision":
                out[key] = raw
            else:
                raise ValueError(f"unknown key {key!r} in [model]")
    return out


def _cmd_gen_data(args) -> None:
    cp = _read_ini(args.config)
    cfg = _corpus_config(cp, args.seed)
    manifests = gen_corpus(cfg, args.out)
    print(f"wrote {len(manifests)} splits under {args.out}")


def _train_common(args, attention_mode: str):
    cp = _read_ini(args.config)
    settings = _train_settings(cp, args)
    corpus_cfg = CorpusConfig(
        **json.loads((Path(args.corpus) / "corpus_config.json").read_text())
    )
    model_cfg = model_config_for(
        corpus_cfg.num_content,
        corpus_cfg.feature_dim,
        settings,
        attention_mode=attention_mode,
        **_model_kwargs(cp),
    )
    utts = load_split(args.corpus, "train")
    return settings, model_cfg, utts


def _cmd_train_denoiser(args) -> None:
    settings, model_cfg, utts = _train_common(args, "bidirectional")
    log = args.log or str(Path(args.out).with_suffix(".train.csv"))
    params = train_denoiser(utts, model_cfg, settings, args.seed, log_path=log)
    save_checkpoint(params, args.out)
    print(f"saved denoiser checkpoint to {args.out}")


def _cmd_train_ar(args) -> None:
    args.objective = "audio_sft"  # the baseline is always audio-conditioned
    settings, model_cfg, utts = _train_common(args, "causal")
    log = args.log or str(Path(args.out).with_suffix(".train.csv"))
    params = train_ar(utts, model_cfg, settings, args.seed, log_path=log)
    save_checkpoint(params, args.out)
    print(f"saved AR checkpoint to {args.out}")


def _cmd_decode(args) -> None:
    cp = _read_ini(args.config)
    params, _ = load_checkpoint(args.checkpoint)
    utts = load_split(args.corpus, args.split)
    if args.limit:
        utts = utts[: args.limit]
    window = args.pool_window or cp.getint("decode", "pool_window", fallback=4)
    audio_pad = load_corpus_config(args.corpus).audio_windows(window)
    if args.system == "ar":
        max_len = args.max_len or cp.getint("decode", "max_len", fallback=33)
        hyps = ar_split(params, utts, window, max_len, audio_pad)
    else:
        cfg = DecodeConfig(
            L=args.block_length or cp.getint("decode", "l", fallback=32),
            N=args.steps or cp.getint("decode", "steps", fallback=8),
            M=args.sub_blocks or cp.getint("decode", "sub_blocks", fallback=1),
            early_stop=not args.no_early_stop,
        )
        if args.system == "semi_ar" and cfg.M == 1:
            cfg = DecodeConfig(cfg.L, cfg.N, 1, cfg.tie_break, cfg.early_stop)
        if args.trace:
            Path(args.trace).mkdir(parents=True, exist_ok=True)
            hyps = []
            fn = diffusion_decode if cfg.M == 1 else semi_ar_decode
            for utt in utts:
                audio = None
                if params.config.audio_dim:
                    audio = pad_windows(
                        frontend_pool(utt.frames, window, params.tensors["audio_proj"]),
                        audio_pad,
                    )
                trace = DecodeTrace()
                hyp = fn(params, ASR_INSTRUCTION, audio, cfg, trace=trace)
                trace.write_csv(Path(args.trace) / f"{utt.id}.trace.csv")
                hyps.append(
                    HypRecord(
                        id=utt.id,
                        tokens=hyp.tokens.tolist(),
                        confidences=hyp.confidences.tolist(),
                        duration_s=utt.duration,
                        elapsed_s=hyp.elapsed,
                        denoiser_calls=hyp.denoiser_calls,
                        provenance={"system": args.system, "N": cfg.N, "M": cfg.M},
                    )
                )
        else:
            hyps = decode_split(params, utts, cfg, window, audio_pad)
    write_hypotheses(args.out, hyps)
    print(f"wrote {len(hyps)} hypotheses to {args.out}")


def _cmd_deliberate(args) -> None:
    cp = _read_ini(args.config)
    params, _ = load_checkpoint(args.checkpoint)
    utts = load_split(args.corpus, args.split)
    first_pass = read_hypotheses(args.hypotheses)
    window = args.pool_window or cp.getint("deliberate", "pool_window", fallback=4)
    audio_pad = load_corpus_config(args.corpus).audio_windows(window)
    kwargs = _section_kwargs(cp, "deliberate", DeliberationConfig)
    kwargs.pop("pool_window", None)
    if args.strategy:
        kwargs["strategy"] = args.strategy
    if args.mask_ratio is not None:
        kwargs["mask_ratio"] = args.mask_ratio
    if args.sub_blocks:
        kwargs["sub_blocks"] = args.sub_blocks
    if args.no_audio:
        kwargs["use_audio"] = False
    kwargs["seed"] = args.seed
    cfg = DeliberationConfig(**kwargs)
    hyps = deliberate_split(params, utts, first_pass, cfg, window, audio_pad)
    write_hypotheses(args.out, hyps)
    print(f"wrote {len(hyps)} refined hypotheses to {args.out}")


def _cmd_eval(args) -> None:
    utts = load_split(args.corpus, args.split)
    hyps = read_hypotheses(args.hypotheses)
    agg, rows = evaluate(utts, hyps)
    total_elapsed = sum(h.elapsed_s for h in hyps)
    total_duration = sum(h.duration_s for h in hyps)
    summary = {
        "utterances": len(rows),
        "wer": round(agg.wer, 6),
        "substitutions": agg.substitutions,
        "insertions": agg.insertions,
        "deletions": agg.deletions,
        "reference_length": agg.reference_length,
        "mean_calls": round(float(np.mean([h.denoiser_calls for h in hyps])), 4),
        "rtf": round(rtf(total_elapsed, total_duration), 6),
    }
    Path(args.out).write_text(json.dumps(summary, indent=2) + "\n")
    print(json.dumps(summary))


def _cmd_sweep(args) -> None:
    records = run_sweep(args.config, args.out)
    print(f"wrote {len(records)} benchmark rows to {Path(args.out) / 'records.csv'}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mdas",
        description="Masked-diffusion sequence decoding toolkit (synthetic speech-like task).",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, needs_out=True):
        p.add_argument("--config", help="INI config file")
        p.add_argument("--seed", type=int, default=0)
        if needs_out:
            p.add_argument("--out", required=True)

    p = sub.add_parser("gen-data", help="generate the synthetic corpus")
    common(p)
    p.set_defaults(fn=_cmd_gen_data)

    for name, fn in (("train-denoiser", _cmd_train_denoiser), ("train-ar", _cmd_train_ar)):
        p = sub.add_parser(name, help=f"{name.replace('-', ' ')} on the train split")
        common(p)
        p.add_argument("--corpus", required=True)
        p.add_argument("--steps", type=int, help="override [train] total_steps")
        p.add_argument("--log", help="training log CSV path")
        if name == "train-denoiser":
            p.add_argument(
                "--objective", choices=["audio_sft", "sft", "pretrain"], default=None
            )
        p.set_defaults(fn=fn)

    p = sub.add_parser("decode", help="decode a split with a trained checkpoint")
    common(p)
    p.add_argument("--corpus", required=True)
    p.add_argument("--split", default="test_other")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--system", choices=["diffusion", "semi_ar", "ar"], default="diffusion")
    p.add_argument("--steps", type=int, help="denoising step budget N")
    p.add_argument("--sub-blocks", dest="sub_blocks", type=int)
    p.add_argument("--block-length", dest="block_length", type=int)
    p.add_argument("--pool-window", dest="pool_window", type=int)
    p.add_argument("--max-len", dest="max_len", type=int, help="AR emission cap")
    p.add_argument("--no-early-stop", action="store_true")
    p.add_argument("--limit", type=int, help="decode only the first K utterances")
    p.add_argument("--trace", help="directory for per-utterance decode traces")
    p.set_defaults(fn=_cmd_decode)

    p = sub.add_parser("deliberate", help="refine first-pass hypotheses")
    common(p)
    p.add_argument("--corpus", required=True)
    p.add_argument("--split", default="test_other")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--hypotheses", required=True)
    p.add_argument("--strategy", choices=["random", "low_confidence", "semi_ar"])
    p.add_argument("--mask-ratio", dest="mask_ratio", type=float)
    p.add_argument("--sub-blocks", dest="sub_blocks", type=int)
    p.add_argument("--pool-window", dest="pool_window", type=int)
    p.add_argument("--no-audio", action="store_true")
    p.set_defaults(fn=_cmd_deliberate)

    p = sub.add_parser("eval", help="score a hypothesis file against references")
    common(p)
    p.add_argument("--corpus", required=True)
    p.add_argument("--split", default="test_other")
    p.add_argument("--hypotheses", required=True)
    p.set_defaults(fn=_cmd_eval)

    p = sub.add_parser("sweep", help="run a benchmark grid from a sweep spec")
    common(p)
    p.set_defaults(fn=_cmd_sweep)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args.fn(args)
    except Exception as e:  # single-line machine-parsable failure
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
