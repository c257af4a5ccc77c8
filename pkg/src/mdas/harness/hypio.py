"""Hypothesis files: one JSON record per utterance.

Fields: id, tokens, confidences, duration_s, elapsed_s, denoiser_calls,
truncated, provenance. `elapsed_s` is the only wall-clock field;
everything else is bit-reproducible from (config, seed).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path


@dataclass
class HypRecord:
    id: str
    tokens: list[int]
    confidences: list[float]
    duration_s: float
    elapsed_s: float
    denoiser_calls: int
    truncated: bool = False
    provenance: dict = field(default_factory=dict)


def write_hypotheses(path: str | Path, records: list[HypRecord]) -> None:
    with open(path, "w") as f:
        for r in records:
            f.write(
                json.dumps(
                    {
                        "id": r.id,
                        "tokens": r.tokens,
                        "confidences": [round(c, 8) for c in r.confidences],
                        "duration_s": round(r.duration_s, 9),
                        "elapsed_s": round(r.elapsed_s, 9),
                        "denoiser_calls": r.denoiser_calls,
                        "truncated": r.truncated,
                        "provenance": r.provenance,
                    }
                )
                + "\n"
            )


def read_hypotheses(path: str | Path) -> list[HypRecord]:
    records = []
    for line in Path(path).read_text().splitlines():
        d = json.loads(line)
        records.append(
            HypRecord(
                id=d["id"],
                tokens=[int(t) for t in d["tokens"]],
                confidences=[float(c) for c in d["confidences"]],
                duration_s=float(d["duration_s"]),
                elapsed_s=float(d["elapsed_s"]),
                denoiser_calls=int(d.get("denoiser_calls", 0)),
                truncated=bool(d.get("truncated", False)),
                provenance=d.get("provenance", {}),
            )
        )
    return records
