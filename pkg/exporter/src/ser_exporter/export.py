"""Export jobs: WAV -> EMB1 frame embeddings, timed transcript -> TEMB
sub-word embeddings.

Sub-words inherit their parent word's time span: the consuming aligner only
needs one rule (average everything overlapping a segment), and averaging the
sub-words of a segment falls out of it.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.signal import resample_poly

from .errors import InputError
from .formats import read_mono_wav, write_emb1, write_temb
from .models import load_acoustic_model, load_linguistic_model


@dataclass(frozen=True)
class ExportJob:
    input_path: str
    model: str
    output_path: str
    target_rate_hz: int | None = None  # defaults to the model's expected rate


def _resample(samples: np.ndarray, rate: int, target: int) -> np.ndarray:
    if rate == target:
        return samples
    from math import gcd

    g = gcd(rate, target)
    return resample_poly(samples, target // g, rate // g)


def export_acoustic(job: ExportJob) -> Path:
    """Run a speech model over a WAV and write its frame embeddings."""
    model = load_acoustic_model(job.model)
    samples, rate = read_mono_wav(job.input_path)
    target = job.target_rate_hz or model.expected_rate_hz
    samples = _resample(samples, rate, target)
    if target != model.expected_rate_hz:
        raise InputError(
            f"{job.model}: model expects {model.expected_rate_hz} Hz input, "
            f"requested {target} Hz"
        )
    vectors = model.embed(samples)
    if vectors.ndim != 2 or vectors.shape[1] != model.dim:
        raise InputError(
            f"{job.model}: embedder returned shape {vectors.shape}, "
            f"declared dim is {model.dim}"
        )
    out = Path(job.output_path)
    write_emb1(out, vectors, model.frame_period_ms, 0.0)
    return out


def read_timed_transcript(path: str | Path) -> list[dict]:
    path = Path(path)
    try:
        records = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise InputError(f"{path}: cannot read transcript ({exc})") from exc
    if not isinstance(records, list):
        raise InputError(f"{path}: transcript must be a JSON array")
    for i, rec in enumerate(records):
        if (
            not isinstance(rec, dict)
            or set(rec) != {"token", "start_ms", "end_ms"}
            or rec["end_ms"] <= rec["start_ms"]
        ):
            raise InputError(f"{path}: bad transcript entry {i}")
    return records


def export_linguistic(job: ExportJob) -> Path:
    """Embed every word's sub-words and write one TEMB record per sub-word,
    each carrying the parent word's span. An empty transcript yields a valid
    zero-record file."""
    model = load_linguistic_model(job.model)
    words = read_timed_transcript(job.input_path)
    records = []
    for word in words:
        for _, vector in model.embed_subwords(word["token"]):
            records.append((word["start_ms"], word["end_ms"], vector))
    out = Path(job.output_path)
    write_temb(out, model.dim, records)
    return out
