"""Synthetic corpus generator for desk-scale verification.

Each conversation is driven by a latent emotion curve (a smoothed, seeded
random walk in [-1, 1]). Every artifact is a deterministic function of the
curve plus seeded noise: audio is a tone whose pitch and amplitude follow
the curve, acoustic embedding frames are a fixed affine image of it,
token embeddings encode its sign, and annotator traces add independent
noise. The same spec and seed always produce a byte-identical tree.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .align import (
    EmbeddingFrames,
    TimedEmbedding,
    TimedEmbeddingSet,
    write_embedding_frames,
    write_timed_embeddings,
)
from .core import (
    ConversationEntry,
    TimedWord,
    save_manifest,
    write_annotation_csv,
    write_transcript,
)
from .dsp import AudioClip, write_wav
from .errors import InvalidArgumentError


@dataclass(frozen=True)
class SynthSpec:
    n_train: int = 10
    n_dev: int = 3
    n_test: int = 3
    duration_range_ms: tuple[int, int] = (60_000, 120_000)
    segment_ms: int = 250
    seed: int = 0
    sample_rate_hz: int = 16_000
    acoustic_dim: int = 512
    linguistic_dim: int = 768
    acoustic_frame_ms: float = 50.0
    n_annotators: int = 3
    annotator_noise: float = 0.06
    acoustic_noise: float = 0.05
    linguistic_noise: float = 0.05
    audio_noise: float = 0.01
    walk_window: int = 15

    def __post_init__(self):
        if min(self.n_train, self.n_dev, self.n_test) < 1:
            raise InvalidArgumentError("every subset needs at least 1 conversation")
        lo, hi = self.duration_range_ms
        if lo < self.segment_ms * 2 or hi < lo:
            raise InvalidArgumentError("bad duration range")
        if self.n_annotators < 1:
            raise InvalidArgumentError("need at least one annotator")


def _conv_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence((seed, index))))


def _emotion_curve(rng: np.random.Generator, n_segments: int, window: int) -> np.ndarray:
    """Smoothed random walk, centered and scaled into [-0.9, 0.9]."""
    walk = np.cumsum(rng.normal(0.0, 1.0, n_segments))
    kernel = np.ones(window) / window
    smooth = np.convolve(walk, kernel, mode="same")
    smooth -= smooth.mean()
    peak = np.max(np.abs(smooth))
    if peak < 1e-12:
        return np.zeros(n_segments)
    return 0.9 * smooth / peak


def _per_sample_curve(
    curve: np.ndarray, segment_ms: int, n_samples: int, sample_rate_hz: int
) -> np.ndarray:
    centers_ms = (np.arange(len(curve)) + 0.5) * segment_ms
    t_ms = np.arange(n_samples) * 1000.0 / sample_rate_hz
    return np.interp(t_ms, centers_ms, curve)


def _render_audio(
    rng: np.random.Generator, curve: np.ndarray, spec: SynthSpec, n_samples: int
) -> AudioClip:
    e = _per_sample_curve(curve, spec.segment_ms, n_samples, spec.sample_rate_hz)
    freq = 300.0 + 150.0 * e
    phase = 2.0 * np.pi * np.cumsum(freq) / spec.sample_rate_hz
    amp = 0.3 + 0.2 * e
    samples = amp * np.sin(phase) + spec.audio_noise * rng.normal(0.0, 1.0, n_samples)
    return AudioClip(np.clip(samples, -1.0, 1.0), spec.sample_rate_hz)


def generate_dataset(spec: SynthSpec, out_dir: str | Path) -> Path:
    """Write a complete synthetic dataset and return the manifest path."""
    out = Path(out_dir)
    for sub in ("audio", "transcripts", "annotations", "embeddings"):
        (out / sub).mkdir(parents=True, exist_ok=True)

    master = _conv_rng(spec.seed, 0xFFFF)
    # Dataset-level maps shared by all conversations, so the relation between
    # the latent curve and the fabricated embeddings is learnable across them.
    acoustic_slope = master.normal(0.0, 1.0, spec.acoustic_dim)
    acoustic_bias = master.normal(0.0, 0.5, spec.acoustic_dim)
    linguistic_axis = master.normal(0.0, 1.0, spec.linguistic_dim)

    entries = []
    plan = [("train", spec.n_train), ("dev", spec.n_dev), ("test", spec.n_test)]
    conv_index = 0
    for subset, count in plan:
        for k in range(count):
            conv_id = f"{subset}_{k:03d}"
            rng = _conv_rng(spec.seed, conv_index)
            conv_index += 1

            lo, hi = spec.duration_range_ms
            duration_ms = int(rng.integers(lo, hi + 1))
            n_segments = -(-duration_ms // spec.segment_ms)
            n_samples = int(round(duration_ms * spec.sample_rate_hz / 1000.0))
            curve = _emotion_curve(rng, n_segments, spec.walk_window)

            audio_rel = f"audio/{conv_id}.wav"
            write_wav(out / audio_rel, _render_audio(rng, curve, spec, n_samples))

            ann_rels = []
            for a in range(spec.n_annotators):
                trace = curve + rng.normal(0.0, spec.annotator_noise, n_segments)
                rel = f"annotations/{conv_id}.ann{a}.csv"
                write_annotation_csv(trace, out / rel)
                ann_rels.append(rel)

            n_frames = max(1, int(duration_ms // spec.acoustic_frame_ms))
            frame_e = np.interp(
                np.arange(n_frames) * spec.acoustic_frame_ms,
                (np.arange(n_segments) + 0.5) * spec.segment_ms,
                curve,
            )
            frames = (
                frame_e[:, None] * acoustic_slope[None, :]
                + acoustic_bias[None, :]
                + rng.normal(0.0, spec.acoustic_noise, (n_frames, spec.acoustic_dim))
            )
            emb_rel = f"embeddings/{conv_id}.acoustic.emb"
            write_embedding_frames(
                out / emb_rel,
                EmbeddingFrames(frames.astype(np.float32), spec.acoustic_frame_ms, 0.0),
            )

            words, tokens = [], []
            t = 0
            widx = 0
            while t < duration_ms:
                length = int(rng.integers(150, 601))
                end = min(t + length, duration_ms)
                center_seg = min(n_segments - 1, (t + end) // 2 // spec.segment_ms)
                sign = 1.0 if curve[center_seg] >= 0 else -1.0
                vec = sign * linguistic_axis + rng.normal(
                    0.0, spec.linguistic_noise, spec.linguistic_dim
                )
                words.append(TimedEmbedding(vec.astype(np.float32), t, end))
                tokens.append(TimedWord(f"w{widx}", t, end))
                widx += 1
                t = end
            temb_rel = f"embeddings/{conv_id}.linguistic.temb"
            write_timed_embeddings(
                out / temb_rel, TimedEmbeddingSet(spec.linguistic_dim, tuple(words))
            )
            transcript_rel = f"transcripts/{conv_id}.json"
            write_transcript(tokens, out / transcript_rel)

            entries.append(
                ConversationEntry(
                    id=conv_id,
                    audio=audio_rel,
                    transcript=transcript_rel,
                    annotations=tuple(ann_rels),
                    embeddings={
                        "acoustic-embed": emb_rel,
                        "linguistic-embed": temb_rel,
                    },
                    subset=subset,
                    segment_ms=spec.segment_ms,
                )
            )

    manifest_path = out / "manifest.json"
    save_manifest(entries, manifest_path)
    return manifest_path
