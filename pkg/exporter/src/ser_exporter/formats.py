"""Writers for the embedding interchange formats (little-endian throughout).

    "EMB1" frame embeddings:
        magic(4) | u32 D | u32 N | f64 frame_period_ms | f64 start_offset_ms
        | N*D f32 row-major

    "TEMB" timed embeddings:
        magic(4) | u32 D | u32 N | N x (u32 start_ms | u32 end_ms | D f32)

These byte layouts are the contract with the consuming toolkit; keep them
bit-exact.
"""

from __future__ import annotations

import struct
import wave
from pathlib import Path

import numpy as np

from .errors import InputError

EMB_MAGIC = b"EMB1"
TEMB_MAGIC = b"TEMB"


def write_emb1(
    path: str | Path,
    vectors: np.ndarray,
    frame_period_ms: float,
    start_offset_ms: float = 0.0,
) -> None:
    vectors = np.ascontiguousarray(vectors, dtype="<f4")
    if vectors.ndim != 2:
        raise InputError("frame embeddings must be a 2-d matrix")
    n, d = vectors.shape
    payload = b"".join(
        [
            EMB_MAGIC,
            struct.pack("<II", d, n),
            struct.pack("<dd", frame_period_ms, start_offset_ms),
            vectors.tobytes(),
        ]
    )
    Path(path).write_bytes(payload)


def write_temb(
    path: str | Path,
    dim: int,
    records: list[tuple[int, int, np.ndarray]],
) -> None:
    """Write (start_ms, end_ms, vector) records; valid with zero records."""
    parts = [TEMB_MAGIC, struct.pack("<II", dim, len(records))]
    for start_ms, end_ms, vector in records:
        vector = np.ascontiguousarray(vector, dtype="<f4")
        if vector.shape != (dim,):
            raise InputError(
                f"record vector has shape {vector.shape}, expected ({dim},)"
            )
        parts.append(struct.pack("<II", start_ms, end_ms))
        parts.append(vector.tobytes())
    Path(path).write_bytes(b"".join(parts))


def read_mono_wav(path: str | Path) -> tuple[np.ndarray, int]:
    """Read a mono 16-bit PCM WAV as float samples in [-1, 1] plus its rate."""
    path = Path(path)
    try:
        with wave.open(str(path), "rb") as wf:
            if wf.getnchannels() != 1:
                raise InputError(f"{path}: only mono input is supported")
            if wf.getsampwidth() != 2:
                raise InputError(f"{path}: only 16-bit PCM is supported")
            rate = wf.getframerate()
            raw = wf.readframes(wf.getnframes())
    except wave.Error as exc:
        raise InputError(f"{path}: not a readable WAV file ({exc})") from exc
    samples = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    return samples, rate
