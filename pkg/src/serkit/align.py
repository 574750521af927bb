"""Alignment of pre-trained embeddings onto the emotional-segment grid.

Two interchange formats feed this module (little-endian throughout):

    "EMB1" frame embeddings:
        magic(4) | u32 D | u32 N | f64 frame_period_ms | f64 start_offset_ms
        | N*D f32 row-major

    "TEMB" timed embeddings (words or sub-words):
        magic(4) | u32 D | u32 N | N x (u32 start_ms | u32 end_ms | D f32)

Word-to-segment alignment follows three rules: every token is kept (stop
words included), a token spanning several segments contributes its vector
to each of them, and tokens sharing a segment are averaged.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import FeatureMatrix, SegmentTimeline
from .errors import FormatError, InvalidArgumentError, SchemaError

EMB_MAGIC = b"EMB1"
TEMB_MAGIC = b"TEMB"


@dataclass(frozen=True)
class TimedEmbedding:
    """A vector attached to a half-open [start_ms, end_ms) span."""

    vector: np.ndarray
    start_ms: int
    end_ms: int

    def __post_init__(self):
        vec = np.array(self.vector, dtype=np.float32)
        vec.setflags(write=False)
        object.__setattr__(self, "vector", vec)
        if self.vector.ndim != 1 or len(self.vector) < 1:
            raise SchemaError("embedding vector must be a non-empty 1-d vector")
        if not np.all(np.isfinite(self.vector)):
            raise SchemaError("embedding vector contains non-finite values")
        if self.start_ms < 0 or self.end_ms <= self.start_ms:
            raise SchemaError(f"bad span ({self.start_ms}, {self.end_ms})")


@dataclass(frozen=True)
class TimedEmbeddingSet:
    """Timed embeddings plus their declared dimension (kept even when empty)."""

    dim: int
    items: tuple[TimedEmbedding, ...]

    def __post_init__(self):
        if self.dim < 1:
            raise SchemaError("embedding dimension must be positive")
        for item in self.items:
            if len(item.vector) != self.dim:
                raise SchemaError(
                    f"inconsistent embedding dimension: {len(item.vector)} vs "
                    f"{self.dim}"
                )


@dataclass(frozen=True)
class EmbeddingFrames:
    """Fixed-rate embedding frames; frame i starts at offset + i * period ms."""

    vectors: np.ndarray
    frame_period_ms: float
    start_offset_ms: float = 0.0

    def __post_init__(self):
        vecs = np.array(self.vectors, dtype=np.float32)
        vecs.setflags(write=False)
        object.__setattr__(self, "vectors", vecs)
        if self.vectors.ndim != 2 or self.vectors.shape[0] < 1:
            raise SchemaError("embedding frames must be a non-empty 2-d matrix")
        if not np.all(np.isfinite(self.vectors)):
            raise SchemaError("embedding frames contain non-finite values")
        if self.frame_period_ms <= 0:
            raise SchemaError("frame period must be positive")


def align_timed_embeddings(
    items: TimedEmbeddingSet | Sequence[TimedEmbedding],
    timeline: SegmentTimeline,
    feature_set: str = "linguistic-embed",
    dim: int | None = None,
) -> FeatureMatrix:
    """Project timed embeddings onto the segment grid.

    Each segment's row is the mean of every vector whose span overlaps it
    (half-open on both sides, so a span ending exactly on a boundary does
    not reach the next segment). Segments with no overlapping item get a
    zero row: a neutral placeholder, since silence is not the previous word.
    """
    if isinstance(items, TimedEmbeddingSet):
        dim = items.dim
        items = items.items
    elif dim is None:
        if len(items) == 0:
            raise InvalidArgumentError(
                "cannot infer embedding dimension from an empty item list"
            )
        dim = len(items[0].vector)
    for item in items:
        if len(item.vector) != dim:
            raise SchemaError(
                f"inconsistent embedding dimension: {len(item.vector)} vs {dim}"
            )

    n_seg = timeline.n_segments
    seg_ms = timeline.segment_ms
    sums = np.zeros((n_seg, dim))
    counts = np.zeros(n_seg)
    for item in items:
        first = max(0, item.start_ms // seg_ms)
        last = min(n_seg - 1, (item.end_ms - 1) // seg_ms)
        if last < first:
            continue
        vec = item.vector.astype(np.float64)
        sums[first : last + 1] += vec
        counts[first : last + 1] += 1.0
    rows = np.zeros((n_seg, dim))
    populated = counts > 0
    rows[populated] = sums[populated] / counts[populated, None]
    return FeatureMatrix(feature_set, rows, timeline)


def average_frames_to_segments(
    frames: EmbeddingFrames,
    timeline: SegmentTimeline,
    feature_set: str = "acoustic-embed",
) -> FeatureMatrix:
    """Average embedding frames over each emotional segment.

    A frame belongs to the segment containing its start time. Empty segments
    repeat the previous populated row (zeros before the first one); frames
    outside the timeline are ignored.
    """
    n = frames.vectors.shape[0]
    starts = frames.start_offset_ms + np.arange(n) * frames.frame_period_ms
    n_seg = timeline.n_segments
    seg = np.floor(starts / timeline.segment_ms).astype(np.int64)
    keep = (seg >= 0) & (seg < n_seg)
    seg = seg[keep]
    vecs = frames.vectors[keep].astype(np.float64)

    dim = frames.vectors.shape[1]
    counts = np.bincount(seg, minlength=n_seg).astype(np.float64)
    sums = np.zeros((n_seg, dim))
    np.add.at(sums, seg, vecs)
    rows = np.zeros((n_seg, dim))
    populated = counts > 0
    rows[populated] = sums[populated] / counts[populated, None]
    last = None
    for t in range(n_seg):
        if populated[t]:
            last = t
        elif last is not None:
            rows[t] = rows[last]
    return FeatureMatrix(feature_set, rows, timeline)


# ---------------------------------------------------------------------------
# Binary interchange formats
# ---------------------------------------------------------------------------


def write_embedding_frames(path: str | Path, frames: EmbeddingFrames) -> None:
    n, d = frames.vectors.shape
    payload = b"".join(
        [
            EMB_MAGIC,
            struct.pack("<II", d, n),
            struct.pack("<dd", frames.frame_period_ms, frames.start_offset_ms),
            frames.vectors.astype("<f4").tobytes(),
        ]
    )
    Path(path).write_bytes(payload)


def write_timed_embeddings(path: str | Path, items: TimedEmbeddingSet) -> None:
    parts = [TEMB_MAGIC, struct.pack("<II", items.dim, len(items.items))]
    for item in items.items:
        parts.append(struct.pack("<II", item.start_ms, item.end_ms))
        parts.append(item.vector.astype("<f4").tobytes())
    Path(path).write_bytes(b"".join(parts))


def _check_finite_f32(path: Path, values: np.ndarray, data_offset: int) -> None:
    if not np.all(np.isfinite(values)):
        bad = int(np.flatnonzero(~np.isfinite(values))[0])
        raise FormatError(f"{path}: non-finite value at byte {data_offset + 4 * bad}")


def read_embedding_file(
    path: str | Path,
) -> EmbeddingFrames | TimedEmbeddingSet:
    """Parse an EMB1 or TEMB file, dispatching on the magic bytes."""
    path = Path(path)
    data = path.read_bytes()
    if len(data) < 4:
        raise FormatError(f"{path}: truncated magic at byte {len(data)}")
    magic = data[:4]
    if magic == EMB_MAGIC:
        return _read_frames(path, data)
    if magic == TEMB_MAGIC:
        return _read_timed(path, data)
    raise FormatError(f"{path}: bad magic {magic!r} at byte 0")


def _read_frames(path: Path, data: bytes) -> EmbeddingFrames:
    if len(data) < 28:
        raise FormatError(f"{path}: truncated header at byte {len(data)}")
    d, n = struct.unpack_from("<II", data, 4)
    period, offset = struct.unpack_from("<dd", data, 12)
    if d < 1 or n < 1:
        raise FormatError(f"{path}: invalid frame counts {n}x{d}")
    if period <= 0:
        raise FormatError(f"{path}: invalid frame period {period}")
    need = 28 + 4 * n * d
    if len(data) != need:
        raise FormatError(
            f"{path}: payload is {len(data)} bytes, expected {need} "
            f"(truncated at byte {min(len(data), need)})"
        )
    vectors = np.frombuffer(data, dtype="<f4", count=n * d, offset=28)
    _check_finite_f32(path, vectors, 28)
    return EmbeddingFrames(vectors.reshape(n, d), period, offset)


def _read_timed(path: Path, data: bytes) -> TimedEmbeddingSet:
    if len(data) < 12:
        raise FormatError(f"{path}: truncated header at byte {len(data)}")
    d, n = struct.unpack_from("<II", data, 4)
    if d < 1:
        raise FormatError(f"{path}: invalid embedding dimension {d}")
    record = 8 + 4 * d
    need = 12 + n * record
    if len(data) != need:
        raise FormatError(
            f"{path}: payload is {len(data)} bytes, expected {need} "
            f"(truncated at byte {min(len(data), need)})"
        )
    items = []
    off = 12
    for _ in range(n):
        start, end = struct.unpack_from("<II", data, off)
        vec = np.frombuffer(data, dtype="<f4", count=d, offset=off + 8)
        _check_finite_f32(path, vec, off + 8)
        if end <= start:
            raise FormatError(f"{path}: empty span at byte {off}")
        items.append(TimedEmbedding(vec, start, end))
        off += record
    return TimedEmbeddingSet(d, tuple(items))
