"""Shared data model: segment timelines, annotation tracks, feature matrices,
dataset manifests, and input normalization.

All types are immutable after construction; array fields are stored as
read-only copies so instances can be shared freely across threads.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import InvalidArgumentError, SchemaError

SUBSETS = ("train", "dev", "test")

# Lower bound applied to per-dimension standard deviations so normalization
# never divides by zero on constant feature columns.
STD_FLOOR = 1e-8


def _readonly(values, dtype=np.float64) -> np.ndarray:
    arr = np.array(values, dtype=dtype)
    arr.setflags(write=False)
    return arr


def _require_finite(arr: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise SchemaError(f"{what} contains non-finite values")


@dataclass(frozen=True)
class SegmentTimeline:
    """A conversation's emotional-segment grid; the universal time axis.

    Segment ``t`` covers the half-open interval
    ``[t * segment_ms, (t + 1) * segment_ms)``.
    """

    conversation_id: str
    segment_ms: int
    n_segments: int

    def __post_init__(self):
        if self.segment_ms <= 0:
            raise InvalidArgumentError("segment_ms must be positive")
        if self.n_segments < 1:
            raise InvalidArgumentError("n_segments must be >= 1")

    @property
    def total_ms(self) -> int:
        return self.segment_ms * self.n_segments

    def segment_bounds(self, index: int) -> tuple[int, int]:
        if not 0 <= index < self.n_segments:
            raise InvalidArgumentError(f"segment index {index} out of range")
        return index * self.segment_ms, (index + 1) * self.segment_ms


def build_timeline(
    audio_duration_ms: int, segment_ms: int, conversation_id: str = ""
) -> SegmentTimeline:
    """Segment grid covering ``audio_duration_ms``.

    A trailing partial segment counts as a full segment, so no labeled time
    is ever dropped: ``n_segments = ceil(duration / segment_ms)``.
    """
    if audio_duration_ms < 1:
        raise InvalidArgumentError("audio_duration_ms must be >= 1")
    if segment_ms < 1:
        raise InvalidArgumentError("segment_ms must be >= 1")
    n_segments = -(-audio_duration_ms // segment_ms)
    return SegmentTimeline(conversation_id, segment_ms, n_segments)


@dataclass(frozen=True)
class AnnotationTrack:
    """One annotator's continuous trace for one dimension."""

    annotator_id: str
    dimension: str
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "values", _readonly(self.values))
        if self.values.ndim != 1 or len(self.values) < 1:
            raise SchemaError("annotation values must be a non-empty 1-d sequence")
        _require_finite(self.values, "annotation values")


@dataclass(frozen=True)
class GoldTrack:
    """Merged per-segment reference values for one dimension."""

    dimension: str
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "values", _readonly(self.values))
        if self.values.ndim != 1 or len(self.values) < 1:
            raise SchemaError("gold values must be a non-empty 1-d sequence")
        _require_finite(self.values, "gold values")


def merge_annotations(tracks: Sequence[AnnotationTrack]) -> GoldTrack:
    """Merge annotator traces into a gold reference by element-wise mean.

    All tracks must share one dimension and one length. Each element is an
    exactly rounded sum (math.fsum), so the result is bit-identical under
    any permutation of the track list.
    """
    if len(tracks) == 0:
        raise InvalidArgumentError("need at least one annotation track")
    dimension = tracks[0].dimension
    length = len(tracks[0].values)
    for t in tracks[1:]:
        if t.dimension != dimension:
            raise SchemaError(
                f"dimension mismatch: {t.dimension!r} vs {dimension!r}"
            )
        if len(t.values) != length:
            raise SchemaError(
                f"length mismatch: annotator {t.annotator_id!r} has "
                f"{len(t.values)} segments, expected {length}"
            )
    merged = np.array(
        [math.fsum(column) / len(tracks) for column in zip(*(t.values for t in tracks))]
    )
    return GoldTrack(dimension, merged)


@dataclass(frozen=True)
class FeatureMatrix:
    """Per-segment feature rows (T x D) tagged with their feature-set name."""

    feature_set: str
    rows: np.ndarray
    timeline: SegmentTimeline

    def __post_init__(self):
        object.__setattr__(self, "rows", _readonly(self.rows))
        if self.rows.ndim != 2:
            raise SchemaError("feature rows must be a 2-d matrix")
        if self.rows.shape[0] != self.timeline.n_segments:
            raise SchemaError(
                f"feature rows ({self.rows.shape[0]}) do not match timeline "
                f"segments ({self.timeline.n_segments})"
            )
        if self.rows.shape[1] < 1:
            raise SchemaError("feature dimension must be positive")
        _require_finite(self.rows, f"features[{self.feature_set}]")

    @property
    def dim(self) -> int:
        return self.rows.shape[1]


@dataclass(frozen=True)
class TimedWord:
    token: str
    start_ms: int
    end_ms: int

    def __post_init__(self):
        if self.start_ms < 0:
            raise SchemaError(f"word {self.token!r}: negative start_ms")
        if self.end_ms <= self.start_ms:
            raise SchemaError(f"word {self.token!r}: end_ms must exceed start_ms")


@dataclass(frozen=True)
class PredictionTrack:
    """Per-segment scalar predictions for one conversation."""

    conversation_id: str
    values: np.ndarray
    source: str

    def __post_init__(self):
        object.__setattr__(self, "values", _readonly(self.values))
        if self.values.ndim != 1 or len(self.values) < 1:
            raise SchemaError("prediction values must be a non-empty 1-d sequence")
        _require_finite(self.values, "prediction values")


@dataclass(frozen=True)
class NormStats:
    """Per-dimension mean and (floored) standard deviation of a feature set."""

    feature_set: str
    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "mean", _readonly(self.mean))
        object.__setattr__(self, "std", _readonly(self.std))
        if self.mean.shape != self.std.shape or self.mean.ndim != 1:
            raise SchemaError("mean and std must be 1-d vectors of equal length")
        if np.any(self.std < STD_FLOOR):
            raise SchemaError(f"std entries must be >= {STD_FLOOR}")


def fit_norm_stats(train_features: Sequence[FeatureMatrix]) -> NormStats:
    """Pool all train segments and compute per-dimension mean / population std.

    Standard deviations are floored at ``STD_FLOOR`` so constant columns
    normalize to zero instead of dividing by zero.
    """
    if len(train_features) == 0:
        raise InvalidArgumentError("need at least one feature matrix")
    feature_set = train_features[0].feature_set
    dim = train_features[0].dim
    for fm in train_features[1:]:
        if fm.feature_set != feature_set:
            raise SchemaError(
                f"feature_set mismatch: {fm.feature_set!r} vs {feature_set!r}"
            )
        if fm.dim != dim:
            raise SchemaError(f"dimension mismatch: {fm.dim} vs {dim}")
    pooled = np.concatenate([fm.rows for fm in train_features], axis=0)
    mean = pooled.mean(axis=0)
    std = pooled.std(axis=0)  # population (1/N) moments
    std = np.maximum(std, STD_FLOOR)
    return NormStats(feature_set, mean, std)


def apply_norm(features: FeatureMatrix, stats: NormStats) -> FeatureMatrix:
    """Normalize features to zero mean / unit variance per dimension."""
    if features.dim != len(stats.mean):
        raise SchemaError(
            f"dimension mismatch: features have {features.dim}, stats have "
            f"{len(stats.mean)}"
        )
    if features.feature_set != stats.feature_set:
        raise SchemaError(
            f"feature_set mismatch: {features.feature_set!r} vs "
            f"{stats.feature_set!r}"
        )
    rows = (features.rows - stats.mean) / stats.std
    return FeatureMatrix(features.feature_set, rows, features.timeline)


# ---------------------------------------------------------------------------
# Dataset manifest
# ---------------------------------------------------------------------------

_MANIFEST_FIELDS = {
    "id",
    "audio",
    "transcript",
    "annotations",
    "embeddings",
    "subset",
    "segment_ms",
}


@dataclass(frozen=True)
class ConversationEntry:
    """One conversation's source files. Paths are stored as written in the
    manifest and resolved against the manifest's directory."""

    id: str
    audio: str
    transcript: str | None
    annotations: tuple[str, ...]
    embeddings: Mapping[str, str]
    subset: str
    segment_ms: int


@dataclass(frozen=True)
class DatasetManifest:
    conversations: tuple[ConversationEntry, ...]
    root: Path

    def subset(self, name: str) -> list[ConversationEntry]:
        if name not in SUBSETS:
            raise InvalidArgumentError(f"unknown subset {name!r}")
        return [c for c in self.conversations if c.subset == name]

    def by_id(self, conversation_id: str) -> ConversationEntry:
        for c in self.conversations:
            if c.id == conversation_id:
                return c
        raise InvalidArgumentError(f"unknown conversation {conversation_id!r}")

    def resolve(self, path: str) -> Path:
        p = Path(path)
        return p if p.is_absolute() else self.root / p


def _entry_from_record(record, index: int) -> ConversationEntry:
    if not isinstance(record, dict):
        raise SchemaError(f"manifest entry {index}: expected an object")
    got = set(record)
    if got != _MANIFEST_FIELDS:
        missing = sorted(_MANIFEST_FIELDS - got)
        extra = sorted(got - _MANIFEST_FIELDS)
        raise SchemaError(
            f"manifest entry {index}: missing fields {missing}, "
            f"unexpected fields {extra}"
        )
    if record["subset"] not in SUBSETS:
        raise SchemaError(
            f"manifest entry {index}: subset must be one of {SUBSETS}"
        )
    if not isinstance(record["segment_ms"], int) or record["segment_ms"] <= 0:
        raise SchemaError(f"manifest entry {index}: segment_ms must be a positive int")
    if not isinstance(record["annotations"], list) or len(record["annotations"]) < 1:
        raise SchemaError(f"manifest entry {index}: need at least one annotation path")
    if not isinstance(record["embeddings"], dict):
        raise SchemaError(f"manifest entry {index}: embeddings must be an object")
    return ConversationEntry(
        id=record["id"],
        audio=record["audio"],
        transcript=record["transcript"],
        annotations=tuple(record["annotations"]),
        embeddings=dict(record["embeddings"]),
        subset=record["subset"],
        segment_ms=record["segment_ms"],
    )


def load_manifest(path: str | Path, *, check_paths: bool = True) -> DatasetManifest:
    """Load a dataset manifest (one JSON array of conversation records).

    With ``check_paths`` every referenced file must exist relative to the
    manifest's directory; commands that prefer per-conversation diagnostics
    pass ``check_paths=False`` and verify inputs themselves.
    """
    path = Path(path)
    try:
        records = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise SchemaError(f"manifest {path}: invalid JSON ({exc})") from exc
    if not isinstance(records, list):
        raise SchemaError(f"manifest {path}: top level must be an array")
    entries = [_entry_from_record(r, i) for i, r in enumerate(records)]
    ids = [e.id for e in entries]
    if len(set(ids)) != len(ids):
        dupes = sorted({i for i in ids if ids.count(i) > 1})
        raise SchemaError(f"manifest {path}: duplicate conversation ids {dupes}")
    manifest = DatasetManifest(tuple(entries), path.parent)
    if check_paths:
        for e in entries:
            for ref in manifest_paths(e):
                if not manifest.resolve(ref).exists():
                    raise SchemaError(
                        f"manifest {path}: conversation {e.id!r} references "
                        f"missing file {ref!r}"
                    )
    return manifest


def manifest_paths(entry: ConversationEntry) -> list[str]:
    """All file paths referenced by one conversation entry."""
    refs = [entry.audio]
    if entry.transcript is not None:
        refs.append(entry.transcript)
    refs.extend(entry.annotations)
    refs.extend(entry.embeddings.values())
    return refs


def save_manifest(entries: Sequence[ConversationEntry], path: str | Path) -> None:
    records = [
        {
            "id": e.id,
            "audio": e.audio,
            "transcript": e.transcript,
            "annotations": list(e.annotations),
            "embeddings": dict(e.embeddings),
            "subset": e.subset,
            "segment_ms": e.segment_ms,
        }
        for e in entries
    ]
    Path(path).write_text(
        json.dumps(records, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


# ---------------------------------------------------------------------------
# Annotation / transcript / prediction files
# ---------------------------------------------------------------------------


def read_annotation_csv(
    path: str | Path, dimension: str, annotator_id: str | None = None
) -> AnnotationTrack:
    """Read one annotator trace: CSV with header ``segment_index,value``.

    Rows must be indexed 0..n-1 in order. The annotator id defaults to the
    file's stem.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["segment_index", "value"]:
            raise SchemaError(f"{path}: expected header 'segment_index,value'")
        values = []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != 2:
                raise SchemaError(f"{path}: row {lineno}: expected 2 columns")
            try:
                idx = int(row[0])
                val = float(row[1])
            except ValueError as exc:
                raise SchemaError(f"{path}: row {lineno}: {exc}") from exc
            if idx != len(values):
                raise SchemaError(
                    f"{path}: row {lineno}: segment_index {idx} out of order"
                )
            values.append(val)
    if not values:
        raise SchemaError(f"{path}: no annotation rows")
    return AnnotationTrack(annotator_id or path.stem, dimension, np.array(values))


def write_annotation_csv(values: Sequence[float], path: str | Path) -> None:
    lines = ["segment_index,value"]
    lines += [f"{i},{float(v)!r}" for i, v in enumerate(values)]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_gold(
    manifest: DatasetManifest, entry: ConversationEntry, dimension: str
) -> GoldTrack:
    """Merge all of a conversation's annotator files into its gold track."""
    tracks = [
        read_annotation_csv(manifest.resolve(p), dimension) for p in entry.annotations
    ]
    return merge_annotations(tracks)


def read_transcript(path: str | Path) -> list[TimedWord]:
    """Read a timed transcript: JSON array of token/start_ms/end_ms objects."""
    path = Path(path)
    try:
        records = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise SchemaError(f"transcript {path}: invalid JSON ({exc})") from exc
    if not isinstance(records, list):
        raise SchemaError(f"transcript {path}: top level must be an array")
    words = []
    for i, rec in enumerate(records):
        if not isinstance(rec, dict) or set(rec) != {"token", "start_ms", "end_ms"}:
            raise SchemaError(
                f"transcript {path}: entry {i} must have exactly "
                "token/start_ms/end_ms"
            )
        words.append(TimedWord(rec["token"], rec["start_ms"], rec["end_ms"]))
    for prev, cur in zip(words, words[1:]):
        if (cur.start_ms, cur.end_ms) < (prev.start_ms, prev.end_ms):
            raise SchemaError(
                f"transcript {path}: words not sorted at {cur.token!r}"
            )
    return words


def write_transcript(words: Sequence[TimedWord], path: str | Path) -> None:
    records = [
        {"token": w.token, "start_ms": w.start_ms, "end_ms": w.end_ms} for w in words
    ]
    Path(path).write_text(
        json.dumps(records, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def write_prediction_csv(
    track: PredictionTrack, segment_ms: int, path: str | Path
) -> None:
    """Write per-segment predictions as ``segment_index,time_ms,value`` rows."""
    lines = ["segment_index,time_ms,value"]
    lines += [
        f"{i},{i * segment_ms},{float(v)!r}" for i, v in enumerate(track.values)
    ]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_prediction_csv(
    path: str | Path, conversation_id: str | None = None, source: str | None = None
) -> PredictionTrack:
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["segment_index", "time_ms", "value"]:
            raise SchemaError(
                f"{path}: expected header 'segment_index,time_ms,value'"
            )
        values = []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != 3:
                raise SchemaError(f"{path}: row {lineno}: expected 3 columns")
            try:
                idx = int(row[0])
                val = float(row[2])
            except ValueError as exc:
                raise SchemaError(f"{path}: row {lineno}: {exc}") from exc
            if idx != len(values):
                raise SchemaError(
                    f"{path}: row {lineno}: segment_index {idx} out of order"
                )
            values.append(val)
    if not values:
        raise SchemaError(f"{path}: no prediction rows")
    return PredictionTrack(
        conversation_id or path.stem, np.array(values), source or path.stem
    )
