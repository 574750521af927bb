"""Workflow orchestration behind the CLI: feature extraction with
content-hash caching, training runs, evaluation, and fusion.

Everything lives under one output directory:

    <out>/features/<feature_set>/<conversation>.fea       feature caches
    <out>/models/<feature_set>.<dimension>/               checkpoints, history
    <out>/eval/<subset>.<feature_set>.<dimension>/        reports, predictions
    <out>/fusion/<a>+<b>.<dimension>/                     grid report, fused CSVs
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

from .align import EmbeddingFrames, align_timed_embeddings, average_frames_to_segments
from .align import read_embedding_file
from .core import (
    ConversationEntry,
    DatasetManifest,
    FeatureMatrix,
    GoldTrack,
    PredictionTrack,
    build_timeline,
    load_gold,
    load_manifest,
    read_annotation_csv,
    read_prediction_csv,
    write_annotation_csv,
    write_prediction_csv,
)
from .dsp import (
    MfccConfig,
    extract_mfcc,
    ingest_lld_csv,
    read_feature_cache,
    read_wav,
    summarize_segments,
    wav_duration_ms,
    write_feature_cache,
)
from .errors import InvalidArgumentError, SchemaError, ToolkitError
from .fusion import fuse, grid_search_weights, write_fusion_report
from .metrics import ScoreReport, ccc, concat_ccc, write_score_report
from .model import (
    ModelConfig,
    ModelParams,
    TrainSettings,
    forward,
    load_checkpoint,
    save_checkpoint,
    train,
    write_history_csv,
)

# Reducer defaults for pre-trained feature sets: high-dimensional inputs are
# projected down to baseline feature sizes before the recurrent stack.
DEFAULT_REDUCERS = {"acoustic-embed": 40, "linguistic-embed": 48}

DEFAULT_LAYER_UNITS = (200, 64, 32, 32)


# ---------------------------------------------------------------------------
# Feature extraction with content-hash caching
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ExtractStats:
    written: int
    skipped: int
    errors: tuple[tuple[str, str], ...]


def features_dir(out: str | Path, feature_set: str) -> Path:
    return Path(out) / "features" / feature_set


def _extraction_inputs(
    manifest: DatasetManifest, entry: ConversationEntry, feature_set: str
) -> list[Path]:
    """Source files whose bytes determine a conversation's feature cache."""
    paths = [manifest.resolve(entry.audio)]
    if feature_set != "mfcc-stats":
        rel = entry.embeddings.get(feature_set)
        if rel is None:
            raise InvalidArgumentError(
                f"conversation {entry.id!r} lists no source for feature set "
                f"{feature_set!r}"
            )
        paths.append(manifest.resolve(rel))
    return paths


def extract_conversation(
    manifest: DatasetManifest, entry: ConversationEntry, feature_set: str
) -> FeatureMatrix:
    """Compute one conversation's per-segment features for a feature set.

    ``mfcc-stats`` runs the native MFCC path on the WAV; ``egemaps-stats``
    ingests the descriptor CSV named in the manifest's embeddings map; any
    other feature set reads its EMB1/TEMB file and aligns it to the grid.
    The timeline always comes from the audio duration.
    """
    inputs = _extraction_inputs(manifest, entry, feature_set)
    for p in inputs:
        if not p.exists():
            raise InvalidArgumentError(f"missing input file {p}")
    audio_path = inputs[0]
    if feature_set == "mfcc-stats":
        clip = read_wav(audio_path)
        timeline = build_timeline(clip.duration_ms, entry.segment_ms, entry.id)
        return summarize_segments(extract_mfcc(clip), timeline, feature_set)
    timeline = build_timeline(wav_duration_ms(audio_path), entry.segment_ms, entry.id)
    source = inputs[1]
    if feature_set == "egemaps-stats":
        return ingest_lld_csv(source, timeline, feature_set)
    parsed = read_embedding_file(source)
    if isinstance(parsed, EmbeddingFrames):
        return average_frames_to_segments(parsed, timeline, feature_set)
    return align_timed_embeddings(parsed, timeline, feature_set)


def _cache_digest(inputs: Sequence[Path], feature_set: str, segment_ms: int) -> str:
    h = hashlib.sha256()
    params = {
        "feature_set": feature_set,
        "segment_ms": segment_ms,
        "mfcc": vars(MfccConfig()) if feature_set == "mfcc-stats" else None,
        "cache_version": 1,
    }
    h.update(json.dumps(params, sort_keys=True, default=str).encode("utf-8"))
    for p in inputs:
        h.update(p.read_bytes())
    return h.hexdigest()


def extract_features(
    manifest: DatasetManifest, feature_set: str, out: str | Path
) -> ExtractStats:
    """Extract (or reuse) one FEA1 cache per conversation.

    Caches are invalidated by a content hash over the source bytes and the
    extraction parameters, never by mtime, so copied trees stay warm. Errors
    are collected per conversation instead of aborting the batch.
    """
    fdir = features_dir(out, feature_set)
    fdir.mkdir(parents=True, exist_ok=True)
    written = skipped = 0
    errors: list[tuple[str, str]] = []
    for entry in manifest.conversations:
        try:
            inputs = _extraction_inputs(manifest, entry, feature_set)
            missing = [str(p) for p in inputs if not p.exists()]
            if missing:
                raise InvalidArgumentError(f"missing input files: {missing}")
            digest = _cache_digest(inputs, feature_set, entry.segment_ms)
            cache = fdir / f"{entry.id}.fea"
            meta = fdir / f"{entry.id}.meta.json"
            if cache.exists() and meta.exists():
                try:
                    if json.loads(meta.read_text())["digest"] == digest:
                        skipped += 1
                        continue
                except (json.JSONDecodeError, KeyError):
                    pass
            fm = extract_conversation(manifest, entry, feature_set)
            write_feature_cache(cache, fm)
            meta.write_text(json.dumps({"digest": digest}) + "\n", encoding="utf-8")
            written += 1
        except ToolkitError as exc:
            errors.append((entry.id, str(exc)))
    return ExtractStats(written, skipped, tuple(errors))


def load_cached_features(
    out: str | Path, feature_set: str, entries: Sequence[ConversationEntry]
) -> dict[str, FeatureMatrix]:
    fdir = features_dir(out, feature_set)
    features = {}
    for entry in entries:
        cache = fdir / f"{entry.id}.fea"
        if not cache.exists():
            raise InvalidArgumentError(
                f"no feature cache for conversation {entry.id!r} "
                f"(expected {cache}); run extract first"
            )
        features[entry.id] = read_feature_cache(cache, entry.id)
    return features


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------


@dataclass
class RunConfig:
    """One training run; field names match the JSON config file exactly."""

    manifest: str
    feature_set: str
    dimension: str
    out: str
    seed: int = 0
    epochs: int = 500
    batch_size: int = 15
    learning_rate: float = 0.001
    model: dict = field(default_factory=dict)


def run_config_from_json(path: str | Path) -> dict:
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise SchemaError(f"config {path}: invalid JSON ({exc})") from exc
    if not isinstance(raw, dict):
        raise SchemaError(f"config {path}: top level must be an object")
    known = {f for f in RunConfig.__dataclass_fields__}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise SchemaError(f"config {path}: unknown fields {unknown}")
    return raw


def build_model_config(run: RunConfig, input_dim: int) -> ModelConfig:
    overrides = dict(run.model)
    layer_units = tuple(overrides.pop("layer_units", DEFAULT_LAYER_UNITS))
    if "reducer_dim" in overrides:
        reducer_dim = overrides.pop("reducer_dim")
    else:
        reducer_dim = DEFAULT_REDUCERS.get(run.feature_set)
    output_tanh = overrides.pop("output_tanh", False)
    grad_clip = overrides.pop("grad_clip", None)
    if overrides:
        raise SchemaError(f"unknown model config keys {sorted(overrides)}")
    return ModelConfig(
        input_dim=input_dim,
        layer_units=layer_units,
        reducer_dim=reducer_dim,
        output_tanh=output_tanh,
        grad_clip=grad_clip,
        seed=run.seed,
        feature_set=run.feature_set,
        dimension=run.dimension,
    )


def _assemble(
    manifest: DatasetManifest,
    entries: Sequence[ConversationEntry],
    features: Mapping[str, FeatureMatrix],
    dimension: str,
) -> list[tuple[FeatureMatrix, GoldTrack]]:
    data = []
    for entry in entries:
        fm = features[entry.id]
        gold = load_gold(manifest, entry, dimension)
        if len(gold.values) != fm.timeline.n_segments:
            raise SchemaError(
                f"conversation {entry.id!r}: gold has {len(gold.values)} "
                f"segments, features have {fm.timeline.n_segments}"
            )
        data.append((fm, gold))
    return data


@dataclass(frozen=True)
class TrainArtifacts:
    best_checkpoint: Path
    last_checkpoint: Path
    history: Path
    best_dev_ccc: float


def train_run(
    run: RunConfig, log: Callable[[str], None] | None = None
) -> TrainArtifacts:
    manifest = load_manifest(run.manifest)
    train_entries = manifest.subset("train")
    dev_entries = manifest.subset("dev")
    if not train_entries or not dev_entries:
        raise InvalidArgumentError("manifest needs non-empty train and dev subsets")
    feats = load_cached_features(run.out, run.feature_set, train_entries + dev_entries)
    train_data = _assemble(manifest, train_entries, feats, run.dimension)
    dev_data = _assemble(manifest, dev_entries, feats, run.dimension)
    config = build_model_config(run, train_data[0][0].dim)
    settings = TrainSettings(
        epochs=run.epochs,
        batch_size=run.batch_size,
        learning_rate=run.learning_rate,
        seed=run.seed,
    )
    result = train(train_data, dev_data, config, settings, log)

    model_dir = Path(run.out) / "models" / f"{run.feature_set}.{run.dimension}"
    model_dir.mkdir(parents=True, exist_ok=True)
    best_path = model_dir / "best.ckpt"
    last_path = model_dir / "last.ckpt"
    history_path = model_dir / "history.csv"
    save_checkpoint(result.best, best_path)
    save_checkpoint(result.last, last_path)
    write_history_csv(result.record, history_path)
    best_ccc = result.record.epochs[result.record.best_epoch].dev_ccc
    return TrainArtifacts(best_path, last_path, history_path, best_ccc)


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EvalArtifacts:
    report: Path
    predictions_dir: Path
    gold_dir: Path
    ccc_concat: float


def eval_run(
    checkpoint: str | Path, manifest_path: str | Path, subset: str, out: str | Path
) -> EvalArtifacts:
    """Score a checkpoint on one subset; writes the score report plus
    per-conversation prediction and gold CSVs."""
    params = load_checkpoint(checkpoint)
    feature_set = params.config.feature_set
    dimension = params.config.dimension
    manifest = load_manifest(manifest_path)
    entries = manifest.subset(subset)
    if not entries:
        raise InvalidArgumentError(f"subset {subset!r} is empty")
    feats = load_cached_features(out, feature_set, entries)
    data = _assemble(manifest, entries, feats, dimension)

    # One directory per model: conversation ids are unique across subsets,
    # so dev and test predictions can accumulate side by side (which is what
    # a later fusion over both subsets wants to consume).
    eval_dir = Path(out) / "eval" / f"{feature_set}.{dimension}"
    pred_dir = eval_dir / "predictions"
    gold_dir = eval_dir / "gold"
    pred_dir.mkdir(parents=True, exist_ok=True)
    gold_dir.mkdir(parents=True, exist_ok=True)

    preds, golds, per_conv = [], [], []
    for entry, (fm, gold) in zip(entries, data):
        track = forward(params, fm)
        write_prediction_csv(track, entry.segment_ms, pred_dir / f"{entry.id}.csv")
        write_annotation_csv(gold.values, gold_dir / f"{entry.id}.csv")
        preds.append(track.values)
        golds.append(gold.values)
        per_conv.append((entry.id, ccc(track.values, gold.values)))
    report = ScoreReport(dimension, concat_ccc(preds, golds), tuple(per_conv))
    report_path = eval_dir / f"report.{subset}.csv"
    write_score_report(report, report_path)
    return EvalArtifacts(report_path, pred_dir, gold_dir, report.ccc_concat)


# ---------------------------------------------------------------------------
# Fusion
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FuseArtifacts:
    report: Path
    w_a: float
    dev_ccc: float
    fused_dirs: tuple[Path, ...]


def _read_subset_predictions(
    preds_dir: Path, entries: Sequence[ConversationEntry], source: str
) -> dict[str, PredictionTrack]:
    tracks = {}
    missing = []
    for entry in entries:
        path = preds_dir / f"{entry.id}.csv"
        if not path.exists():
            missing.append(entry.id)
            continue
        tracks[entry.id] = read_prediction_csv(path, entry.id, source)
    if missing:
        raise InvalidArgumentError(
            f"prediction directory {preds_dir} is missing conversations {missing}"
        )
    return tracks


def fuse_run(
    preds_a_dir: str | Path,
    preds_b_dir: str | Path,
    manifest_path: str | Path,
    dimension: str,
    out: str | Path,
) -> FuseArtifacts:
    """Grid-search fusion weights on dev, then write the report, the fused
    dev tracks, and fused test tracks when both sides cover the test subset."""
    preds_a_dir, preds_b_dir = Path(preds_a_dir), Path(preds_b_dir)
    manifest = load_manifest(manifest_path)
    dev_entries = manifest.subset("dev")
    if not dev_entries:
        raise InvalidArgumentError("manifest has no dev conversations")
    name_a = preds_a_dir.parent.name if preds_a_dir.name == "predictions" else preds_a_dir.name
    name_b = preds_b_dir.parent.name if preds_b_dir.name == "predictions" else preds_b_dir.name
    preds_a = _read_subset_predictions(preds_a_dir, dev_entries, name_a)
    preds_b = _read_subset_predictions(preds_b_dir, dev_entries, name_b)
    golds = {e.id: load_gold(manifest, e, dimension) for e in dev_entries}
    selected, grid = grid_search_weights(preds_a, preds_b, golds)

    fusion_dir = Path(out) / "fusion" / f"{name_a}+{name_b}.{dimension}"
    fusion_dir.mkdir(parents=True, exist_ok=True)
    report_path = fusion_dir / "report.csv"
    write_fusion_report(selected, grid, report_path)

    fused_dirs = []
    for subset in ("dev", "test"):
        entries = manifest.subset(subset) if subset != "dev" else dev_entries
        if not entries:
            continue
        if subset == "test":
            have_all = all(
                (preds_a_dir / f"{e.id}.csv").exists()
                and (preds_b_dir / f"{e.id}.csv").exists()
                for e in entries
            )
            if not have_all:
                continue
            tracks_a = _read_subset_predictions(preds_a_dir, entries, name_a)
            tracks_b = _read_subset_predictions(preds_b_dir, entries, name_b)
        else:
            tracks_a, tracks_b = preds_a, preds_b
        sub_dir = fusion_dir / subset
        sub_dir.mkdir(exist_ok=True)
        for e in entries:
            fused = fuse(tracks_a[e.id], tracks_b[e.id], selected.w_a)
            write_prediction_csv(fused, e.segment_ms, sub_dir / f"{e.id}.csv")
        fused_dirs.append(sub_dir)
    return FuseArtifacts(report_path, selected.w_a, selected.dev_ccc, tuple(fused_dirs))


# ---------------------------------------------------------------------------
# Plotting
# ---------------------------------------------------------------------------


def read_track_csv(path: str | Path) -> PredictionTrack:
    """Read either prediction CSVs or annotation/gold CSVs as a plot track."""
    path = Path(path)
    with path.open(encoding="utf-8") as fh:
        header = fh.readline().strip()
    if header == "segment_index,value":
        ann = read_annotation_csv(path, dimension="")
        return PredictionTrack(path.stem, ann.values, path.stem)
    return read_prediction_csv(path)


def plot_run(
    gold_csv: str | Path,
    pred_csvs: Sequence[str | Path],
    out_svg: str | Path,
    title: str = "",
) -> Path:
    from .plot import write_tracks_svg

    gold_track = read_track_csv(gold_csv)
    gold = GoldTrack("reference", gold_track.values)
    tracks = [read_track_csv(p) for p in pred_csvs]
    out_svg = Path(out_svg)
    out_svg.parent.mkdir(parents=True, exist_ok=True)
    write_tracks_svg(gold, tracks, out_svg, title)
    return out_svg
