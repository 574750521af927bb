"""Continuous speech emotion regression toolkit.

Per-emotional-segment feature construction (native MFCC statistics plus
ingestion of pre-trained acoustic and linguistic embeddings), a
bidirectional-LSTM sequence regressor trained with a CCC-based loss, and
decision-level fusion of modality predictions.
"""

from .align import (
    EmbeddingFrames,
    TimedEmbedding,
    TimedEmbeddingSet,
    align_timed_embeddings,
    average_frames_to_segments,
    read_embedding_file,
    write_embedding_frames,
    write_timed_embeddings,
)
from .core import (
    AnnotationTrack,
    ConversationEntry,
    DatasetManifest,
    FeatureMatrix,
    GoldTrack,
    NormStats,
    PredictionTrack,
    SegmentTimeline,
    TimedWord,
    apply_norm,
    build_timeline,
    fit_norm_stats,
    load_manifest,
    merge_annotations,
)
from .dsp import (
    AudioClip,
    FrameMatrix,
    MfccConfig,
    SpeakerTurns,
    append_speaker_flag,
    extract_mfcc,
    ingest_lld_csv,
    read_feature_cache,
    read_wav,
    resample,
    summarize_segments,
    write_feature_cache,
    write_wav,
)
from .errors import FormatError, InvalidArgumentError, SchemaError, ToolkitError
from .fusion import FusionWeights, fuse, grid_search_weights
from .metrics import ScoreReport, ccc, ccc_loss, ccc_loss_grad
from .model import (
    ModelConfig,
    ModelParams,
    OptimState,
    TrainRecord,
    TrainSettings,
    adam_step,
    backward,
    forward,
    init_optim_state,
    init_params,
    load_checkpoint,
    save_checkpoint,
    train,
)
from .synth import SynthSpec, generate_dataset

__version__ = "0.1.0"
