"""Native acoustic feature extraction.

Covers WAV ingestion, band-limited resampling, MFCC frame extraction,
low-level-descriptor CSV ingestion, per-emotional-segment statistical
summaries, the binary speaker-presence flag, and the "FEA1" feature cache
format:

    magic "FEA1" | u32 D | u32 T | f64 segment_ms | T*D f32 row-major
    | u16 length-prefixed UTF-8 feature_set        (all little-endian)
"""

from __future__ import annotations

import csv
import struct
import wave
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy.fft

from .core import FeatureMatrix, SegmentTimeline
from .errors import FormatError, InvalidArgumentError, SchemaError

_FEA_MAGIC = b"FEA1"


@dataclass(frozen=True)
class AudioClip:
    """Mono audio with samples nominally in [-1, 1]."""

    samples: np.ndarray
    sample_rate_hz: int

    def __post_init__(self):
        samples = np.array(self.samples, dtype=np.float64)
        samples.setflags(write=False)
        object.__setattr__(self, "samples", samples)
        if self.samples.ndim != 1:
            raise InvalidArgumentError("audio must be mono (1-d samples)")
        if self.sample_rate_hz <= 0:
            raise InvalidArgumentError("sample rate must be positive")
        if not np.all(np.isfinite(self.samples)):
            raise InvalidArgumentError("audio samples must be finite")

    @property
    def duration_ms(self) -> int:
        """Duration in whole milliseconds, rounded up so no tail is lost."""
        return -(-len(self.samples) * 1000 // self.sample_rate_hz)


@dataclass(frozen=True)
class FrameMatrix:
    """Frame-level features: frame i covers [i*hop, i*hop + win) ms."""

    frames: np.ndarray
    frame_hop_ms: float
    frame_win_ms: float

    def __post_init__(self):
        frames = np.array(self.frames, dtype=np.float64)
        frames.setflags(write=False)
        object.__setattr__(self, "frames", frames)
        if self.frames.ndim != 2 or self.frames.shape[0] < 1:
            raise InvalidArgumentError("frames must be a non-empty 2-d matrix")
        if self.frame_hop_ms <= 0 or self.frame_win_ms <= 0:
            raise InvalidArgumentError("hop and window must be positive")


@dataclass(frozen=True)
class SpeakerTurns:
    """Sorted, non-overlapping [start_ms, end_ms) intervals of speaker activity."""

    intervals: tuple[tuple[int, int], ...]

    def __post_init__(self):
        prev_end = None
        for start, end in self.intervals:
            if end <= start or start < 0:
                raise InvalidArgumentError(f"bad interval ({start}, {end})")
            if prev_end is not None and start < prev_end:
                raise InvalidArgumentError("intervals must be sorted, non-overlapping")
            prev_end = end


# ---------------------------------------------------------------------------
# WAV input / output (RIFF, 16-bit PCM, mono)
# ---------------------------------------------------------------------------


def read_wav(path: str | Path) -> AudioClip:
    path = Path(path)
    try:
        with wave.open(str(path), "rb") as wf:
            n_channels = wf.getnchannels()
            sampwidth = wf.getsampwidth()
            rate = wf.getframerate()
            n_frames = wf.getnframes()
            if n_channels != 1:
                raise FormatError(
                    f"{path}: {n_channels} channels; only mono is supported, "
                    "down-mix externally"
                )
            if sampwidth != 2:
                raise FormatError(f"{path}: only 16-bit PCM is supported")
            raw = wf.readframes(n_frames)
    except wave.Error as exc:
        raise FormatError(f"{path}: not a readable WAV file ({exc})") from exc
    samples = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    return AudioClip(samples, rate)


def write_wav(path: str | Path, clip: AudioClip) -> None:
    scaled = np.clip(clip.samples, -1.0, 1.0) * 32767.0
    data = np.round(scaled).astype("<i2").tobytes()
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(clip.sample_rate_hz)
        wf.writeframes(data)


def wav_duration_ms(path: str | Path) -> int:
    """Duration of a WAV file in whole ms (rounded up) from its header."""
    path = Path(path)
    try:
        with wave.open(str(path), "rb") as wf:
            return -(-wf.getnframes() * 1000 // wf.getframerate())
    except wave.Error as exc:
        raise FormatError(f"{path}: not a readable WAV file ({exc})") from exc


# ---------------------------------------------------------------------------
# Resampling
# ---------------------------------------------------------------------------

_SINC_HALF_WIDTH = 64  # zero crossings on each side of the interpolation kernel
_KAISER_BETA = 8.6


def resample(audio: AudioClip, target_rate_hz: int) -> AudioClip:
    """Band-limited resampling with a Kaiser-windowed sinc kernel.

    The kernel keeps 64 zero crossings on each side (widened by the
    decimation factor when downsampling, where the cutoff drops to the
    target Nyquist). Output length is ``round(n * target / source)``.
    """
    if target_rate_hz <= 0:
        raise InvalidArgumentError("target rate must be positive")
    src_rate = audio.sample_rate_hz
    if target_rate_hz == src_rate:
        return audio
    x = audio.samples
    n_in = len(x)
    n_out = int(np.floor(n_in * target_rate_hz / src_rate + 0.5))
    if n_in == 0 or n_out == 0:
        return AudioClip(np.zeros(0), target_rate_hz)

    ratio = target_rate_hz / src_rate
    cutoff = min(1.0, ratio)  # relative to the source Nyquist
    support = _SINC_HALF_WIDTH / cutoff  # kernel half-width in source samples
    width = int(np.floor(2 * support)) + 2
    pad = int(np.ceil(support)) + 1
    xp = np.concatenate([np.zeros(pad), x, np.zeros(pad + 1)])
    i0_beta = np.i0(_KAISER_BETA)

    y = np.empty(n_out)
    chunk = 16384
    offsets = np.arange(width)
    for lo in range(0, n_out, chunk):
        hi = min(lo + chunk, n_out)
        t = np.arange(lo, hi) * (src_rate / target_rate_hz)
        kmin = np.ceil(t - support).astype(np.int64)
        u = t[:, None] - (kmin[:, None] + offsets[None, :])
        frac = u / support
        inside = np.abs(frac) < 1.0
        window = np.where(
            inside, np.i0(_KAISER_BETA * np.sqrt(np.maximum(0.0, 1.0 - frac**2))), 0.0
        ) / i0_beta
        h = cutoff * np.sinc(cutoff * u) * window
        h /= h.sum(axis=1, keepdims=True)  # unit DC gain per output sample
        y[lo:hi] = np.einsum("ij,ij->i", h, xp[kmin[:, None] + offsets[None, :] + pad])
    return AudioClip(y, target_rate_hz)


# ---------------------------------------------------------------------------
# MFCC
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MfccConfig:
    """MFCC extraction settings.

    Per frame: symmetric Hann window, power spectrum on the next power-of-two
    FFT, triangular mel filterbank spanning 0..Nyquist, log with an absolute
    floor, orthonormal DCT-II, first ``n_coeffs`` coefficients kept.
    """

    n_coeffs: int = 24
    win_ms: float = 30.0
    hop_ms: float = 10.0
    n_mels: int = 40
    log_floor: float = 1e-10

    def __post_init__(self):
        if self.n_coeffs < 1 or self.n_mels < self.n_coeffs:
            raise InvalidArgumentError("need 1 <= n_coeffs <= n_mels")
        if self.win_ms <= 0 or self.hop_ms <= 0:
            raise InvalidArgumentError("window and hop must be positive")


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(n_mels: int, n_fft: int, sample_rate_hz: int) -> np.ndarray:
    """Triangular filters (n_mels x n_fft//2+1), unit peak, mel-spaced edges."""
    bin_hz = np.arange(n_fft // 2 + 1) * sample_rate_hz / n_fft
    edges = mel_to_hz(np.linspace(0.0, hz_to_mel(sample_rate_hz / 2.0), n_mels + 2))
    lower = edges[:-2, None]
    center = edges[1:-1, None]
    upper = edges[2:, None]
    rising = (bin_hz[None, :] - lower) / (center - lower)
    falling = (upper - bin_hz[None, :]) / (upper - center)
    return np.maximum(0.0, np.minimum(rising, falling))


def hann_window(length: int) -> np.ndarray:
    """Symmetric Hann window, w[n] = 0.5 - 0.5 cos(2 pi n / (N - 1))."""
    if length < 2:
        raise InvalidArgumentError("window needs at least 2 samples")
    n = np.arange(length)
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * n / (length - 1))


def frame_count(n_samples: int, win: int, hop: int) -> int:
    if n_samples < win:
        raise InvalidArgumentError(
            f"audio shorter than one window ({n_samples} < {win} samples)"
        )
    return (n_samples - win) // hop + 1


def extract_mfcc(audio: AudioClip, config: MfccConfig = MfccConfig()) -> FrameMatrix:
    """Mel-frequency cepstral coefficients, one row per analysis frame."""
    sr = audio.sample_rate_hz
    win = int(round(config.win_ms * sr / 1000.0))
    hop = int(round(config.hop_ms * sr / 1000.0))
    n = frame_count(len(audio.samples), win, hop)
    n_fft = 1
    while n_fft < win:
        n_fft *= 2

    idx = hop * np.arange(n)[:, None] + np.arange(win)[None, :]
    frames = audio.samples[idx] * hann_window(win)[None, :]
    power = np.abs(np.fft.rfft(frames, n=n_fft, axis=1)) ** 2
    mel_energy = power @ mel_filterbank(config.n_mels, n_fft, sr).T
    log_mel = np.log(np.maximum(mel_energy, config.log_floor))
    coeffs = scipy.fft.dct(log_mel, type=2, norm="ortho", axis=1)[:, : config.n_coeffs]
    return FrameMatrix(coeffs, config.hop_ms, config.win_ms)


# ---------------------------------------------------------------------------
# Per-segment summaries
# ---------------------------------------------------------------------------


def _segment_mean_std(
    start_ms: np.ndarray, rows: np.ndarray, timeline: SegmentTimeline
) -> np.ndarray:
    """Per-segment mean and population std of rows binned by start time.

    Segments without any row repeat the previous populated segment's summary
    (zeros if there is none), which keeps T equal to the annotation length
    when the signal falls slightly short of the timeline tail.
    """
    n_seg = timeline.n_segments
    seg = np.floor(start_ms / timeline.segment_ms).astype(np.int64)
    keep = (seg >= 0) & (seg < n_seg)
    seg, rows = seg[keep], rows[keep]
    if len(seg) == 0:
        raise InvalidArgumentError("no rows fall inside the timeline")

    dim = rows.shape[1]
    counts = np.bincount(seg, minlength=n_seg).astype(np.float64)
    sums = np.zeros((n_seg, dim))
    np.add.at(sums, seg, rows)
    populated = counts > 0
    mean = np.zeros((n_seg, dim))
    mean[populated] = sums[populated] / counts[populated, None]

    sq = np.zeros((n_seg, dim))
    np.add.at(sq, seg, (rows - mean[seg]) ** 2)
    std = np.zeros((n_seg, dim))
    std[populated] = np.sqrt(sq[populated] / counts[populated, None])

    out = np.concatenate([mean, std], axis=1)
    last = None
    for t in range(n_seg):
        if populated[t]:
            last = t
        elif last is not None:
            out[t] = out[last]
    return out


def summarize_segments(
    frames: FrameMatrix, timeline: SegmentTimeline, feature_set: str = "mfcc-stats"
) -> FeatureMatrix:
    """Summarize frame features per emotional segment as mean + std.

    A frame belongs to the segment containing its start time; the output has
    2x the frame feature dimension.
    """
    starts = np.arange(frames.frames.shape[0]) * frames.frame_hop_ms
    rows = _segment_mean_std(starts, frames.frames, timeline)
    return FeatureMatrix(feature_set, rows, timeline)


def ingest_lld_csv(
    path: str | Path, timeline: SegmentTimeline, feature_set: str = "egemaps-stats"
) -> FeatureMatrix:
    """Ingest externally computed low-level descriptors and summarize them.

    Expected CSV: header ``time_ms,v1,...,vK`` and time-sorted rows; the
    result is the per-segment mean + std of the K descriptors (D = 2K).
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[0] != "time_ms" or len(header) < 2:
            raise SchemaError(f"{path}: expected header 'time_ms,v1,...'")
        n_cols = len(header)
        times, rows = [], []
        prev_time = None
        for lineno, row in enumerate(reader, start=2):
            if len(row) != n_cols:
                raise SchemaError(
                    f"{path}: row {lineno}: expected {n_cols} columns, "
                    f"got {len(row)}"
                )
            try:
                t = float(row[0])
                vals = [float(v) for v in row[1:]]
            except ValueError as exc:
                raise SchemaError(f"{path}: row {lineno}: {exc}") from exc
            if not np.isfinite(t) or not all(np.isfinite(v) for v in vals):
                raise SchemaError(f"{path}: row {lineno}: non-finite value")
            if t < 0:
                raise SchemaError(f"{path}: row {lineno}: negative time_ms")
            if prev_time is not None and t < prev_time:
                raise SchemaError(f"{path}: row {lineno}: time_ms not sorted")
            prev_time = t
            times.append(t)
            rows.append(vals)
    if not rows:
        raise SchemaError(f"{path}: no descriptor rows")
    summary = _segment_mean_std(np.array(times), np.array(rows), timeline)
    return FeatureMatrix(feature_set, summary, timeline)


def append_speaker_flag(
    features: FeatureMatrix, turns: SpeakerTurns
) -> FeatureMatrix:
    """Append a binary column marking segments with >= 50% speaker activity."""
    timeline = features.timeline
    seg_ms = timeline.segment_ms
    overlap = np.zeros(timeline.n_segments)
    for start, end in turns.intervals:
        first = max(0, start // seg_ms)
        last = min(timeline.n_segments - 1, (end - 1) // seg_ms)
        for t in range(first, last + 1):
            seg_start, seg_end = timeline.segment_bounds(t)
            overlap[t] += max(0, min(end, seg_end) - max(start, seg_start))
    flag = (overlap >= 0.5 * seg_ms).astype(np.float64)
    rows = np.concatenate([features.rows, flag[:, None]], axis=1)
    return FeatureMatrix(f"{features.feature_set}+speaker", rows, timeline)


# ---------------------------------------------------------------------------
# FEA1 feature cache
# ---------------------------------------------------------------------------


def write_feature_cache(path: str | Path, features: FeatureMatrix) -> None:
    t, d = features.rows.shape
    name = features.feature_set.encode("utf-8")
    if len(name) > 0xFFFF:
        raise InvalidArgumentError("feature_set name too long")
    payload = b"".join(
        [
            _FEA_MAGIC,
            struct.pack("<II", d, t),
            struct.pack("<d", float(features.timeline.segment_ms)),
            features.rows.astype("<f4").tobytes(),
            struct.pack("<H", len(name)),
            name,
        ]
    )
    Path(path).write_bytes(payload)


def read_feature_cache(path: str | Path, conversation_id: str) -> FeatureMatrix:
    path = Path(path)
    data = path.read_bytes()
    if len(data) < 4 or data[:4] != _FEA_MAGIC:
        raise FormatError(f"{path}: bad magic at byte 0")
    if len(data) < 20:
        raise FormatError(f"{path}: truncated header at byte {len(data)}")
    d, t = struct.unpack_from("<II", data, 4)
    (segment_ms,) = struct.unpack_from("<d", data, 12)
    if d < 1 or t < 1:
        raise FormatError(f"{path}: invalid dimensions {t}x{d}")
    if segment_ms <= 0 or segment_ms != int(segment_ms):
        raise FormatError(f"{path}: invalid segment_ms {segment_ms}")
    body = 20
    need = body + 4 * d * t + 2
    if len(data) < need:
        raise FormatError(f"{path}: truncated payload at byte {len(data)}")
    rows = np.frombuffer(data, dtype="<f4", count=d * t, offset=body)
    if not np.all(np.isfinite(rows)):
        bad = int(np.flatnonzero(~np.isfinite(rows))[0])
        raise FormatError(f"{path}: non-finite value at byte {body + 4 * bad}")
    (name_len,) = struct.unpack_from("<H", data, body + 4 * d * t)
    name_off = body + 4 * d * t + 2
    if len(data) != name_off + name_len:
        raise FormatError(f"{path}: trailing or missing bytes at byte {name_off}")
    feature_set = data[name_off:].decode("utf-8")
    timeline = SegmentTimeline(conversation_id, int(segment_ms), t)
    return FeatureMatrix(
        feature_set, rows.astype(np.float64).reshape(t, d), timeline
    )
