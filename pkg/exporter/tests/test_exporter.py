"""Exporter conformance: everything written here must parse in the consuming
toolkit's reader with the declared dimensions and counts."""

import json
import wave

import numpy as np
import pytest

from ser_exporter.cli import main_acoustic, main_linguistic
from ser_exporter.errors import InputError, ModelError
from ser_exporter.export import ExportJob, export_acoustic, export_linguistic
from ser_exporter.models import load_acoustic_model, load_linguistic_model

from serkit.align import (
    EmbeddingFrames,
    TimedEmbeddingSet,
    average_frames_to_segments,
    read_embedding_file,
)
from serkit.core import build_timeline


def _write_wav(path, samples, rate=16000):
    data = np.clip(np.asarray(samples), -1, 1)
    pcm = np.round(data * 32767.0).astype("<i2").tobytes()
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(rate)
        wf.writeframes(pcm)


def _tone_wav(path, seconds=1.0, rate=16000, freq=440.0):
    t = np.arange(int(seconds * rate)) / rate
    _write_wav(path, 0.4 * np.sin(2 * np.pi * freq * t), rate)


@pytest.fixture
def wav_path(tmp_path):
    path = tmp_path / "in.wav"
    _tone_wav(path)
    return path


# ---------------------------------------------------------------------------
# Acoustic export
# ---------------------------------------------------------------------------


def test_acoustic_export_declares_512(tmp_path, wav_path):
    out = tmp_path / "a.emb"
    export_acoustic(ExportJob(str(wav_path), "test-acoustic", str(out)))
    frames = read_embedding_file(out)
    assert isinstance(frames, EmbeddingFrames)
    assert frames.vectors.shape[1] == 512
    assert frames.frame_period_ms == 10.0


def test_acoustic_frame_count_matches_period(tmp_path, wav_path):
    out = tmp_path / "a.emb"
    export_acoustic(ExportJob(str(wav_path), "test-acoustic", str(out)))
    frames = read_embedding_file(out)
    n = frames.vectors.shape[0]
    # 1 s at a 10 ms frame period: about 100 frames, header-consistent.
    assert 90 <= n <= 100
    last_start = frames.start_offset_ms + (n - 1) * frames.frame_period_ms
    assert last_start < 1000.0


def test_acoustic_export_resamples_8k_input(tmp_path):
    path = tmp_path / "in8k.wav"
    t = np.arange(8000) / 8000.0
    _write_wav(path, 0.4 * np.sin(2 * np.pi * 440 * t), rate=8000)
    out = tmp_path / "a.emb"
    export_acoustic(ExportJob(str(path), "test-acoustic", str(out)))
    frames = read_embedding_file(out)
    assert 90 <= frames.vectors.shape[0] <= 100  # still one second of frames


def test_acoustic_export_deterministic(tmp_path, wav_path):
    out1 = tmp_path / "a1.emb"
    out2 = tmp_path / "a2.emb"
    export_acoustic(ExportJob(str(wav_path), "test-acoustic", str(out1)))
    export_acoustic(ExportJob(str(wav_path), "test-acoustic", str(out2)))
    assert out1.read_bytes() == out2.read_bytes()


def test_acoustic_segment_average_matches_oracle(tmp_path, wav_path):
    out = tmp_path / "a.emb"
    export_acoustic(ExportJob(str(wav_path), "test-acoustic-16", str(out)))
    frames = read_embedding_file(out)
    timeline = build_timeline(1000, 250, "c")
    fm = average_frames_to_segments(frames, timeline)
    starts = frames.start_offset_ms + np.arange(len(frames.vectors)) * (
        frames.frame_period_ms
    )
    for t in range(timeline.n_segments):
        members = frames.vectors[
            (starts >= t * 250) & (starts < (t + 1) * 250)
        ].astype(np.float64)
        assert len(members) > 0
        assert np.max(np.abs(fm.rows[t] - members.mean(axis=0))) < 1e-6


def test_acoustic_unknown_model(tmp_path, wav_path):
    with pytest.raises(ModelError, match="wav2vec-nonexistent"):
        export_acoustic(ExportJob(str(wav_path), "wav2vec-nonexistent", str(tmp_path / "x.emb")))


def test_acoustic_rate_mismatch_diagnostic(tmp_path, wav_path):
    job = ExportJob(str(wav_path), "test-acoustic", str(tmp_path / "x.emb"), 8000)
    with pytest.raises(InputError, match="16000"):
        export_acoustic(job)


# ---------------------------------------------------------------------------
# Linguistic export
# ---------------------------------------------------------------------------


def _transcript(tmp_path, words):
    path = tmp_path / "transcript.json"
    path.write_text(json.dumps(words))
    return path


def test_linguistic_export_declares_768(tmp_path):
    path = _transcript(
        tmp_path, [{"token": "bonjour", "start_ms": 0, "end_ms": 500}]
    )
    out = tmp_path / "t.temb"
    export_linguistic(ExportJob(str(path), "test-linguistic", str(out)))
    items = read_embedding_file(out)
    assert isinstance(items, TimedEmbeddingSet)
    assert items.dim == 768


def test_subwords_inherit_parent_span(tmp_path):
    # 9 characters split into chunks of 3: exactly 3 sub-words, one span.
    path = _transcript(
        tmp_path, [{"token": "satisfait", "start_ms": 120, "end_ms": 680}]
    )
    out = tmp_path / "t.temb"
    export_linguistic(ExportJob(str(path), "test-linguistic", str(out)))
    items = read_embedding_file(out)
    assert len(items.items) == 3
    for item in items.items:
        assert (item.start_ms, item.end_ms) == (120, 680)
    # Distinct sub-words carry distinct vectors.
    assert not np.array_equal(items.items[0].vector, items.items[1].vector)


def test_empty_transcript_yields_empty_temb(tmp_path):
    path = _transcript(tmp_path, [])
    out = tmp_path / "t.temb"
    export_linguistic(ExportJob(str(path), "test-linguistic", str(out)))
    items = read_embedding_file(out)
    assert items.dim == 768
    assert items.items == ()


def test_linguistic_export_deterministic(tmp_path):
    path = _transcript(
        tmp_path,
        [
            {"token": "tres", "start_ms": 0, "end_ms": 300},
            {"token": "satisfait", "start_ms": 300, "end_ms": 900},
        ],
    )
    out1, out2 = tmp_path / "t1.temb", tmp_path / "t2.temb"
    export_linguistic(ExportJob(str(path), "test-linguistic", str(out1)))
    export_linguistic(ExportJob(str(path), "test-linguistic", str(out2)))
    assert out1.read_bytes() == out2.read_bytes()


def test_bad_transcript_rejected(tmp_path):
    path = _transcript(tmp_path, [{"token": "x", "start_ms": 10, "end_ms": 10}])
    with pytest.raises(InputError, match="entry 0"):
        export_linguistic(ExportJob(str(path), "test-linguistic", str(tmp_path / "x.temb")))


# ---------------------------------------------------------------------------
# CLI
# ---------------------------------------------------------------------------


def test_cli_acoustic(tmp_path, wav_path, capsys):
    out = tmp_path / "cli.emb"
    code = main_acoustic(
        ["--wav", str(wav_path), "--model", "test-acoustic-32", "--out", str(out)]
    )
    assert code == 0
    assert read_embedding_file(out).vectors.shape[1] == 32


def test_cli_linguistic(tmp_path, capsys):
    transcript = _transcript(
        tmp_path, [{"token": "merci", "start_ms": 0, "end_ms": 400}]
    )
    out = tmp_path / "cli.temb"
    code = main_linguistic(
        ["--transcript", str(transcript), "--model", "test-linguistic-24", "--out", str(out)]
    )
    assert code == 0
    assert read_embedding_file(out).dim == 24


def test_cli_reports_model_error(tmp_path, wav_path, capsys):
    code = main_acoustic(
        ["--wav", str(wav_path), "--model", "bogus", "--out", str(tmp_path / "x.emb")]
    )
    assert code == 2
    assert "bogus" in capsys.readouterr().err


# ---------------------------------------------------------------------------
# Acceptance ([SECONDARY] exporter conformance)
# ---------------------------------------------------------------------------


def test_acceptance_exporter_conformance(tmp_path):
    # EMB1 with the declared 512 dims and a consistent count parses in the
    # primary reader.
    wav = tmp_path / "in.wav"
    _tone_wav(wav, seconds=0.8)
    emb = tmp_path / "a.emb"
    export_acoustic(ExportJob(str(wav), "test-acoustic", str(emb)))
    frames = read_embedding_file(emb)
    assert frames.vectors.shape == (78, 512)  # floor((12800-480)/160)+1

    # TEMB with the declared 768 dims parses, and a 3-sub-word word shares
    # one inherited span.
    transcript = _transcript(
        tmp_path, [{"token": "formidable", "start_ms": 0, "end_ms": 600}]
    )
    temb = tmp_path / "t.temb"
    export_linguistic(ExportJob(str(transcript), "test-linguistic", str(temb)))
    items = read_embedding_file(temb)
    assert items.dim == 768
    assert len(items.items) == 4  # 10 characters in chunks of 3
    spans = {(i.start_ms, i.end_ms) for i in items.items}
    assert spans == {(0, 600)}

    three = _transcript(
        tmp_path, [{"token": "satisfait", "start_ms": 50, "end_ms": 450}]
    )
    temb3 = tmp_path / "t3.temb"
    export_linguistic(ExportJob(str(three), "test-linguistic", str(temb3)))
    sub = read_embedding_file(temb3)
    assert len(sub.items) == 3
    assert {(i.start_ms, i.end_ms) for i in sub.items} == {(50, 450)}

    # Primary-side segment averaging equals an oracle average of the raw
    # frames within 1e-6.
    timeline = build_timeline(800, 250, "c")
    fm = average_frames_to_segments(frames, timeline)
    starts = frames.start_offset_ms + np.arange(len(frames.vectors)) * (
        frames.frame_period_ms
    )
    for t in range(timeline.n_segments):
        members = frames.vectors[(starts >= t * 250) & (starts < (t + 1) * 250)]
        assert np.max(np.abs(fm.rows[t] - members.astype(np.float64).mean(axis=0))) < 1e-6
    print("ACCEPTANCE PASS  exporter-conformance")
