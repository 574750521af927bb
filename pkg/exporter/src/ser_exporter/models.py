"""Model registry.

Two families of model identifiers are resolvable:

* ``test-acoustic[-<dim>]`` / ``test-linguistic[-<dim>]``: deterministic,
  dependency-free stand-ins whose outputs are fixed functions of the input.
  They exist so the export pipeline and the interchange formats can be
  exercised end to end on any machine; dims default to 512 and 768.

* ``hf-acoustic:<name-or-path>`` / ``hf-text:<name-or-path>``: adapters for
  pre-trained checkpoints served by the torch/transformers runtime (e.g. a
  wav2vec-style speech encoder or a camemBERT-style masked language model).
  They are imported lazily; a missing runtime or checkpoint produces a
  ModelError naming the identifier.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .errors import ModelError


@dataclass(frozen=True)
class AcousticModel:
    """Frame-level speech embedder."""

    identifier: str
    dim: int
    frame_period_ms: float
    expected_rate_hz: int
    _embed: callable

    def embed(self, samples: np.ndarray) -> np.ndarray:
        return self._embed(samples)


@dataclass(frozen=True)
class LinguisticModel:
    """Sub-word text embedder."""

    identifier: str
    dim: int
    _embed: callable

    def embed_subwords(self, token: str) -> list[tuple[str, np.ndarray]]:
        return self._embed(token)


def _seeded_matrix(identifier: str, rows: int, cols: int) -> np.ndarray:
    digest = hashlib.sha256(identifier.encode("utf-8")).digest()
    seed = int.from_bytes(digest[:8], "little")
    rng = np.random.Generator(np.random.Philox(seed))
    return rng.normal(0.0, 1.0, (rows, cols))


_TEST_WIN_MS = 30.0
_TEST_STATS = 6


def _test_acoustic(identifier: str, dim: int) -> AcousticModel:
    rate = 16_000
    period_ms = 10.0
    win = int(_TEST_WIN_MS * rate / 1000.0)
    hop = int(period_ms * rate / 1000.0)
    projection = _seeded_matrix(identifier, dim, _TEST_STATS)

    def embed(samples: np.ndarray) -> np.ndarray:
        if len(samples) < win:
            raise ModelError(
                f"{identifier}: input shorter than one analysis window"
            )
        n = (len(samples) - win) // hop + 1
        idx = hop * np.arange(n)[:, None] + np.arange(win)[None, :]
        frames = samples[idx]
        stats = np.stack(
            [
                frames.mean(axis=1),
                frames.std(axis=1),
                np.sqrt((frames**2).mean(axis=1)),
                np.abs(frames).mean(axis=1),
                np.abs(np.diff(np.sign(frames), axis=1)).mean(axis=1),
                frames.max(axis=1) - frames.min(axis=1),
            ],
            axis=1,
        )
        return np.tanh(stats @ projection.T)

    return AcousticModel(identifier, dim, period_ms, rate, embed)


def _test_linguistic(identifier: str, dim: int) -> LinguisticModel:
    def embed(token: str) -> list[tuple[str, np.ndarray]]:
        pieces = [token[i : i + 3] for i in range(0, len(token), 3)] or [token]
        out = []
        for piece in pieces:
            digest = hashlib.sha256(
                f"{identifier}:{piece}".encode("utf-8")
            ).digest()
            rng = np.random.Generator(
                np.random.Philox(int.from_bytes(digest[:8], "little"))
            )
            out.append((piece, rng.normal(0.0, 1.0, dim)))
        return out

    return LinguisticModel(identifier, dim, embed)


def _hf_acoustic(identifier: str, ref: str) -> AcousticModel:
    try:
        import torch
        from transformers import AutoModel
    except ImportError as exc:
        raise ModelError(
            f"{identifier}: the torch/transformers runtime is not installed"
        ) from exc
    try:
        model = AutoModel.from_pretrained(ref)
    except Exception as exc:
        raise ModelError(f"{identifier}: cannot load checkpoint ({exc})") from exc
    model.eval()
    dim = int(model.config.hidden_size)

    def embed(samples: np.ndarray) -> np.ndarray:
        with torch.no_grad():
            batch = torch.from_numpy(samples[None, :].astype("float32"))
            hidden = model(batch).last_hidden_state[0]
        return hidden.numpy().astype(np.float64)

    # wav2vec2-style encoders emit one vector every 20 ms at 16 kHz.
    return AcousticModel(identifier, dim, 20.0, 16_000, embed)


def _hf_text(identifier: str, ref: str) -> LinguisticModel:
    try:
        import torch
        from transformers import AutoModel, AutoTokenizer
    except ImportError as exc:
        raise ModelError(
            f"{identifier}: the torch/transformers runtime is not installed"
        ) from exc
    try:
        tokenizer = AutoTokenizer.from_pretrained(ref)
        model = AutoModel.from_pretrained(ref)
    except Exception as exc:
        raise ModelError(f"{identifier}: cannot load checkpoint ({exc})") from exc
    model.eval()
    dim = int(model.config.hidden_size)

    def embed(token: str) -> list[tuple[str, np.ndarray]]:
        encoded = tokenizer(token, return_tensors="pt", add_special_tokens=False)
        with torch.no_grad():
            hidden = model(**encoded).last_hidden_state[0]
        pieces = tokenizer.convert_ids_to_tokens(encoded["input_ids"][0])
        vectors = hidden.numpy().astype(np.float64)
        if len(pieces) == 0:
            raise ModelError(f"{identifier}: tokenizer produced no sub-words "
                             f"for token {token!r}")
        return list(zip(pieces, vectors))

    return LinguisticModel(identifier, dim, embed)


def _parse_test_dim(identifier: str, prefix: str, default: int) -> int | None:
    if identifier == prefix:
        return default
    if identifier.startswith(prefix + "-"):
        suffix = identifier[len(prefix) + 1 :]
        if suffix.isdigit() and int(suffix) > 0:
            return int(suffix)
    return None


def load_acoustic_model(identifier: str) -> AcousticModel:
    dim = _parse_test_dim(identifier, "test-acoustic", 512)
    if dim is not None:
        return _test_acoustic(identifier, dim)
    if identifier.startswith("hf-acoustic:"):
        return _hf_acoustic(identifier, identifier.split(":", 1)[1])
    raise ModelError(f"{identifier}: unknown acoustic model identifier")


def load_linguistic_model(identifier: str) -> LinguisticModel:
    dim = _parse_test_dim(identifier, "test-linguistic", 768)
    if dim is not None:
        return _test_linguistic(identifier, dim)
    if identifier.startswith("hf-text:"):
        return _hf_text(identifier, identifier.split(":", 1)[1])
    raise ModelError(f"{identifier}: unknown linguistic model identifier")
